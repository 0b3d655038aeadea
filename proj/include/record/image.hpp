#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace record {

/// Row-major interleaved image with values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> pixels;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool empty() const noexcept { return pixels.empty(); }

    /// 8-bit quantization: round(clamp(v, 0, 1) * 255).
    std::vector<std::uint8_t> to_bytes() const;
    static Image from_bytes(int w, int h, int c, std::span<const std::uint8_t> bytes);

    friend bool operator==(const Image&, const Image&) = default;
};

// PNG helpers. 8-bit grayscale (channels == 1) or RGB (channels == 3).
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> png);
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Nearest-neighbour upscale by an integer factor.
Image upscale_nearest(const Image& image, int factor);

}  // namespace record
