#include "record/boxes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "record/error.hpp"

namespace record {

bool BoundingBox::valid() const noexcept {
    auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
    return in01(x_min) && in01(y_min) && in01(x_max) && in01(y_max) && x_min < x_max && y_min < y_max;
}

void BoundingBox::validate() const {
    if (!valid()) throw InvalidBox("box " + to_string(*this) + " is not a valid normalized box");
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

bool change_gate(const BoundingBox& extracted, const BoundingBox& proposed, double threshold) {
    // Identical boxes are exactly IoU 1; skip the arithmetic so rounding cannot flip the gate.
    if (extracted == proposed) return 1.0 < threshold;
    return iou(extracted, proposed) < threshold;
}

std::string to_string(const BoundingBox& b) {
    auto num = [](double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    return "[" + num(b.x_min) + ", " + num(b.y_min) + ", " + num(b.x_max) + ", " + num(b.y_max) + "]";
}

CellRange rasterize(const BoundingBox& box, int resolution) {
    box.validate();
    auto cell = [resolution](double v) { return static_cast<int>(std::lround(v * resolution)); };
    CellRange c{cell(box.x_min), cell(box.x_max), cell(box.y_min), cell(box.y_max)};
    if (c.x1 <= c.x0 || c.y1 <= c.y0)
        throw BoxTooSmall("box " + to_string(box) + " covers no cell at resolution " + std::to_string(resolution));
    return c;
}

std::vector<double> box_indicator(const BoundingBox& box, int resolution) {
    const CellRange c = rasterize(box, resolution);
    std::vector<double> out(static_cast<std::size_t>(resolution) * resolution, 0.0);
    for (int y = c.y0; y < c.y1; ++y)
        for (int x = c.x0; x < c.x1; ++x) out[static_cast<std::size_t>(y) * resolution + x] = 1.0;
    return out;
}

std::vector<std::uint8_t> quantize_levels(std::span<const double> map) {
    if (map.empty()) throw DegenerateMap("empty map");
    const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw DegenerateMap("map has non-finite values");
    if (!(hi > lo)) throw DegenerateMap("all map values are equal");
    std::vector<std::uint8_t> out(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::clamp(std::lround((map[i] - lo) / (hi - lo) * 255.0), 0L, 255L));
    return out;
}

int otsu_threshold(const std::array<std::uint64_t, 256>& hist) {
    using i128 = __int128;
    i128 total = 0, total_sum = 0;
    for (int l = 0; l < 256; ++l) {
        total += hist[l];
        total_sum += static_cast<i128>(hist[l]) * l;
    }
    // sigma_b^2 * N^2 = (N * s0 - n0 * S)^2 / (n0 * n1); compare the fraction exactly.
    int best = -1;
    i128 best_num = 0, best_den = 1;
    i128 n0 = 0, s0 = 0;
    for (int t = 0; t < 255; ++t) {
        n0 += hist[t];
        s0 += static_cast<i128>(hist[t]) * t;
        const i128 n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const i128 diff = total * s0 - n0 * total_sum;
        const i128 num = diff * diff;
        const i128 den = n0 * n1;
        if (best < 0 || num * best_den > best_num * den) {
            best = t;
            best_num = num;
            best_den = den;
        }
    }
    if (best < 0) throw DegenerateMap("histogram has a single occupied level");
    return best;
}

std::vector<std::size_t> largest_component(const std::vector<bool>& mask, int width, int height) {
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (mask.size() != n) throw ShapeMismatch("mask size does not match grid");
    std::vector<int> label(n, -1);
    std::vector<std::size_t> best, current, stack;
    int next = 0;
    for (std::size_t start = 0; start < n; ++start) {
        if (!mask[start] || label[start] >= 0) continue;
        current.clear();
        stack.assign(1, start);
        label[start] = next;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            current.push_back(i);
            const int x = static_cast<int>(i % width), y = static_cast<int>(i / width);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
                    const std::size_t j = static_cast<std::size_t>(ny) * width + nx;
                    if (mask[j] && label[j] < 0) {
                        label[j] = next;
                        stack.push_back(j);
                    }
                }
        }
        ++next;
        // Components are discovered in raster order of their first cell, so a
        // strict comparison keeps the earliest one on ties.
        if (current.size() > best.size()) best = current;
    }
    std::sort(best.begin(), best.end());
    return best;
}

BoundingBox extract_object_box(std::span<const double> object_map, int resolution) {
    if (resolution < 1 || object_map.size() != static_cast<std::size_t>(resolution) * resolution)
        throw ShapeMismatch("object map is not resolution x resolution");
    for (double v : object_map)
        if (!(v >= 0.0)) throw ValueOutOfRange("object map must be non-negative");
    const auto levels = quantize_levels(object_map);
    std::array<std::uint64_t, 256> hist{};
    for (auto l : levels) ++hist[l];
    const int t = otsu_threshold(hist);
    std::vector<bool> mask(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) mask[i] = levels[i] > t;
    const auto cells = largest_component(mask, resolution, resolution);
    int cmin = resolution, cmax = -1, rmin = resolution, rmax = -1;
    for (auto i : cells) {
        const int x = static_cast<int>(i % resolution), y = static_cast<int>(i / resolution);
        cmin = std::min(cmin, x);
        cmax = std::max(cmax, x);
        rmin = std::min(rmin, y);
        rmax = std::max(rmax, y);
    }
    const double r = resolution;
    return {cmin / r, rmin / r, (cmax + 1) / r, (rmax + 1) / r};
}

}  // namespace record
