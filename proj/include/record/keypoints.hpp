#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "record/boxes.hpp"
#include "record/image.hpp"

namespace record {

inline constexpr std::size_t kPoseKeypointCount = 33;

/// Landmark names in the standard 33-point full-body ordering.
const std::array<const char*, kPoseKeypointCount>& keypoint_names();

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool valid = false;
    friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct PoseKeypoints {
    std::vector<Keypoint> points;  // exactly 33
    std::string source;

    void validate() const;  // throws ShapeMismatch / ValueOutOfRange
    std::size_t valid_count() const noexcept;
    friend bool operator==(const PoseKeypoints&, const PoseKeypoints&) = default;
};

/// One "name x y" line per keypoint; invalid points are written as "name - -".
std::string serialize_keypoints(const PoseKeypoints& p);
PoseKeypoints parse_keypoints(std::string_view text, std::string source);

class KeypointDetector {
public:
    virtual ~KeypointDetector() = default;
    virtual std::string name() const = 0;
    virtual PoseKeypoints detect(const Image& image) const = 0;
};

/// Finds the dominant foreground blob (Otsu on the deviation from the image
/// median luminance) and fits a canonical standing skeleton into its box.
/// A stand-in for a learned landmark detector.
class TemplateKeypointDetector final : public KeypointDetector {
public:
    std::string name() const override { return "template"; }
    PoseKeypoints detect(const Image& image) const override;
};

/// Returns stored annotations keyed by the SHA-256 of the image's 8-bit
/// pixels. Files are `<dir>/<hash>.txt` in the serialize_keypoints format.
class FixtureKeypointDetector final : public KeypointDetector {
public:
    explicit FixtureKeypointDetector(std::filesystem::path dir = {});
    void add(const Image& image, PoseKeypoints points);

    std::string name() const override { return "fixture"; }
    PoseKeypoints detect(const Image& image) const override;

    static std::string image_key(const Image& image);

private:
    std::filesystem::path dir_;
    std::map<std::string, PoseKeypoints> table_;
};

/// Tight box over the valid points, each edge moved outward by `margin`,
/// clamped to [0, 1]. Throws InsufficientKeypoints below two valid points.
BoundingBox human_box(const PoseKeypoints& points, double margin);

/// Convex hull of the valid points rasterized at `resolution` (a cell is in
/// the mask when its centre lies inside or on the hull). Row-major 0/1.
std::vector<double> human_mask(const PoseKeypoints& points, int resolution);

}  // namespace record
