#include "record/keypoints.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "record/error.hpp"
#include "record/hash.hpp"

namespace record {

namespace {

constexpr std::array<const char*, kPoseKeypointCount> kNames = {
    "nose",          "left_eye_inner", "left_eye",        "left_eye_outer",   "right_eye_inner", "right_eye",
    "right_eye_outer", "left_ear",     "right_ear",       "mouth_left",       "mouth_right",     "left_shoulder",
    "right_shoulder", "left_elbow",    "right_elbow",     "left_wrist",       "right_wrist",     "left_pinky",
    "right_pinky",   "left_index",     "right_index",     "left_thumb",       "right_thumb",     "left_hip",
    "right_hip",     "left_knee",      "right_knee",      "left_ankle",       "right_ankle",     "left_heel",
    "right_heel",    "left_foot_index", "right_foot_index"};

// Standing figure facing the viewer, in a unit frame (subject's left = +x).
constexpr std::array<std::array<double, 2>, kPoseKeypointCount> kTemplate = {{
    {0.50, 0.06}, {0.53, 0.04}, {0.55, 0.04}, {0.57, 0.04}, {0.47, 0.04}, {0.45, 0.04}, {0.43, 0.04},
    {0.60, 0.06}, {0.40, 0.06}, {0.53, 0.09}, {0.47, 0.09}, {0.68, 0.20}, {0.32, 0.20}, {0.78, 0.36},
    {0.22, 0.36}, {0.84, 0.50}, {0.16, 0.50}, {0.86, 0.53}, {0.14, 0.53}, {0.85, 0.54}, {0.15, 0.54},
    {0.82, 0.52}, {0.18, 0.52}, {0.60, 0.52}, {0.40, 0.52}, {0.61, 0.74}, {0.39, 0.74}, {0.62, 0.94},
    {0.38, 0.94}, {0.61, 0.97}, {0.39, 0.97}, {0.66, 0.99}, {0.34, 0.99},
}};

double cross(const Keypoint& o, const Keypoint& a, const Keypoint& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

const std::array<const char*, kPoseKeypointCount>& keypoint_names() { return kNames; }

void PoseKeypoints::validate() const {
    if (points.size() != kPoseKeypointCount)
        throw ShapeMismatch("pose has " + std::to_string(points.size()) + " keypoints, expected 33");
    for (const auto& p : points)
        if (p.valid && !(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
            throw ValueOutOfRange("valid keypoint outside the unit square");
}

std::size_t PoseKeypoints::valid_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const Keypoint& k) { return k.valid; }));
}

std::string serialize_keypoints(const PoseKeypoints& p) {
    p.validate();
    std::string out;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
        out += kNames[i];
        if (p.points[i].valid) {
            char buf[64];
            std::snprintf(buf, sizeof buf, " %.17g %.17g\n", p.points[i].x, p.points[i].y);
            out += buf;
        } else {
            out += " - -\n";
        }
    }
    return out;
}

PoseKeypoints parse_keypoints(std::string_view text, std::string source) {
    PoseKeypoints p;
    p.source = std::move(source);
    std::istringstream is{std::string(text)};
    for (std::string line; std::getline(is, line);) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string name, xs, ys;
        if (!(ls >> name >> xs >> ys)) throw ShapeMismatch("keypoint line '" + line + "' needs name x y");
        if (p.points.size() >= kPoseKeypointCount || name != kNames[p.points.size()])
            throw ShapeMismatch("unexpected keypoint '" + name + "'");
        Keypoint k;
        if (xs != "-") {
            k.x = std::stod(xs);
            k.y = std::stod(ys);
            k.valid = true;
        }
        p.points.push_back(k);
    }
    p.validate();
    return p;
}

PoseKeypoints TemplateKeypointDetector::detect(const Image& image) const {
    if (image.empty()) throw NoHumanDetected("empty image");
    const int w = image.width, h = image.height;
    std::vector<double> lum(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (int c = 0; c < image.channels; ++c) v += image.at(x, y, c);
            lum[static_cast<std::size_t>(y) * w + x] = v / image.channels;
        }
    std::vector<double> sorted = lum;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    for (double& v : lum) v = std::abs(v - median);

    std::vector<std::uint8_t> levels;
    try {
        levels = quantize_levels(lum);
    } catch (const DegenerateMap&) {
        throw NoHumanDetected("uniform image");
    }
    std::array<std::uint64_t, 256> hist{};
    for (auto l : levels) ++hist[l];
    const int t = otsu_threshold(hist);
    std::vector<bool> mask(levels.size());
    for (std::size_t i = 0; i < levels.size(); ++i) mask[i] = levels[i] > t;
    const auto cells = largest_component(mask, w, h);
    if (cells.size() < 4) throw NoHumanDetected("no foreground region large enough for a figure");

    int x0 = w, x1 = -1, y0 = h, y1 = -1;
    for (auto i : cells) {
        const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    }
    const double bx0 = static_cast<double>(x0) / w, bx1 = static_cast<double>(x1 + 1) / w;
    const double by0 = static_cast<double>(y0) / h, by1 = static_cast<double>(y1 + 1) / h;

    PoseKeypoints p;
    p.source = name();
    p.points.reserve(kPoseKeypointCount);
    for (const auto& [tx, ty] : kTemplate) p.points.push_back({bx0 + tx * (bx1 - bx0), by0 + ty * (by1 - by0), true});
    p.validate();
    return p;
}

FixtureKeypointDetector::FixtureKeypointDetector(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string FixtureKeypointDetector::image_key(const Image& image) {
    const auto bytes = image.to_bytes();
    return sha256_hex(std::span<const std::uint8_t>(bytes));
}

void FixtureKeypointDetector::add(const Image& image, PoseKeypoints points) {
    points.validate();
    table_[image_key(image)] = std::move(points);
}

PoseKeypoints FixtureKeypointDetector::detect(const Image& image) const {
    const std::string key = image_key(image);
    if (auto it = table_.find(key); it != table_.end()) return it->second;
    if (!dir_.empty()) {
        std::ifstream is(dir_ / (key + ".txt"));
        if (is) {
            std::stringstream ss;
            ss << is.rdbuf();
            return parse_keypoints(ss.str(), name());
        }
    }
    throw NoHumanDetected("no keypoint annotation for image " + key.substr(0, 12));
}

BoundingBox human_box(const PoseKeypoints& points, double margin) {
    points.validate();
    if (points.valid_count() < 2) throw InsufficientKeypoints("need at least two valid keypoints");
    if (!(margin >= 0.0)) throw ValueOutOfRange("margin must be non-negative");
    double x0 = 1.0, y0 = 1.0, x1 = 0.0, y1 = 0.0;
    for (const auto& k : points.points) {
        if (!k.valid) continue;
        x0 = std::min(x0, k.x);
        y0 = std::min(y0, k.y);
        x1 = std::max(x1, k.x);
        y1 = std::max(y1, k.y);
    }
    BoundingBox b{std::max(0.0, x0 - margin), std::max(0.0, y0 - margin), std::min(1.0, x1 + margin),
                  std::min(1.0, y1 + margin)};
    if (!b.valid()) throw InsufficientKeypoints("valid keypoints span a degenerate box");
    return b;
}

std::vector<double> human_mask(const PoseKeypoints& points, int resolution) {
    points.validate();
    std::vector<Keypoint> pts;
    for (const auto& k : points.points)
        if (k.valid) pts.push_back(k);
    if (pts.size() < 2) throw InsufficientKeypoints("need at least two valid keypoints");

    // Andrew's monotone chain.
    std::sort(pts.begin(), pts.end(), [](const Keypoint& a, const Keypoint& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    std::vector<Keypoint> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k > 1 ? k - 1 : k);

    std::vector<double> mask(static_cast<std::size_t>(resolution) * resolution, 0.0);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            const Keypoint c{(x + 0.5) / resolution, (y + 0.5) / resolution, true};
            bool inside = true;
            if (hull.size() < 3) {
                // Degenerate hull: a segment; accept cells whose centre lies near it.
                const auto& a = hull.front();
                const auto& b = hull.back();
                const double len = std::hypot(b.x - a.x, b.y - a.y);
                inside = len > 0 && std::abs(cross(a, b, c)) / len <= 0.5 / resolution &&
                         c.x >= std::min(a.x, b.x) - 0.5 / resolution && c.x <= std::max(a.x, b.x) + 0.5 / resolution &&
                         c.y >= std::min(a.y, b.y) - 0.5 / resolution && c.y <= std::max(a.y, b.y) + 0.5 / resolution;
            } else {
                for (std::size_t i = 0; i < hull.size() && inside; ++i)
                    inside = cross(hull[i], hull[(i + 1) % hull.size()], c) >= 0;
            }
            if (inside) mask[static_cast<std::size_t>(y) * resolution + x] = 1.0;
        }
    return mask;
}

}  // namespace record
