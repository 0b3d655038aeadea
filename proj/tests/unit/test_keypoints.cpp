#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "record/error.hpp"
#include "record/keypoints.hpp"

namespace fs = std::filesystem;
using namespace record;

namespace {

PoseKeypoints points_at(std::initializer_list<std::pair<double, double>> xy) {
    PoseKeypoints p;
    p.points.assign(kPoseKeypointCount, Keypoint{});
    std::size_t i = 0;
    for (auto [x, y] : xy) p.points[i++] = {x, y, true};
    p.source = "test";
    return p;
}

Image figure_image() {
    Image img(32, 32, 3, 0.2);
    for (int y = 6; y < 28; ++y)
        for (int x = 12; x < 20; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.9;
    return img;
}

}  // namespace

TEST(Keypoints, NamesAndValidation) {
    EXPECT_STREQ(keypoint_names()[0], "nose");
    EXPECT_EQ(keypoint_names().size(), 33u);
    PoseKeypoints p = points_at({{0.5, 0.5}});
    EXPECT_NO_THROW(p.validate());
    EXPECT_EQ(p.valid_count(), 1u);
    p.points[3] = {1.5, 0.5, true};
    EXPECT_THROW(p.validate(), ValueOutOfRange);
    p.points.pop_back();
    EXPECT_THROW(p.validate(), ShapeMismatch);
}

TEST(Keypoints, SerializeRoundTrip) {
    const PoseKeypoints p = points_at({{0.1, 0.2}, {1.0 / 3.0, 0.75}});
    const std::string text = serialize_keypoints(p);
    EXPECT_NE(text.find("nose 0.10000000000000001 0.20000000000000001\n"), std::string::npos);
    EXPECT_NE(text.find(std::string(keypoint_names()[5]) + " - -"), std::string::npos);
    EXPECT_EQ(parse_keypoints(text, "test"), p);
    EXPECT_THROW(parse_keypoints("elbow 0.1 0.1\n", "x"), ShapeMismatch);
}

TEST(HumanBox, MarginAndClamp) {
    const auto b = human_box(points_at({{0.2, 0.3}, {0.6, 0.9}, {0.4, 0.5}}), 0.05);
    EXPECT_NEAR(b.x_min, 0.15, 1e-12);
    EXPECT_NEAR(b.y_min, 0.25, 1e-12);
    EXPECT_NEAR(b.x_max, 0.65, 1e-12);
    EXPECT_NEAR(b.y_max, 0.95, 1e-12);
    const auto c = human_box(points_at({{0.0, 0.0}, {1.0, 1.0}}), 0.1);
    EXPECT_EQ(c, (BoundingBox{0, 0, 1, 1}));
    EXPECT_THROW(human_box(points_at({{0.5, 0.5}}), 0.0), InsufficientKeypoints);
    EXPECT_THROW(human_box(points_at({{0.5, 0.5}, {0.5, 0.5}}), 0.0), InsufficientKeypoints);
}

TEST(HumanMask, HullCells) {
    // Triangle covering the lower-left half of the unit square.
    const auto m = human_mask(points_at({{0.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}}), 4);
    ASSERT_EQ(m.size(), 16u);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) EXPECT_EQ(m[y * 4 + x], (x <= y) ? 1.0 : 0.0) << x << "," << y;
    // Collinear points give a segment; cells whose centres lie on it count.
    const auto seg = human_mask(points_at({{0.125, 0.125}, {0.875, 0.125}}), 4);
    EXPECT_EQ(seg[0] + seg[1] + seg[2] + seg[3], 4.0);
    EXPECT_EQ(seg[4], 0.0);
}

TEST(TemplateDetector, FitsTheForegroundBlob) {
    const auto p = TemplateKeypointDetector().detect(figure_image());
    EXPECT_EQ(p.points.size(), 33u);
    EXPECT_NO_THROW(p.validate());
    const auto b = human_box(p, 0.0);
    EXPECT_GE(b.x_min, 12.0 / 32 - 1e-12);
    EXPECT_LE(b.x_max, 20.0 / 32 + 1e-12);
    EXPECT_GE(b.y_min, 6.0 / 32 - 1e-12);
    EXPECT_LE(b.y_max, 28.0 / 32 + 1e-12);
    EXPECT_EQ(TemplateKeypointDetector().detect(figure_image()), p);
}

TEST(TemplateDetector, UniformImageHasNoHuman) {
    EXPECT_THROW(TemplateKeypointDetector().detect(Image(16, 16, 3, 0.5)), NoHumanDetected);
    EXPECT_THROW(TemplateKeypointDetector().detect(Image()), NoHumanDetected);
}

TEST(FixtureDetector, LookupByImageHash) {
    const fs::path dir = fs::temp_directory_path() / "record_test_kp";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Image img = figure_image();
    const auto pts = points_at({{0.3, 0.3}, {0.6, 0.8}});
    {
        std::ofstream os(dir / (FixtureKeypointDetector::image_key(img) + ".txt"));
        os << serialize_keypoints(pts);
    }
    FixtureKeypointDetector from_dir(dir);
    EXPECT_EQ(from_dir.detect(img).points, pts.points);
    EXPECT_THROW(from_dir.detect(Image(32, 32, 3, 0.1)), NoHumanDetected);

    FixtureKeypointDetector table;
    table.add(img, pts);
    EXPECT_EQ(table.detect(img).points, pts.points);
    EXPECT_EQ(FixtureKeypointDetector::image_key(img).size(), 64u);
}
