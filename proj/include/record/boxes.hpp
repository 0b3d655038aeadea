#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace record {

/// Axis-aligned box in normalized image coordinates, origin top-left.
struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 1.0;
    double y_max = 1.0;

    bool valid() const noexcept;
    void validate() const;  // throws InvalidBox
    double area() const noexcept { return (x_max - x_min) * (y_max - y_min); }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

/// needs_correction = IoU(b_o, proposed) < threshold.
bool change_gate(const BoundingBox& extracted, const BoundingBox& proposed, double threshold);

/// "[x_min, y_min, x_max, y_max]" with round-trip-exact numbers.
std::string to_string(const BoundingBox& b);

/// Cells [x0, x1) x [y0, y1) covered by a box at resolution r:
/// x0 = round(x_min * r), x1 = round(x_max * r). Throws BoxTooSmall when empty.
struct CellRange {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    int count() const noexcept { return (x1 - x0) * (y1 - y0); }
};
CellRange rasterize(const BoundingBox& box, int resolution);

/// Per-cell 0/1 indicator of a rasterized box, row-major.
std::vector<double> box_indicator(const BoundingBox& box, int resolution);

// ---- Otsu extraction ------------------------------------------------------------

/// Linear scaling of the map onto levels 0..255 (min -> 0, max -> 255).
/// Throws DegenerateMap when every value is equal.
std::vector<std::uint8_t> quantize_levels(std::span<const double> map);

/// Threshold T maximizing between-class variance of {level <= T} vs
/// {level > T}; ties go to the smallest T. Compared in exact integers.
int otsu_threshold(const std::array<std::uint64_t, 256>& histogram);

/// Cells of the largest 8-connected component of `mask` (ties: the component
/// whose first cell comes first in raster order), in raster order.
std::vector<std::size_t> largest_component(const std::vector<bool>& mask, int width, int height);

/// Tight box (normalized, cell-edge aligned) of the largest component of the
/// Otsu foreground of a square object map.
BoundingBox extract_object_box(std::span<const double> object_map, int resolution);

}  // namespace record
