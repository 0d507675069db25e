#pragma once

// Vector tiles, their rasterization to gray and categorical images, and the
// patch/mask machinery used by masked tile completion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gnmap {

enum class Category : int { pedestrian_crossing = 0, lane_divider = 1, road_boundary = 2 };

inline constexpr std::array<Category, 3> kAllCategories = {
    Category::pedestrian_crossing, Category::lane_divider, Category::road_boundary};

std::string_view category_name(Category c);
/// "ped", "div", "bou".
std::string_view category_short_name(Category c);
/// Accepts both the long and the short name.
Category category_from_name(std::string_view name);
/// Overlap precedence: pedestrian_crossing (3) > lane_divider (2) > road_boundary (1).
int category_precedence(Category c);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

struct MapElement {
  Category category = Category::lane_divider;
  std::vector<Point2> points;
  bool closed = false;
  bool operator==(const MapElement&) const = default;
};

struct Extent {
  double width_m = 0.0;
  double height_m = 0.0;
  bool operator==(const Extent&) const = default;
};

struct VectorTile {
  std::string tile_id;
  Extent extent;
  std::vector<MapElement> elements;

  /// Throws std::invalid_argument when an invariant is broken: non-positive
  /// extent, an element with fewer than two points, a point outside the
  /// extent, or a crossing that is not closed / a line that is.
  void validate() const;
  bool operator==(const VectorTile&) const = default;
};

struct RasterGeometry {
  int h = 64;
  int w = 64;
  double resolution = 0.25;  // meters per pixel
  bool operator==(const RasterGeometry&) const = default;
};

/// Single-channel image, row-major.
struct GrayRaster {
  int h = 0;
  int w = 0;
  double resolution = 0.0;
  std::vector<double> values;

  GrayRaster() = default;
  GrayRaster(int h_, int w_, double resolution_, double fill = 0.0);

  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * w + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * w + col]; }
  RasterGeometry geometry() const { return {h, w, resolution}; }
  bool operator==(const GrayRaster&) const = default;
};

/// Per-pixel categorical image, row-major with channels innermost.
/// Channel 0 is background.
struct ClassRaster {
  int h = 0;
  int w = 0;
  int c = 0;
  double resolution = 0.0;
  std::vector<double> values;

  ClassRaster() = default;
  ClassRaster(int h_, int w_, int c_, double resolution_);

  double& at(int row, int col, int ch) { return values[index(row, col, ch)]; }
  double at(int row, int col, int ch) const { return values[index(row, col, ch)]; }
  std::span<const double> pixel(int row, int col) const {
    return {values.data() + index(row, col, 0), static_cast<std::size_t>(c)};
  }
  std::size_t index(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * w + col) * c + ch;
  }
  RasterGeometry geometry() const { return {h, w, resolution}; }
  /// Index of the largest channel; the first one wins ties.
  int argmax(int row, int col) const;
  bool operator==(const ClassRaster&) const = default;
};

/// Channel order used throughout: background, then these categories.
inline constexpr std::array<Category, 3> kDefaultCategoryOrder = kAllCategories;

/// Calls visit(row, col) for every cell of an h x w grid whose closed square
/// intersects the segment (cell coordinates: col = x, row = y, unit cells).
/// Cells off the grid are skipped. A cell may be visited more than once only
/// if the segment is degenerate; callers treat visits as idempotent.
template <class Visit>
void supercover_segment(double x0, double y0, double x1, double y1, int h, int w,
                        Visit&& visit);

GrayRaster rasterize_gray(const VectorTile& tile, double resolution, int h, int w);
ClassRaster rasterize_class(const VectorTile& tile, double resolution, int h, int w,
                            std::span<const Category> category_order = kDefaultCategoryOrder);

/// 1 - background channel, i.e. "covered by any element".
GrayRaster foreground(const ClassRaster& raster);

/// Symmetries of the raster grid, numbered 0..7. Bit 2 transposes (square
/// rasters only), bit 1 flips rows, bit 0 flips columns; the source pixel of
/// output (r, c) is found by transposing first, then flipping.
int dihedral_count(int h, int w);
int dihedral_inverse(int t);
GrayRaster dihedral(const GrayRaster& raster, int t);
ClassRaster dihedral(const ClassRaster& raster, int t);

struct PatchGrid {
  int h = 0;
  int w = 0;
  int k = 0;  // patch height
  int l = 0;  // patch width
  /// num_patches() rows of k*l pixels; patches in row-major block order,
  /// pixels row-major within a patch.
  std::vector<double> data;

  int patches_per_row() const { return w / l; }
  int num_patches() const { return (h / k) * (w / l); }
  int patch_size() const { return k * l; }
  std::span<const double> patch(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * patch_size(),
            static_cast<std::size_t>(patch_size())};
  }
};

/// Flat raster index of pixel `offset` (row-major within the patch) of patch `p`.
std::size_t patch_pixel_index(int w, int k, int l, int p, int offset);

PatchGrid split_patches(const GrayRaster& raster, int k, int l);
GrayRaster reassemble(const PatchGrid& grid, double resolution);

struct MaskPlan {
  int num_patches = 0;
  double mask_ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> kept;  // strictly increasing

  std::vector<int> removed() const;
};

/// Number of kept patches: round((1 - ratio) * num_patches).
int kept_count(int num_patches, double mask_ratio);

/// Seeded Fisher-Yates prefix: the first kept_count() positions of a partial
/// shuffle of 0..n-1, sorted. Throws std::invalid_argument for ratio outside
/// [0, 1) or num_patches < 1.
MaskPlan sample_mask(int num_patches, double mask_ratio, std::uint64_t seed);

struct VisiblePatches {
  int patch_size = 0;
  std::vector<int> indices;  // same as plan.kept
  std::vector<double> data;  // indices.size() rows of patch_size
};

VisiblePatches apply_mask(const PatchGrid& grid, const MaskPlan& plan);

/// Writes visible patches into a zero canvas of the grid's geometry.
PatchGrid scatter_visible(const VisiblePatches& visible, int h, int w, int k, int l);

// ---------------------------------------------------------------------------

template <class Visit>
void supercover_segment(double x0, double y0, double x1, double y1, int h, int w,
                        Visit&& visit) {
  if (x1 < x0) {
    std::swap(x0, x1);
    std::swap(y0, y1);
  }
  const bool vertical = (x1 == x0);
  auto y_at = [&](double x) {
    if (vertical || x == x0) return y0;
    if (x == x1) return y1;
    return y0 + (y1 - y0) * ((x - x0) / (x1 - x0));
  };
  const long jlo = std::max<long>(0, static_cast<long>(std::ceil(x0)) - 1);
  const long jhi = std::min<long>(w - 1, static_cast<long>(std::floor(x1)));
  for (long j = jlo; j <= jhi; ++j) {
    const double a = std::max(static_cast<double>(j), x0);
    const double b = std::min(static_cast<double>(j + 1), x1);
    if (a > b) continue;
    double ya = y_at(a);
    double yb = vertical ? y1 : y_at(b);
    if (ya > yb) std::swap(ya, yb);
    const long ilo = std::max<long>(0, static_cast<long>(std::ceil(ya)) - 1);
    const long ihi = std::min<long>(h - 1, static_cast<long>(std::floor(yb)));
    for (long i = ilo; i <= ihi; ++i) visit(static_cast<int>(i), static_cast<int>(j));
  }
}

}  // namespace gnmap
