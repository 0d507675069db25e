#include "gnmap/map_model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "gnmap/rng.hpp"

namespace gnmap {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::pedestrian_crossing: return "pedestrian_crossing";
    case Category::lane_divider: return "lane_divider";
    case Category::road_boundary: return "road_boundary";
  }
  throw std::invalid_argument("unknown category");
}

std::string_view category_short_name(Category c) {
  switch (c) {
    case Category::pedestrian_crossing: return "ped";
    case Category::lane_divider: return "div";
    case Category::road_boundary: return "bou";
  }
  throw std::invalid_argument("unknown category");
}

Category category_from_name(std::string_view name) {
  for (Category c : kAllCategories) {
    if (name == category_name(c) || name == category_short_name(c)) return c;
  }
  throw std::invalid_argument("unknown category name: " + std::string(name));
}

int category_precedence(Category c) {
  switch (c) {
    case Category::pedestrian_crossing: return 3;
    case Category::lane_divider: return 2;
    case Category::road_boundary: return 1;
  }
  return 0;
}

void VectorTile::validate() const {
  if (!(extent.width_m > 0.0) || !(extent.height_m > 0.0)) {
    throw std::invalid_argument("tile " + tile_id + ": extent must be positive");
  }
  for (const MapElement& e : elements) {
    if (e.points.size() < 2) {
      throw std::invalid_argument("tile " + tile_id + ": element with fewer than 2 points");
    }
    if (e.closed != (e.category == Category::pedestrian_crossing)) {
      throw std::invalid_argument("tile " + tile_id +
                                  ": crossings must be closed, lines must be open");
    }
    for (const Point2& p : e.points) {
      if (!(p.x >= 0.0 && p.x <= extent.width_m && p.y >= 0.0 && p.y <= extent.height_m)) {
        throw std::invalid_argument("tile " + tile_id + ": point outside extent");
      }
    }
  }
}

GrayRaster::GrayRaster(int h_, int w_, double resolution_, double fill)
    : h(h_), w(w_), resolution(resolution_),
      values(static_cast<std::size_t>(h_) * w_, fill) {}

ClassRaster::ClassRaster(int h_, int w_, int c_, double resolution_)
    : h(h_), w(w_), c(c_), resolution(resolution_),
      values(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

int ClassRaster::argmax(int row, int col) const {
  auto px = pixel(row, col);
  int best = 0;
  for (int ch = 1; ch < c; ++ch) {
    if (px[ch] > px[best]) best = ch;
  }
  return best;
}

namespace {

void check_raster_args(const VectorTile& tile, double resolution, int h, int w) {
  if (!(resolution > 0.0)) throw std::invalid_argument("resolution must be positive");
  if (h < 1 || w < 1) throw std::invalid_argument("raster size must be positive");
  constexpr double kSlack = 1e-9;
  if (h * resolution + kSlack < tile.extent.height_m ||
      w * resolution + kSlack < tile.extent.width_m) {
    throw std::invalid_argument("tile extent exceeds raster coverage");
  }
}

// Calls visit(row, col) for every cell covered by the element's stroke.
template <class Visit>
void trace_element(const MapElement& e, double resolution, int h, int w, Visit&& visit) {
  const std::size_t n = e.points.size();
  const std::size_t segments = e.closed ? n : n - 1;
  for (std::size_t s = 0; s < segments; ++s) {
    const Point2& a = e.points[s];
    const Point2& b = e.points[(s + 1) % n];
    supercover_segment(a.x / resolution, a.y / resolution, b.x / resolution, b.y / resolution,
                       h, w, visit);
  }
}

}  // namespace

GrayRaster rasterize_gray(const VectorTile& tile, double resolution, int h, int w) {
  check_raster_args(tile, resolution, h, w);
  GrayRaster out(h, w, resolution);
  for (const MapElement& e : tile.elements) {
    trace_element(e, resolution, h, w, [&](int r, int c) { out.at(r, c) = 1.0; });
  }
  return out;
}

ClassRaster rasterize_class(const VectorTile& tile, double resolution, int h, int w,
                            std::span<const Category> category_order) {
  check_raster_args(tile, resolution, h, w);
  const int c = static_cast<int>(category_order.size()) + 1;
  std::array<int, 3> channel_of{};
  channel_of.fill(-1);
  for (std::size_t i = 0; i < category_order.size(); ++i) {
    channel_of.at(static_cast<int>(category_order[i])) = static_cast<int>(i) + 1;
  }

  std::vector<int> best(static_cast<std::size_t>(h) * w, 0);  // precedence; 0 = background
  std::vector<int> channel(best.size(), 0);
  for (const MapElement& e : tile.elements) {
    const int ch = channel_of.at(static_cast<int>(e.category));
    if (ch < 0) throw std::invalid_argument("element category missing from category order");
    const int prec = category_precedence(e.category);
    trace_element(e, resolution, h, w, [&](int r, int col) {
      const std::size_t i = static_cast<std::size_t>(r) * w + col;
      if (prec > best[i]) {
        best[i] = prec;
        channel[i] = ch;
      }
    });
  }

  ClassRaster out(h, w, c, resolution);
  for (std::size_t i = 0; i < channel.size(); ++i) out.values[i * c + channel[i]] = 1.0;
  return out;
}

GrayRaster foreground(const ClassRaster& raster) {
  GrayRaster out(raster.h, raster.w, raster.resolution);
  for (int r = 0; r < raster.h; ++r) {
    for (int col = 0; col < raster.w; ++col) out.at(r, col) = 1.0 - raster.at(r, col, 0);
  }
  return out;
}

int dihedral_count(int h, int w) { return h == w ? 8 : 4; }

int dihedral_inverse(int t) {
  if (t < 0 || t > 7) throw std::invalid_argument("dihedral: transform index must lie in 0..7");
  // (flip . transpose)^-1 = transpose . flip, which is a transpose with the flips swapped
  return (t & 4) ? (4 | ((t & 1) << 1) | ((t & 2) >> 1)) : t;
}

namespace {

template <class Copy>
void for_each_dihedral_pixel(int h, int w, int t, Copy&& copy) {
  if (t < 0 || t >= dihedral_count(h, w)) {
    throw std::invalid_argument("dihedral: transform " + std::to_string(t) + " invalid for a " +
                                std::to_string(h) + "x" + std::to_string(w) + " raster");
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int sr = (t & 4) ? c : r;
      int sc = (t & 4) ? r : c;
      if (t & 2) sr = h - 1 - sr;
      if (t & 1) sc = w - 1 - sc;
      copy(r, c, sr, sc);
    }
  }
}

}  // namespace

GrayRaster dihedral(const GrayRaster& raster, int t) {
  GrayRaster out(raster.h, raster.w, raster.resolution);
  for_each_dihedral_pixel(raster.h, raster.w, t,
                          [&](int r, int c, int sr, int sc) { out.at(r, c) = raster.at(sr, sc); });
  return out;
}

ClassRaster dihedral(const ClassRaster& raster, int t) {
  ClassRaster out(raster.h, raster.w, raster.c, raster.resolution);
  for_each_dihedral_pixel(raster.h, raster.w, t, [&](int r, int c, int sr, int sc) {
    std::copy_n(raster.values.begin() + static_cast<long>(raster.index(sr, sc, 0)), raster.c,
                out.values.begin() + static_cast<long>(out.index(r, c, 0)));
  });
  return out;
}

std::size_t patch_pixel_index(int w, int k, int l, int p, int offset) {
  const int per_row = w / l;
  const int row = (p / per_row) * k + offset / l;
  const int col = (p % per_row) * l + offset % l;
  return static_cast<std::size_t>(row) * w + col;
}

PatchGrid split_patches(const GrayRaster& raster, int k, int l) {
  if (k < 1 || l < 1 || raster.h % k != 0 || raster.w % l != 0) {
    throw std::invalid_argument("patch size must divide the raster size");
  }
  PatchGrid grid{raster.h, raster.w, k, l, {}};
  const int n = grid.num_patches();
  const int ps = grid.patch_size();
  grid.data.resize(static_cast<std::size_t>(n) * ps);
  for (int p = 0; p < n; ++p) {
    for (int o = 0; o < ps; ++o) {
      grid.data[static_cast<std::size_t>(p) * ps + o] =
          raster.values[patch_pixel_index(raster.w, k, l, p, o)];
    }
  }
  return grid;
}

GrayRaster reassemble(const PatchGrid& grid, double resolution) {
  GrayRaster out(grid.h, grid.w, resolution);
  const int n = grid.num_patches();
  const int ps = grid.patch_size();
  for (int p = 0; p < n; ++p) {
    for (int o = 0; o < ps; ++o) {
      out.values[patch_pixel_index(grid.w, grid.k, grid.l, p, o)] =
          grid.data[static_cast<std::size_t>(p) * ps + o];
    }
  }
  return out;
}

std::vector<int> MaskPlan::removed() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(num_patches) - kept.size());
  std::size_t j = 0;
  for (int i = 0; i < num_patches; ++i) {
    if (j < kept.size() && kept[j] == i) {
      ++j;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

int kept_count(int num_patches, double mask_ratio) {
  return static_cast<int>(std::lround((1.0 - mask_ratio) * num_patches));
}

MaskPlan sample_mask(int num_patches, double mask_ratio, std::uint64_t seed) {
  if (num_patches < 1) throw std::invalid_argument("num_patches must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("mask ratio must lie in [0, 1)");
  }
  const int keep = kept_count(num_patches, mask_ratio);
  std::vector<int> order(static_cast<std::size_t>(num_patches));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < keep; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_patches - i)));
    std::swap(order[i], order[j]);
  }
  MaskPlan plan{num_patches, mask_ratio, seed, {order.begin(), order.begin() + keep}};
  std::sort(plan.kept.begin(), plan.kept.end());
  return plan;
}

VisiblePatches apply_mask(const PatchGrid& grid, const MaskPlan& plan) {
  if (plan.num_patches != grid.num_patches()) {
    throw std::invalid_argument("mask plan does not match the patch grid");
  }
  VisiblePatches out{grid.patch_size(), plan.kept, {}};
  out.data.reserve(plan.kept.size() * static_cast<std::size_t>(grid.patch_size()));
  int prev = -1;
  for (int idx : plan.kept) {
    if (idx <= prev || idx >= grid.num_patches()) {
      throw std::invalid_argument("mask plan indices must be increasing and in range");
    }
    prev = idx;
    auto p = grid.patch(idx);
    out.data.insert(out.data.end(), p.begin(), p.end());
  }
  return out;
}

PatchGrid scatter_visible(const VisiblePatches& visible, int h, int w, int k, int l) {
  PatchGrid grid{h, w, k, l, {}};
  const int ps = grid.patch_size();
  if (visible.patch_size != ps) throw std::invalid_argument("patch size mismatch");
  grid.data.assign(static_cast<std::size_t>(grid.num_patches()) * ps, 0.0);
  for (std::size_t i = 0; i < visible.indices.size(); ++i) {
    std::copy_n(visible.data.begin() + static_cast<std::ptrdiff_t>(i * ps), ps,
                grid.data.begin() + static_cast<std::ptrdiff_t>(visible.indices[i]) * ps);
  }
  return grid;
}

}  // namespace gnmap
