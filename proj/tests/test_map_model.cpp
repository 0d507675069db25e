#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <utility>

#include "gnmap/error.hpp"
#include "gnmap/map_io.hpp"
#include "gnmap/map_model.hpp"
#include "gnmap/rng.hpp"

using namespace gnmap;

namespace {

// Closed segment vs closed box [x0,x1]x[y0,y1], Liang-Barsky clipping.
bool segment_touches_box(double ax, double ay, double bx, double by, double x0, double y0,
                         double x1, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = bx - ax, dy = by - ay;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {ax - x0, x1 - ax, ay - y0, y1 - ay};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
    } else {
      const double t = q[i] / p[i];
      if (p[i] < 0.0) t0 = std::max(t0, t);
      else t1 = std::min(t1, t);
    }
  }
  return t0 <= t1;
}

std::set<std::pair<int, int>> oracle_cells(double ax, double ay, double bx, double by, int h,
                                           int w) {
  std::set<std::pair<int, int>> cells;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (segment_touches_box(ax, ay, bx, by, c, r, c + 1, r + 1)) cells.insert({r, c});
    }
  }
  return cells;
}

std::set<std::pair<int, int>> supercover_cells(double ax, double ay, double bx, double by, int h,
                                               int w) {
  std::set<std::pair<int, int>> cells;
  supercover_segment(ax, ay, bx, by, h, w, [&](int r, int c) { cells.insert({r, c}); });
  return cells;
}

// Per-pixel painter's order: the highest-precedence category whose stroke
// touches the pixel, or -1 for background.
int oracle_pixel_category(const VectorTile& tile, double res, int row, int col) {
  int best = -1, best_prec = 0;
  for (const MapElement& e : tile.elements) {
    const std::size_t n = e.points.size();
    const std::size_t segs = e.closed ? n : n - 1;
    bool hit = false;
    for (std::size_t s = 0; s < segs && !hit; ++s) {
      const Point2& a = e.points[s];
      const Point2& b = e.points[(s + 1) % n];
      hit = segment_touches_box(a.x / res, a.y / res, b.x / res, b.y / res, col, row, col + 1,
                                row + 1);
    }
    if (hit && category_precedence(e.category) > best_prec) {
      best_prec = category_precedence(e.category);
      best = static_cast<int>(e.category);
    }
  }
  return best;
}

VectorTile random_tile(std::uint64_t seed, double extent) {
  Rng rng(seed);
  VectorTile t{"rand", {extent, extent}, {}};
  const int n = rng.between(1, 6);
  for (int i = 0; i < n; ++i) {
    MapElement e;
    e.category = kAllCategories[rng.below(3)];
    e.closed = e.category == Category::pedestrian_crossing;
    const int pts = e.closed ? 4 : rng.between(2, 5);
    for (int p = 0; p < pts; ++p) e.points.push_back({rng.uniform(0, extent), rng.uniform(0, extent)});
    t.elements.push_back(std::move(e));
  }
  return t;
}

}  // namespace

TEST_CASE("rng stream matches an independent xorshift64* recurrence") {
  std::uint64_t s = splitmix64(42);
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    s ^= s >> 12;
    s ^= s << 25;
    s ^= s >> 27;
    CHECK(rng.next_u64() == s * 0x2545F4914F6CDD1DULL);
  }
  CHECK(derive_seed(7, "a") != derive_seed(7, "b"));
  CHECK(derive_seed(7, "a", 0) != derive_seed(7, "a", 1));
}

TEST_CASE("rng normal moments") {
  Rng rng(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("supercover matches the closed-box intersection oracle") {
  SUBCASE("random segments") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
      const double ax = rng.uniform(-2, 18), ay = rng.uniform(-2, 18);
      const double bx = rng.uniform(-2, 18), by = rng.uniform(-2, 18);
      CHECK(supercover_cells(ax, ay, bx, by, 16, 16) == oracle_cells(ax, ay, bx, by, 16, 16));
    }
  }
  SUBCASE("axis-aligned and grid-line segments") {
    const double segs[][4] = {{0.5, 3.5, 15.5, 3.5}, {3.5, 0.0, 3.5, 16.0}, {0, 4, 16, 4},
                              {7, 0, 7, 16},         {2, 2, 2, 2},         {2.5, 2.5, 2.5, 2.5},
                              {0, 0, 16, 16},        {16, 0, 0, 16},       {1, 1, 9, 5}};
    for (const auto& s : segs) {
      CHECK(supercover_cells(s[0], s[1], s[2], s[3], 16, 16) ==
            oracle_cells(s[0], s[1], s[2], s[3], 16, 16));
    }
  }
}

TEST_CASE("rasterize_gray basics") {
  SUBCASE("empty tile") {
    const GrayRaster r = rasterize_gray(VectorTile{"e", {16, 16}, {}}, 0.25, 64, 64);
    CHECK(std::all_of(r.values.begin(), r.values.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("horizontal line at a row center fills exactly that row") {
    const double y = (10 + 0.5) * 0.25;
    VectorTile t{"h", {16, 16}, {{Category::lane_divider, {{0, y}, {16, y}}, false}}};
    const GrayRaster r = rasterize_gray(t, 0.25, 64, 64);
    for (int row = 0; row < 64; ++row) {
      for (int col = 0; col < 64; ++col) CHECK(r.at(row, col) == (row == 10 ? 1.0 : 0.0));
    }
  }
  SUBCASE("diagonal polyline equals the supercover oracle") {
    VectorTile t{"d", {16, 16}, {{Category::road_boundary, {{0, 0}, {16, 16}}, false}}};
    const GrayRaster r = rasterize_gray(t, 0.25, 64, 64);
    const auto cells = oracle_cells(0, 0, 64, 64, 64, 64);
    for (int row = 0; row < 64; ++row) {
      for (int col = 0; col < 64; ++col) {
        CHECK(r.at(row, col) == (cells.count({row, col}) ? 1.0 : 0.0));
      }
    }
  }
  SUBCASE("errors") {
    VectorTile t{"x", {16, 16}, {}};
    CHECK_THROWS_AS(rasterize_gray(t, 0.0, 64, 64), std::invalid_argument);
    CHECK_THROWS_AS(rasterize_gray(t, 0.25, 32, 64), std::invalid_argument);
  }
}

TEST_CASE("rasterize_class agrees with the painter's-order oracle") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const VectorTile t = random_tile(seed, 8.0);
    const ClassRaster r = rasterize_class(t, 0.25, 32, 32);
    const GrayRaster gray = rasterize_gray(t, 0.25, 32, 32);
    CHECK(r.c == 4);
    for (int row = 0; row < 32; ++row) {
      for (int col = 0; col < 32; ++col) {
        const int cat = oracle_pixel_category(t, 0.25, row, col);
        const int ch = cat < 0 ? 0 : cat + 1;
        double sum = 0;
        for (int k = 0; k < 4; ++k) {
          sum += r.at(row, col, k);
          CHECK(r.at(row, col, k) == (k == ch ? 1.0 : 0.0));
        }
        CHECK(sum == 1.0);
        CHECK(gray.at(row, col) == 1.0 - r.at(row, col, 0));
      }
    }
    CHECK(foreground(r) == gray);
  }
}

TEST_CASE("divider over boundary at one pixel takes the divider channel") {
  VectorTile t{"x",
               {4, 4},
               {{Category::road_boundary, {{0, 2.1}, {4, 2.1}}, false},
                {Category::lane_divider, {{2.1, 0}, {2.1, 4}}, false}}};
  const ClassRaster r = rasterize_class(t, 0.25, 16, 16);
  CHECK(r.argmax(8, 8) == 2);
  CHECK(r.argmax(8, 0) == 3);
  CHECK(r.argmax(0, 8) == 2);
  t.elements.push_back({Category::pedestrian_crossing, {{1.9, 1.9}, {2.3, 1.9}, {2.3, 2.3}, {1.9, 2.3}}, true});
  CHECK(rasterize_class(t, 0.25, 16, 16).argmax(7, 8) == 1);
  CHECK(rasterize_class(t, 0.25, 16, 16).argmax(8, 8) == 2);  // outlined, interior not covered
}

TEST_CASE("split and reassemble") {
  Rng rng(5);
  GrayRaster r(64, 48, 0.25);
  for (double& v : r.values) v = rng.uniform();

  const PatchGrid g = split_patches(r, 16, 8);
  CHECK(g.num_patches() == 4 * 6);
  CHECK(reassemble(g, 0.25) == r);
  // patch i holds the i-th row-major block
  const int p = 7, pr = p / g.patches_per_row(), pc = p % g.patches_per_row();
  for (int o = 0; o < g.patch_size(); ++o) {
    CHECK(g.patch(p)[o] == r.at(pr * 16 + o / 8, pc * 8 + o % 8));
  }
  CHECK(split_patches(GrayRaster(64, 64, 0.25), 16, 16).num_patches() == 16);
  GrayRaster constant(64, 64, 0.25, 0.3);
  const PatchGrid cg = split_patches(constant, 8, 8);
  CHECK(std::all_of(cg.data.begin(), cg.data.end(), [](double v) { return v == 0.3; }));
  CHECK_THROWS_AS(split_patches(r, 7, 8), std::invalid_argument);
}

TEST_CASE("dihedral transforms form the symmetry group of the grid") {
  Rng rng(21);
  GrayRaster sq(5, 5, 0.25), wide(3, 6, 0.25);
  for (double& v : sq.values) v = rng.uniform();
  for (double& v : wide.values) v = rng.uniform();

  // explicit pixel maps for a few elements
  CHECK(dihedral(sq, 0) == sq);
  CHECK(dihedral(sq, 1).at(1, 0) == sq.at(1, 4));
  CHECK(dihedral(sq, 2).at(0, 3) == sq.at(4, 3));
  CHECK(dihedral(sq, 4).at(1, 3) == sq.at(3, 1));
  // transpose then flip columns: output (r, c) reads (c, w-1-r), a quarter turn
  CHECK(dihedral(sq, 5).at(0, 0) == sq.at(0, 4));
  CHECK(dihedral(dihedral(dihedral(dihedral(sq, 5), 5), 5), 5) == sq);

  std::set<std::vector<double>> images;
  for (int t = 0; t < 8; ++t) {
    const GrayRaster img = dihedral(sq, t);
    images.insert(img.values);
    CHECK(dihedral(img, dihedral_inverse(t)) == sq);
    std::vector<double> a = img.values, b = sq.values;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  CHECK(images.size() == 8);

  CHECK(dihedral_count(3, 6) == 4);
  for (int t = 0; t < 4; ++t) CHECK(dihedral(dihedral(wide, t), dihedral_inverse(t)) == wide);
  CHECK_THROWS_AS(dihedral(wide, 4), std::invalid_argument);
  CHECK_THROWS_AS(dihedral_inverse(8), std::invalid_argument);

  // class rasters move whole pixels, and foreground commutes with the transform
  const ClassRaster cls = rasterize_class(random_tile(3, 8.0), 0.5, 16, 16);
  for (int t = 0; t < 8; ++t) {
    const ClassRaster moved = dihedral(cls, t);
    CHECK(foreground(moved) == dihedral(foreground(cls), t));
  }
}

TEST_CASE("mask sampling") {
  CHECK(kept_count(16, 0.75) == 4);
  CHECK(kept_count(64, 0.75) == 16);
  CHECK(sample_mask(16, 0.0, 1).kept.size() == 16);
  CHECK(sample_mask(16, 0.75, 9).kept == sample_mask(16, 0.75, 9).kept);
  CHECK_THROWS_AS(sample_mask(16, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_mask(16, -0.1, 1), std::invalid_argument);

  SUBCASE("uniform keep frequency over 10,000 seeds") {
    std::vector<int> count(16, 0);
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const MaskPlan m = sample_mask(16, 0.75, s);
      REQUIRE(m.kept.size() == 4);
      for (std::size_t i = 1; i < m.kept.size(); ++i) REQUIRE(m.kept[i - 1] < m.kept[i]);
      for (int k : m.kept) ++count[k];
    }
    for (int c : count) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);
  }
  SUBCASE("kept and removed partition the patches") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const MaskPlan m = sample_mask(64, 0.6, s);
      std::vector<int> all = m.kept;
      const auto rem = m.removed();
      all.insert(all.end(), rem.begin(), rem.end());
      std::sort(all.begin(), all.end());
      CHECK(all.size() == 64);
      for (int i = 0; i < 64; ++i) CHECK(all[i] == i);
    }
  }
}

TEST_CASE("apply_mask and scatter") {
  Rng rng(8);
  GrayRaster r(32, 32, 0.25);
  for (double& v : r.values) v = rng.uniform(0.1, 1.0);
  const PatchGrid g = split_patches(r, 8, 8);

  const VisiblePatches all = apply_mask(g, sample_mask(16, 0.0, 0));
  CHECK(all.data == g.data);

  const MaskPlan plan = sample_mask(16, 0.75, 4);
  const VisiblePatches vis = apply_mask(g, plan);
  REQUIRE(vis.indices == plan.kept);
  for (std::size_t i = 0; i < vis.indices.size(); ++i) {
    for (int o = 0; o < 64; ++o) CHECK(vis.data[i * 64 + o] == g.patch(vis.indices[i])[o]);
  }
  const GrayRaster canvas = reassemble(scatter_visible(vis, 32, 32, 8, 8), 0.25);
  for (int p = 0; p < 16; ++p) {
    const bool kept = std::find(plan.kept.begin(), plan.kept.end(), p) != plan.kept.end();
    for (int o = 0; o < 64; ++o) {
      const std::size_t idx = patch_pixel_index(32, 8, 8, p, o);
      CHECK(canvas.values[idx] == (kept ? r.values[idx] : 0.0));
    }
  }
  MaskPlan wrong = plan;
  wrong.num_patches = 15;
  CHECK_THROWS_AS(apply_mask(g, wrong), std::invalid_argument);
}

TEST_CASE("tile and raster files round-trip") {
  const VectorTile t = random_tile(3, 16.0);
  CHECK(tile_from_json(tile_to_json(t)) == t);

  const ClassRaster r = rasterize_class(t, 0.25, 64, 64);
  const auto bytes = encode_raster(r);
  CHECK(decode_raster(bytes) == r);

  const auto dir = std::filesystem::temp_directory_path() / "gnmap_test_io";
  std::filesystem::remove_all(dir);
  save_tile(t, dir / "tile.json");
  save_raster(r, dir / "r.bin");
  CHECK(load_tile(dir / "tile.json") == t);
  CHECK(load_raster(dir / "r.bin") == r);

  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(decode_raster(bad), FormatError);
  auto short_ = bytes;
  short_.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_raster(short_), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("tile validation") {
  VectorTile t{"v", {4, 4}, {{Category::lane_divider, {{0, 0}}, false}}};
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.elements[0].points = {{0, 0}, {5, 1}};
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.elements[0].points = {{0, 0}, {3, 1}};
  CHECK_NOTHROW(t.validate());
  t.elements[0].closed = true;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}
