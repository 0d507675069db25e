#pragma once

// Published metric examples and the exhaustive matching oracle, shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gnmap/evalkit.hpp"
#include "gnmap/rng.hpp"

namespace gnmap::testing {

struct PublishedMatchExample {
  PointSet pred;
  PointSet gt;
};

// Two lane dividers and a road boundary, laid out so that dividers accept 3 of
// 7 predictions against 4 GT points and the boundary 4 of 8 against 5. The
// rejected predictions include one that is within range of an already-taken
// GT point and one that sits exactly on an unmatched GT point of the other
// category.
inline PublishedMatchExample published_match_example() {
  PublishedMatchExample f;
  auto& gd = f.gt.of(Category::lane_divider);
  auto& pd = f.pred.of(Category::lane_divider);
  auto& gb = f.gt.of(Category::road_boundary);
  auto& pb = f.pred.of(Category::road_boundary);

  // divider 1 along y = 0, divider 2 along y = 3.5
  gd = {{0.0, 0.0}, {2.0, 0.0}, {4.0, 3.5}, {6.0, 3.5}};
  pd = {{0.0, 0.1},   // -> gt 0
        {2.2, 0.0},   // -> gt 1
        {4.0, 3.2},   // -> gt 2
        {0.0, 0.4},   // second candidate of gt 0, rejected
        {1.0, 1.5},   // far from everything
        {7.0, 1.5},   // far from everything
        {8.0, 6.0}};  // on the boundary's unmatched GT point
  // boundary along y = 6
  gb = {{0.0, 6.0}, {2.0, 6.0}, {4.0, 6.0}, {6.0, 6.0}, {8.0, 6.0}};
  pb = {{0.0, 6.3}, {2.1, 5.8}, {4.4, 6.0}, {6.0, 6.45},  // one per GT 0..3
        {1.0, 7.5}, {3.0, 7.5}, {5.0, 7.5}, {10.0, 9.0}};
  return f;
}

struct PublishedRow {
  std::string method;
  std::array<ClassScores, 3> per_class;  // ped, div, bou
  std::string mAP, mAR, f1;
};

// Per-class AP | AR columns and the published summary cells.
inline std::vector<PublishedRow> published_benchmark_rows() {
  auto row = [](std::string name, std::array<double, 3> ap, std::array<double, 3> ar,
                std::string map, std::string mar, std::string f1) {
    PublishedRow r{std::move(name), {}, std::move(map), std::move(mar), std::move(f1)};
    for (int i = 0; i < 3; ++i) r.per_class[i] = {ap[i] / 100.0, ar[i] / 100.0};
    return r;
  };
  return {
      row("HDMapNet", {42.8, 47.9, 45.1}, {41.3, 47.5, 43.6}, "45.3", "44.1", "44.7"),
      row("VectorMapNet", {60.4, 65.3, 63.1}, {59.2, 61.8, 63.4}, "62.9", "61.5", "62.2"),
      row("InstaGraM", {51.9, 54.2, 54.8}, {59.8, 62.3, 65.1}, "53.6", "62.4", "57.7"),
      row("BeMapNet", {60.5, 61.6, 64.9}, {62.8, 70.3, 65.1}, "62.3", "66.1", "64.1"),
      row("MapTR", {62.8, 65.2, 65.5}, {71.3, 73.4, 74.9}, "64.5", "73.2", "68.6"),
      row("PivotNet", {63.1, 66.5, 64.8}, {70.3, 72.8, 74.1}, "64.8", "72.4", "68.4"),
      row("GMM", {61.4, 64.7, 64.0}, {59.8, 67.6, 62.3}, "63.4", "63.2", "63.3"),
      row("GNMap", {70.5, 74.8, 72.3}, {75.4, 78.1, 73.3}, "72.5", "75.6", "74.0"),
  };
}

/// Maximum-cardinality matching on the threshold graph by exhaustive search
/// over (prediction index, set of used GT points).
inline int exhaustive_max_matching(const std::vector<Point2>& pred, const std::vector<Point2>& gt,
                                   double threshold) {
  const int np = static_cast<int>(pred.size()), ng = static_cast<int>(gt.size());
  std::vector<int> memo(static_cast<std::size_t>(np + 1) << ng, -1);
  auto best = [&](auto&& self, int i, unsigned used) -> int {
    if (i == np) return 0;
    int& m = memo[(static_cast<std::size_t>(i) << ng) | used];
    if (m >= 0) return m;
    int r = self(self, i + 1, used);
    for (int j = 0; j < ng; ++j) {
      if (used & (1u << j)) continue;
      if (std::hypot(pred[i].x - gt[j].x, pred[i].y - gt[j].y) <= threshold) {
        r = std::max(r, 1 + self(self, i + 1, used | (1u << j)));
      }
    }
    return m = r;
  };
  return best(best, 0, 0u);
}

struct GreedyStats {
  int instances = 0;
  int equal = 0;     // greedy count == maximum
  int exceeded = 0;  // greedy count > maximum (must never happen)
};

/// Random instances: 0..8 points per side, uniform in a 2 m square,
/// threshold 0.5 m.
inline GreedyStats greedy_vs_exhaustive(int instances, std::uint64_t seed) {
  Rng rng(seed);
  GreedyStats s;
  for (int k = 0; k < instances; ++k) {
    std::vector<Point2> pred(rng.between(0, 8)), gt(rng.between(0, 8));
    for (auto& p : pred) p = {rng.uniform(0, 2), rng.uniform(0, 2)};
    for (auto& p : gt) p = {rng.uniform(0, 2), rng.uniform(0, 2)};
    const int greedy = match_category(pred, gt, 0.5).accepted();
    const int best = exhaustive_max_matching(pred, gt, 0.5);
    ++s.instances;
    s.equal += greedy == best;
    s.exceeded += greedy > best;
  }
  return s;
}

}  // namespace gnmap::testing
