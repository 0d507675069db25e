#pragma once

// Pixel-level evaluation of reconstructed tiles.
//
// Every non-background pixel (after argmax) becomes one point at its pixel
// center. Predicted and ground-truth points of the same category are paired
// one-to-one when they lie within the threshold distance; precision and
// recall per instance follow from the accepted pair count, and AP/AR are
// their plain averages over instances.

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gnmap/map_model.hpp"
#include "gnmap/model.hpp"
#include "gnmap/synth.hpp"

namespace gnmap {

inline constexpr double kDefaultMatchThreshold = 0.5;  // meters

struct PointSet {
  std::array<std::vector<Point2>, 3> points;  // indexed by Category

  std::vector<Point2>& of(Category c) { return points[static_cast<int>(c)]; }
  const std::vector<Point2>& of(Category c) const { return points[static_cast<int>(c)]; }
  std::size_t total() const;
};

/// argmax per pixel; channel ch >= 1 maps to category_order[ch - 1].
PointSet extract_points(const ClassRaster& raster,
                        std::span<const Category> category_order = kDefaultCategoryOrder);

struct MatchedPair {
  int pred = 0;
  int gt = 0;
  double distance = 0.0;
};

struct CategoryMatch {
  int num_pred = 0;
  int num_gt = 0;
  std::vector<MatchedPair> pairs;

  int accepted() const { return static_cast<int>(pairs.size()); }
};

struct MatchResult {
  std::array<CategoryMatch, 3> per_category;

  const CategoryMatch& of(Category c) const { return per_category[static_cast<int>(c)]; }
};

/// Greedy one-to-one matching: candidate pairs with distance <= threshold are
/// taken in ascending (distance, pred, gt) order whenever both ends are free.
CategoryMatch match_category(std::span<const Point2> pred, std::span<const Point2> gt,
                             double threshold = kDefaultMatchThreshold);
MatchResult match_points(const PointSet& pred, const PointSet& gt,
                         double threshold = kDefaultMatchThreshold);

struct PrecisionRecall {
  double p = 0.0;
  double r = 0.0;
};

/// Empty denominators: no pred and no GT gives (1, 1); pred without GT gives
/// (0, 1); GT without pred gives (1, 0).
PrecisionRecall precision_recall(const CategoryMatch& m);
PrecisionRecall precision_recall(const MatchResult& m, Category c);

using InstanceScores = std::array<PrecisionRecall, 3>;  // indexed by Category

InstanceScores score_instance(const MatchResult& m);

struct ClassScores {
  double ap = 0.0;
  double ar = 0.0;
  bool operator==(const ClassScores&) const = default;
};

struct EvalParams {
  double threshold = kDefaultMatchThreshold;
  double resolution = 0.25;
  bool operator==(const EvalParams&) const = default;
};

struct EvalReport {
  int n = 0;
  std::array<ClassScores, 3> per_class;  // indexed by Category
  double mAP = 0.0;
  double mAR = 0.0;
  double f1 = 0.0;
  EvalParams params;

  const ClassScores& of(Category c) const { return per_class[static_cast<int>(c)]; }
  bool operator==(const EvalReport&) const = default;
};

/// 2ab / (a + b), and 0 when both are 0.
double harmonic_mean(double a, double b);

/// Averages per-instance scores (fixed instance order). Throws
/// std::invalid_argument when instances is empty.
EvalReport aggregate(std::span<const InstanceScores> instances, EvalParams params = {});

/// Builds the summary columns from already-averaged per-class AP/AR.
EvalReport summarize(int n, const std::array<ClassScores, 3>& per_class, EvalParams params = {});

/// Scores predicted rasters against ground truth, pairwise in order.
EvalReport evaluate_rasters(std::span<const ClassRaster> pred, std::span<const ClassRaster> gt,
                            double threshold = kDefaultMatchThreshold);

/// Fuses each tile's tours with the network and scores the result. Throws
/// std::invalid_argument on an empty split or a geometry mismatch.
EvalReport evaluate_model(GnMapNet& net, const std::vector<TileSample>& tiles,
                          double threshold = kDefaultMatchThreshold);

/// Ground truth scored against itself.
EvalReport evaluate_oracle(const std::vector<TileSample>& tiles,
                           double threshold = kDefaultMatchThreshold);

/// Tour `tour` of every tile taken directly as the prediction. Tiles with
/// fewer tours use their last one.
EvalReport evaluate_single_tour(const std::vector<TileSample>& tiles, int tour,
                                double threshold = kDefaultMatchThreshold);

/// The best evaluate_single_tour over tour indices 0 .. max tours - 1, by F1
/// (the first index wins ties). Returns the report and the index.
std::pair<EvalReport, int> best_single_tour(const std::vector<TileSample>& tiles,
                                            double threshold = kDefaultMatchThreshold);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

/// Value x100 with one decimal, e.g. 0.7404 -> "74.0".
std::string percent(double v);

/// Table-style text: one row per (label, report) with mAP, the three AP
/// values, mAR, the three AR values, and F1, all x100 with one decimal.
std::string render_table(std::span<const std::pair<std::string, EvalReport>> rows);

/// "category,AP,AR" header and one line per category, raw fractions.
std::string render_csv(const EvalReport& r);

}  // namespace gnmap
