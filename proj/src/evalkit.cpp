#include "gnmap/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "gnmap/error.hpp"

namespace gnmap {

std::size_t PointSet::total() const {
  std::size_t n = 0;
  for (const auto& v : points) n += v.size();
  return n;
}

PointSet extract_points(const ClassRaster& raster, std::span<const Category> category_order) {
  if (raster.c != static_cast<int>(category_order.size()) + 1) {
    throw std::invalid_argument("extract_points: channel count does not match the category order");
  }
  PointSet out;
  for (int row = 0; row < raster.h; ++row) {
    for (int col = 0; col < raster.w; ++col) {
      const int ch = raster.argmax(row, col);
      if (ch == 0) continue;
      out.of(category_order[ch - 1])
          .push_back({(col + 0.5) * raster.resolution, (row + 0.5) * raster.resolution});
    }
  }
  return out;
}

namespace {

struct Candidate {
  double distance;
  int pred;
  int gt;
};

long long cell_key(long long cx, long long cy) { return cx * 1'000'003LL + cy; }

}  // namespace

CategoryMatch match_category(std::span<const Point2> pred, std::span<const Point2> gt,
                             double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("match: threshold must be positive");
  CategoryMatch m;
  m.num_pred = static_cast<int>(pred.size());
  m.num_gt = static_cast<int>(gt.size());
  if (pred.empty() || gt.empty()) return m;

  // Bucket GT points on a grid with cell size = threshold, so every candidate
  // of a prediction lies in the 3x3 block around its cell.
  auto cell_of = [threshold](double v) { return static_cast<long long>(std::floor(v / threshold)); };
  std::unordered_map<long long, std::vector<int>> buckets;
  for (int j = 0; j < m.num_gt; ++j) {
    buckets[cell_key(cell_of(gt[j].x), cell_of(gt[j].y))].push_back(j);
  }

  std::vector<Candidate> cand;
  for (int i = 0; i < m.num_pred; ++i) {
    const long long cx = cell_of(pred[i].x), cy = cell_of(pred[i].y);
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        const auto it = buckets.find(cell_key(cx + dx, cy + dy));
        if (it == buckets.end()) continue;
        for (int j : it->second) {
          const double ex = pred[i].x - gt[j].x, ey = pred[i].y - gt[j].y;
          const double d = std::sqrt(ex * ex + ey * ey);
          if (d <= threshold) cand.push_back({d, i, j});
        }
      }
    }
  }
  std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });

  std::vector<char> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
  for (const Candidate& c : cand) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = gt_used[c.gt] = 1;
    m.pairs.push_back({c.pred, c.gt, c.distance});
  }
  return m;
}

MatchResult match_points(const PointSet& pred, const PointSet& gt, double threshold) {
  MatchResult r;
  for (Category c : kAllCategories) {
    r.per_category[static_cast<int>(c)] = match_category(pred.of(c), gt.of(c), threshold);
  }
  return r;
}

PrecisionRecall precision_recall(const CategoryMatch& m) {
  const double a = m.accepted();
  if (m.num_pred == 0 && m.num_gt == 0) return {1.0, 1.0};
  if (m.num_gt == 0) return {0.0, 1.0};
  if (m.num_pred == 0) return {1.0, 0.0};
  return {a / m.num_pred, a / m.num_gt};
}

PrecisionRecall precision_recall(const MatchResult& m, Category c) {
  return precision_recall(m.of(c));
}

InstanceScores score_instance(const MatchResult& m) {
  InstanceScores s;
  for (Category c : kAllCategories) s[static_cast<int>(c)] = precision_recall(m, c);
  return s;
}

double harmonic_mean(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

EvalReport summarize(int n, const std::array<ClassScores, 3>& per_class, EvalParams params) {
  EvalReport r;
  r.n = n;
  r.per_class = per_class;
  r.params = params;
  for (const ClassScores& s : per_class) {
    r.mAP += s.ap;
    r.mAR += s.ar;
  }
  r.mAP /= 3.0;
  r.mAR /= 3.0;
  r.f1 = harmonic_mean(r.mAP, r.mAR);
  return r;
}

EvalReport aggregate(std::span<const InstanceScores> instances, EvalParams params) {
  if (instances.empty()) throw std::invalid_argument("aggregate: no instances");
  std::array<ClassScores, 3> per_class{};
  for (const InstanceScores& s : instances) {
    for (int c = 0; c < 3; ++c) {
      per_class[c].ap += s[c].p;
      per_class[c].ar += s[c].r;
    }
  }
  const double n = static_cast<double>(instances.size());
  for (ClassScores& s : per_class) {
    s.ap /= n;
    s.ar /= n;
  }
  return summarize(static_cast<int>(instances.size()), per_class, params);
}

EvalReport evaluate_rasters(std::span<const ClassRaster> pred, std::span<const ClassRaster> gt,
                            double threshold) {
  if (pred.size() != gt.size()) throw std::invalid_argument("evaluate: prediction/GT count mismatch");
  if (gt.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<InstanceScores> scores;
  scores.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i].geometry() != gt[i].geometry() || pred[i].c != gt[i].c) {
      throw std::invalid_argument("evaluate: prediction and GT rasters differ in geometry");
    }
    scores.push_back(
        score_instance(match_points(extract_points(pred[i]), extract_points(gt[i]), threshold)));
  }
  return aggregate(scores, {threshold, gt.front().resolution});
}

EvalReport evaluate_model(GnMapNet& net, const std::vector<TileSample>& tiles, double threshold) {
  if (tiles.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<ClassRaster> pred, gt;
  for (const TileSample& t : tiles) {
    if (t.gt_class.geometry() != net.config().geometry) {
      throw std::invalid_argument("evaluate: checkpoint geometry does not match the data");
    }
    pred.push_back(net.fuse(t.tours));
    gt.push_back(t.gt_class);
  }
  return evaluate_rasters(pred, gt, threshold);
}

EvalReport evaluate_oracle(const std::vector<TileSample>& tiles, double threshold) {
  std::vector<ClassRaster> gt;
  for (const TileSample& t : tiles) gt.push_back(t.gt_class);
  return evaluate_rasters(gt, gt, threshold);
}

EvalReport evaluate_single_tour(const std::vector<TileSample>& tiles, int tour, double threshold) {
  if (tour < 0) throw std::invalid_argument("evaluate: negative tour index");
  std::vector<ClassRaster> pred, gt;
  for (const TileSample& t : tiles) {
    if (t.tours.empty()) throw std::invalid_argument("evaluate: tile without tours");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(tour), t.tours.size() - 1);
    pred.push_back(t.tours[k].observed);
    gt.push_back(t.gt_class);
  }
  return evaluate_rasters(pred, gt, threshold);
}

std::pair<EvalReport, int> best_single_tour(const std::vector<TileSample>& tiles, double threshold) {
  std::size_t most = 0;
  for (const TileSample& t : tiles) most = std::max(most, t.tours.size());
  if (most == 0) throw std::invalid_argument("evaluate: no tours");
  std::pair<EvalReport, int> best{evaluate_single_tour(tiles, 0, threshold), 0};
  for (int k = 1; k < static_cast<int>(most); ++k) {
    EvalReport r = evaluate_single_tour(tiles, k, threshold);
    if (r.f1 > best.first.f1) best = {std::move(r), k};
  }
  return best;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (Category c : kAllCategories) {
    per_class[std::string(category_short_name(c))] = {{"AP", r.of(c).ap}, {"AR", r.of(c).ar}};
  }
  return {{"n", r.n},
          {"per_class", per_class},
          {"mAP", r.mAP},
          {"mAR", r.mAR},
          {"F1", r.f1},
          {"params", {{"threshold", r.params.threshold}, {"resolution", r.params.resolution}}}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.n = j.at("n").get<int>();
    for (Category c : kAllCategories) {
      const auto& e = j.at("per_class").at(std::string(category_short_name(c)));
      r.per_class[static_cast<int>(c)] = {e.at("AP").get<double>(), e.at("AR").get<double>()};
    }
    r.mAP = j.at("mAP").get<double>();
    r.mAR = j.at("mAR").get<double>();
    r.f1 = j.at("F1").get<double>();
    r.params.threshold = j.at("params").at("threshold").get<double>();
    r.params.resolution = j.at("params").at("resolution").get<double>();
    return r;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("report: ") + ex.what());
  }
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string render_table(std::span<const std::pair<std::string, EvalReport>> rows) {
  auto cell = [](double mean, const std::array<ClassScores, 3>& pc, double ClassScores::*field) {
    return percent(mean) + " (" + percent(pc[0].*field) + " | " + percent(pc[1].*field) + " | " +
           percent(pc[2].*field) + ")";
  };
  struct Line {
    std::string label, ap, ar, f1;
  };
  std::vector<Line> lines{{"Method", "mAP (ped | div | bou)", "mAR (ped | div | bou)", "F1"}};
  for (const auto& [label, r] : rows) {
    lines.push_back({label, cell(r.mAP, r.per_class, &ClassScores::ap),
                     cell(r.mAR, r.per_class, &ClassScores::ar), percent(r.f1)});
  }
  std::size_t w[4] = {0, 0, 0, 0};
  for (const Line& l : lines) {
    w[0] = std::max(w[0], l.label.size());
    w[1] = std::max(w[1], l.ap.size());
    w[2] = std::max(w[2], l.ar.size());
    w[3] = std::max(w[3], l.f1.size());
  }
  auto pad = [](const std::string& s, std::size_t n, bool right) {
    const std::string fill(n - s.size(), ' ');
    return right ? fill + s : s + fill;
  };
  std::ostringstream os;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Line& l = lines[i];
    os << pad(l.label, w[0], false) << " | " << pad(l.ap, w[1], false) << " | " << pad(l.ar, w[2], false)
       << " | " << pad(l.f1, w[3], true) << '\n';
    if (i == 0) {
      os << std::string(w[0], '-') << "-+-" << std::string(w[1], '-') << "-+-" << std::string(w[2], '-')
         << "-+-" << std::string(w[3], '-') << '\n';
    }
  }
  return os.str();
}

std::string render_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "category,AP,AR\n";
  for (Category c : kAllCategories) {
    os << category_short_name(c) << ',' << r.of(c).ap << ',' << r.of(c).ar << '\n';
  }
  return os.str();
}

}  // namespace gnmap
