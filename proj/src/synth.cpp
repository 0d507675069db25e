#include "gnmap/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "gnmap/error.hpp"
#include "gnmap/map_io.hpp"
#include "gnmap/rng.hpp"

namespace gnmap {

namespace {

constexpr const char* kSplitNames[3] = {"train", "valid", "test"};

bool inside(const Point2& p, const Extent& e) {
  return p.x >= 0.0 && p.x <= e.width_m && p.y >= 0.0 && p.y <= e.height_m;
}

Point2 clamp_to(const Point2& p, const Extent& e) {
  return {std::clamp(p.x, 0.0, e.width_m), std::clamp(p.y, 0.0, e.height_m)};
}

// Point on the box boundary between an inside and an outside point.
Point2 boundary_crossing(Point2 in, Point2 out, const Extent& e) {
  for (int it = 0; it < 60; ++it) {
    const Point2 mid{0.5 * (in.x + out.x), 0.5 * (in.y + out.y)};
    if (inside(mid, e)) {
      in = mid;
    } else {
      out = mid;
    }
  }
  return clamp_to(in, e);
}

// Longest contiguous run of `samples` inside the extent, closed off with the
// exact boundary crossings.
std::vector<Point2> clip_polyline(const std::vector<Point2>& samples, const Extent& e) {
  std::vector<Point2> best;
  std::vector<Point2> run;
  auto flush = [&] {
    if (run.size() > best.size()) best = run;
    run.clear();
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool in = inside(samples[i], e);
    if (in) {
      if (run.empty() && i > 0) run.push_back(boundary_crossing(samples[i], samples[i - 1], e));
      run.push_back(samples[i]);
    } else if (!run.empty()) {
      run.push_back(boundary_crossing(samples[i - 1], samples[i], e));
      flush();
    }
  }
  flush();
  return best;
}

double polyline_length(const std::vector<Point2>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    len += std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  }
  return len;
}

struct Road {
  Point2 center;
  double heading = 0.0;
  double bend_amp = 0.0;
  double bend_phase = 0.0;
  double bend_period = 1.0;
  double half_width = 0.0;
  double lane_width = 0.0;
  int dividers = 0;

  Point2 at(double s, double offset) const {
    const double lateral =
        offset + bend_amp * std::sin(2.0 * std::numbers::pi * s / bend_period + bend_phase);
    const double dx = std::cos(heading), dy = std::sin(heading);
    return {center.x + s * dx - lateral * dy, center.y + s * dy + lateral * dx};
  }

  std::vector<Point2> line(double offset, const Extent& e) const {
    const double reach = std::hypot(e.width_m, e.height_m);
    std::vector<Point2> samples;
    for (double s = -reach; s <= reach; s += 0.5) samples.push_back(at(s, offset));
    return clip_polyline(samples, e);
  }
};

// Appends the road's lines to `out`; returns false when any line would be
// too short inside the tile.
bool try_road(const Road& road, const Extent& e, std::vector<MapElement>& out) {
  std::vector<MapElement> lines;
  auto add = [&](Category cat, double offset) {
    auto pts = road.line(offset, e);
    if (pts.size() < 2 || polyline_length(pts) < 4.0) return false;
    lines.push_back({cat, std::move(pts), false});
    return true;
  };
  if (!add(Category::road_boundary, -road.half_width)) return false;
  if (!add(Category::road_boundary, road.half_width)) return false;
  for (int i = 1; i <= road.dividers; ++i) {
    if (!add(Category::lane_divider, -road.half_width + i * road.lane_width)) return false;
  }
  out.insert(out.end(), lines.begin(), lines.end());
  return true;
}

Road sample_road(Rng& rng, const Extent& e, const TileStyle& style, double base_heading) {
  Road r;
  r.heading = base_heading + rng.uniform(-style.max_skew, style.max_skew);
  r.center = {rng.uniform(0.3, 0.7) * e.width_m, rng.uniform(0.3, 0.7) * e.height_m};
  r.dividers = rng.between(1, 3);
  r.lane_width = rng.uniform(style.lane_width_min, style.lane_width_max);
  r.half_width = 0.5 * (r.dividers + 1) * r.lane_width;
  r.bend_amp = rng.uniform(0.0, style.max_bend);
  r.bend_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  r.bend_period = rng.uniform(20.0, 40.0);
  return r;
}

bool try_crossing(const Road& road, Rng& rng, const Extent& e, const TileStyle& style,
                  std::vector<MapElement>& out) {
  for (int attempt = 0; attempt < 40; ++attempt) {
    const double s0 = rng.uniform(-4.0, 4.0);
    const double d = 0.5 * style.crossing_depth;
    std::vector<Point2> corners = {road.at(s0 - d, -road.half_width), road.at(s0 + d, -road.half_width),
                                   road.at(s0 + d, road.half_width), road.at(s0 - d, road.half_width)};
    bool ok = true;
    for (const Point2& p : corners) ok = ok && inside(p, e);
    if (ok) {
      out.push_back({Category::pedestrian_crossing, std::move(corners), true});
      return true;
    }
  }
  return false;
}

}  // namespace

void SynthConfig::validate() const {
  if (train_tiles < 1 || valid_tiles < 1 || test_tiles < 1) {
    throw ConfigError("synth: every split needs at least one tile");
  }
  if (tours_per_tile < 1) throw ConfigError("synth: tours per tile must be >= 1");
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw ConfigError("synth: coverage must lie in [0, 1]");
  if (!(jitter_sigma >= 0.0)) throw ConfigError("synth: jitter must be >= 0");
  if (!(category_flip >= 0.0 && category_flip <= 1.0)) {
    throw ConfigError("synth: category flip must lie in [0, 1]");
  }
  if (geometry.h < 1 || geometry.w < 1 || !(geometry.resolution > 0.0)) {
    throw ConfigError("synth: invalid raster geometry");
  }
  if (!(style.crossing_prob >= 0.0 && style.crossing_prob <= 1.0) ||
      !(style.two_crossing_prob >= 0.0 && style.two_crossing_prob <= 1.0) ||
      !(style.second_road_prob >= 0.0 && style.second_road_prob <= 1.0)) {
    throw ConfigError("synth: style probabilities must lie in [0, 1]");
  }
  if (!(style.lane_width_min > 0.0 && style.lane_width_max >= style.lane_width_min)) {
    throw ConfigError("synth: invalid lane width range");
  }
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"train_tiles", c.train_tiles},
          {"valid_tiles", c.valid_tiles},
          {"test_tiles", c.test_tiles},
          {"tours_per_tile", c.tours_per_tile},
          {"coverage", c.coverage},
          {"jitter_sigma", c.jitter_sigma},
          {"category_flip", c.category_flip},
          {"seed", c.seed},
          {"geometry", {{"h", c.geometry.h}, {"w", c.geometry.w}, {"resolution", c.geometry.resolution}}},
          {"style",
           {{"crossing_prob", c.style.crossing_prob},
            {"two_crossing_prob", c.style.two_crossing_prob},
            {"second_road_prob", c.style.second_road_prob},
            {"lane_width_min", c.style.lane_width_min},
            {"lane_width_max", c.style.lane_width_max},
            {"max_bend", c.style.max_bend},
            {"max_skew", c.style.max_skew},
            {"crossing_depth", c.style.crossing_depth}}}};
}

namespace {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys,
                    const char* where) {
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
  }
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    reject_unknown(j,
                   {"train_tiles", "valid_tiles", "test_tiles", "tours_per_tile", "coverage",
                    "jitter_sigma", "category_flip", "seed", "geometry", "style"},
                   "synth config");
    read_key(j, "train_tiles", c.train_tiles);
    read_key(j, "valid_tiles", c.valid_tiles);
    read_key(j, "test_tiles", c.test_tiles);
    read_key(j, "tours_per_tile", c.tours_per_tile);
    read_key(j, "coverage", c.coverage);
    read_key(j, "jitter_sigma", c.jitter_sigma);
    read_key(j, "category_flip", c.category_flip);
    read_key(j, "seed", c.seed);
    if (j.contains("geometry")) {
      const auto& g = j.at("geometry");
      reject_unknown(g, {"h", "w", "resolution"}, "synth geometry");
      read_key(g, "h", c.geometry.h);
      read_key(g, "w", c.geometry.w);
      read_key(g, "resolution", c.geometry.resolution);
    }
    if (j.contains("style")) {
      const auto& s = j.at("style");
      reject_unknown(s,
                     {"crossing_prob", "two_crossing_prob", "second_road_prob", "lane_width_min",
                      "lane_width_max", "max_bend", "max_skew", "crossing_depth"},
                     "synth style");
      read_key(s, "crossing_prob", c.style.crossing_prob);
      read_key(s, "two_crossing_prob", c.style.two_crossing_prob);
      read_key(s, "second_road_prob", c.style.second_road_prob);
      read_key(s, "lane_width_min", c.style.lane_width_min);
      read_key(s, "lane_width_max", c.style.lane_width_max);
      read_key(s, "max_bend", c.style.max_bend);
      read_key(s, "max_skew", c.style.max_skew);
      read_key(s, "crossing_depth", c.style.crossing_depth);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("synth config: ") + ex.what());
  }
  c.validate();
  return c;
}

const std::vector<TileSample>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split: " + name);
}

VectorTile gen_tile(std::uint64_t seed, Extent extent, const TileStyle& style, std::string tile_id) {
  if (!(extent.width_m > 0.0) || !(extent.height_m > 0.0)) {
    throw std::invalid_argument("gen_tile: extent must be positive");
  }
  Rng rng(derive_seed(seed, "tile"));
  VectorTile tile{std::move(tile_id), extent, {}};

  const double first_axis = rng.bernoulli(0.5) ? 0.0 : 0.5 * std::numbers::pi;
  std::vector<Road> roads;
  for (int attempt = 0; attempt < 200; ++attempt) {
    Road r = sample_road(rng, extent, style, first_axis);
    if (try_road(r, extent, tile.elements)) {
      roads.push_back(r);
      break;
    }
  }
  if (roads.empty()) throw std::invalid_argument("gen_tile: extent too small for a road");

  if (rng.bernoulli(style.second_road_prob)) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      Road r = sample_road(rng, extent, style, first_axis + 0.5 * std::numbers::pi);
      if (try_road(r, extent, tile.elements)) {
        roads.push_back(r);
        break;
      }
    }
  }

  if (rng.bernoulli(style.crossing_prob)) {
    const int count = rng.bernoulli(style.two_crossing_prob) ? 2 : 1;
    for (int i = 0; i < count; ++i) {
      const Road& road = roads[rng.below(roads.size())];
      try_crossing(road, rng, extent, style, tile.elements);
    }
  }
  tile.validate();
  return tile;
}

VectorTile degrade_tile(const VectorTile& tile, std::uint64_t seed, double coverage,
                        double jitter_sigma, double category_flip) {
  if (!(coverage >= 0.0 && coverage <= 1.0)) throw std::invalid_argument("coverage must lie in [0, 1]");
  if (!(jitter_sigma >= 0.0)) throw std::invalid_argument("jitter sigma must be >= 0");
  if (!(category_flip >= 0.0 && category_flip <= 1.0)) {
    throw std::invalid_argument("category flip must lie in [0, 1]");
  }
  Rng rng(seed);
  VectorTile seen{tile.tile_id, tile.extent, {}};
  for (const MapElement& e : tile.elements) {
    if (!rng.bernoulli(coverage)) continue;
    MapElement m = e;
    for (Point2& p : m.points) {
      const double dx = rng.normal(0.0, jitter_sigma);
      const double dy = rng.normal(0.0, jitter_sigma);
      p = clamp_to({p.x + dx, p.y + dy}, tile.extent);
    }
    if (category_flip > 0.0 && !m.closed && rng.bernoulli(category_flip)) {
      m.category = m.category == Category::lane_divider ? Category::road_boundary
                                                        : Category::lane_divider;
    }
    seen.elements.push_back(std::move(m));
  }
  return seen;
}

TourObservation simulate_tour(const VectorTile& tile, std::uint64_t seed, double coverage,
                              double jitter_sigma, const RasterGeometry& geometry, int tour_id,
                              double category_flip) {
  const VectorTile seen = degrade_tile(tile, seed, coverage, jitter_sigma, category_flip);
  return {tour_id, rasterize_class(seen, geometry.resolution, geometry.h, geometry.w)};
}

std::uint64_t tile_seed(std::uint64_t root, int split_index, int index) {
  // Low 34 bits cleared: room for three splits of 2^32 indices each.
  const std::uint64_t base = derive_seed(root, "dataset/tiles") & ~((1ULL << 34) - 1);
  return base + (static_cast<std::uint64_t>(split_index) << 32) + static_cast<std::uint32_t>(index);
}

Dataset gen_dataset(const SynthConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  const Extent extent = config.extent();
  const RasterGeometry& g = config.geometry;
  const int counts[3] = {config.train_tiles, config.valid_tiles, config.test_tiles};
  std::vector<TileSample>* outs[3] = {&ds.train, &ds.valid, &ds.test};
  const int t_lo = std::max(1, config.tours_per_tile - 1);
  const int t_hi = config.tours_per_tile + 1;

  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < counts[s]; ++i) {
      TileSample sample;
      sample.seed = tile_seed(config.seed, s, i);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%04d", kSplitNames[s], i);
      sample.tile = gen_tile(sample.seed, extent, config.style, id);
      sample.gt_class = rasterize_class(sample.tile, g.resolution, g.h, g.w);
      sample.gt_gray = foreground(sample.gt_class);
      Rng count_rng(derive_seed(sample.seed, "tour_count"));
      const int tours = count_rng.between(t_lo, t_hi);
      for (int t = 0; t < tours; ++t) {
        sample.tours.push_back(simulate_tour(sample.tile, derive_seed(sample.seed, "tour", t),
                                             config.coverage, config.jitter_sigma, g, t,
                                             config.category_flip));
      }
      outs[s]->push_back(std::move(sample));
    }
  }
  return ds;
}

nlohmann::json dataset_manifest(const Dataset& ds) {
  nlohmann::json splits = nlohmann::json::object();
  for (int s = 0; s < 3; ++s) {
    nlohmann::json tiles = nlohmann::json::array();
    for (const TileSample& t : ds.split(kSplitNames[s])) {
      tiles.push_back({{"tile_id", t.tile.tile_id}, {"seed", t.seed}, {"tours", t.tours.size()}});
    }
    splits[kSplitNames[s]] = std::move(tiles);
  }
  return {{"format", "gnmap-dataset"}, {"version", 1}, {"config", synth_config_to_json(ds.config)},
          {"splits", std::move(splits)}};
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int s = 0; s < 3; ++s) {
    for (const TileSample& t : ds.split(kSplitNames[s])) {
      const auto tile_dir = dir / kSplitNames[s] / t.tile.tile_id;
      save_tile(t.tile, tile_dir / "tile.json");
      save_raster(t.gt_class, tile_dir / "gt_class.bin");
      for (const TourObservation& obs : t.tours) {
        save_raster(obs.observed, tile_dir / ("tour_" + std::to_string(obs.tour_id) + ".bin"));
      }
    }
  }
  write_text(dir / "manifest.json", dataset_manifest(ds).dump(1) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw ConfigError("no dataset manifest at " + manifest_path.string());
  }
  const std::vector<char> bytes = read_file(manifest_path);
  auto manifest = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (manifest.is_discarded()) throw FormatError("cannot parse " + manifest_path.string());

  Dataset ds;
  try {
    ds.config = synth_config_from_json(manifest.at("config"));
    const RasterGeometry& g = ds.config.geometry;
    std::vector<TileSample>* outs[3] = {&ds.train, &ds.valid, &ds.test};
    for (int s = 0; s < 3; ++s) {
      for (const auto& entry : manifest.at("splits").at(kSplitNames[s])) {
        TileSample t;
        const auto id = entry.at("tile_id").get<std::string>();
        const auto tile_dir = dir / kSplitNames[s] / id;
        t.seed = entry.at("seed").get<std::uint64_t>();
        t.tile = load_tile(tile_dir / "tile.json");
        t.gt_class = load_raster(tile_dir / "gt_class.bin");
        if (t.gt_class.geometry() != g) throw FormatError("tile " + id + ": geometry mismatch");
        t.gt_gray = foreground(t.gt_class);
        const int tours = entry.at("tours").get<int>();
        for (int i = 0; i < tours; ++i) {
          ClassRaster obs = load_raster(tile_dir / ("tour_" + std::to_string(i) + ".bin"));
          if (obs.geometry() != g || obs.c != t.gt_class.c) {
            throw FormatError("tile " + id + ": tour geometry mismatch");
          }
          t.tours.push_back({i, std::move(obs)});
        }
        outs[s]->push_back(std::move(t));
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("malformed manifest: ") + ex.what());
  }
  return ds;
}

}  // namespace gnmap
