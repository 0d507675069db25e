#pragma once

// Synthetic multi-tour tile datasets: ground-truth road tiles plus degraded
// per-tour observations (element dropout and vertex jitter).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/map_model.hpp"

namespace gnmap {

struct TileStyle {
  double crossing_prob = 0.5;     // P(tile has at least one crossing)
  double two_crossing_prob = 0.3; // P(second crossing | at least one)
  double second_road_prob = 0.5;
  double lane_width_min = 2.2;    // meters
  double lane_width_max = 3.0;
  double max_bend = 0.6;          // lateral bend amplitude, meters
  double max_skew = 0.35;         // heading deviation from the tile axes, radians
  double crossing_depth = 1.5;    // crossing length along the road, meters

  bool operator==(const TileStyle&) const = default;
};

struct TourObservation {
  int tour_id = 0;
  ClassRaster observed;
};

struct TileSample {
  VectorTile tile;
  std::uint64_t seed = 0;
  ClassRaster gt_class;
  GrayRaster gt_gray;
  std::vector<TourObservation> tours;
};

struct SynthConfig {
  int train_tiles = 40;
  int valid_tiles = 5;
  int test_tiles = 5;
  int tours_per_tile = 5;
  double coverage = 0.65;
  double jitter_sigma = 0.15;  // meters
  double category_flip = 0.0;  // P(divider <-> boundary swap) per retained line
  std::uint64_t seed = 0;
  RasterGeometry geometry{};
  TileStyle style{};

  Extent extent() const { return {geometry.w * geometry.resolution, geometry.h * geometry.resolution}; }
  /// Throws ConfigError on any out-of-range field.
  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

nlohmann::json synth_config_to_json(const SynthConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct Dataset {
  SynthConfig config;
  std::vector<TileSample> train;
  std::vector<TileSample> valid;
  std::vector<TileSample> test;

  const std::vector<TileSample>& split(const std::string& name) const;
};

/// Deterministic per seed: 1-2 roads crossing the tile, each with two
/// boundaries and 1-3 lane dividers, plus 0-2 rectangular crossings.
VectorTile gen_tile(std::uint64_t seed, Extent extent, const TileStyle& style = {},
                    std::string tile_id = "tile");

/// Each element is kept with probability `coverage`; kept vertices get
/// isotropic Gaussian noise of std `jitter_sigma` meters (clamped to the
/// extent).
VectorTile degrade_tile(const VectorTile& tile, std::uint64_t seed, double coverage,
                        double jitter_sigma, double category_flip = 0.0);

/// degrade_tile, rasterized with the default category order.
TourObservation simulate_tour(const VectorTile& tile, std::uint64_t seed, double coverage,
                              double jitter_sigma, const RasterGeometry& geometry,
                              int tour_id = 0, double category_flip = 0.0);

/// Seed of tile `index` in `split`. Splits occupy disjoint 2^32-wide ranges.
std::uint64_t tile_seed(std::uint64_t root, int split_index, int index);

Dataset gen_dataset(const SynthConfig& config);

/// Layout: <dir>/manifest.json and <dir>/<split>/<tile_id>/{tile.json,
/// gt_class.bin, tour_<i>.bin}.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json dataset_manifest(const Dataset& dataset);

}  // namespace gnmap
