#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/model.hpp"
#include "gnmap/synth.hpp"

namespace gnmap {

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 1e-3;
  double mask_ratio = 0.75;  // pretraining only
  // Each visit of a tile draws one grid symmetry (applied to input and target
  // alike) and, when finetuning, a random tour order.
  bool augment = true;
  int warmup_steps = 0;    // learning rate ramps linearly over these steps
  double clip_norm = 0.0;  // global gradient norm cap; 0 disables
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

/// Tuned defaults per phase for the default model. At the generic 1e-3 both
/// losses tend to settle on a constant answer (the foreground mean when
/// completing, all background when fusing) and stay there.
TrainConfig default_train_config(Phase phase);

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Keys present in `j` override `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct TrainResult {
  std::vector<double> losses;  // mean batch loss per step
};

/// Called after every optimizer step with (step index, batch loss).
using StepCallback = std::function<void(long, double)>;

/// Deterministic epoch-wise shuffled batches over n items. Each epoch is a
/// fresh permutation drawn from derive_seed(seed, "epoch", e).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed);
  struct Item {
    std::size_t index;
    long epoch;
  };
  std::vector<Item> next(int batch);

 private:
  void reshuffle();
  std::size_t n_;
  std::uint64_t seed_;
  long epoch_ = -1;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

/// Mask plan of tile `index` in `epoch`: fresh per tile per epoch.
MaskPlan training_mask(const ModelConfig& cfg, double mask_ratio, std::uint64_t seed,
                       long epoch, std::size_t index);

struct Augmentation {
  int transform = 0;               // dihedral() index
  std::vector<std::size_t> order;  // tour permutation
};

/// Augmentation of tile `index` in `epoch`, drawn from
/// derive_seed(derive_seed(seed, "augment", epoch), "tile", index).
Augmentation training_augmentation(const RasterGeometry& geometry, std::size_t tours,
                                   std::uint64_t seed, long epoch, std::size_t index);

/// Minimizes the completion MSE with Adam. Throws DivergenceError naming the
/// step when the loss becomes non-finite.
TrainResult pretrain_run(GnMapNet& net, std::span<const TileSample> tiles, const TrainConfig& cfg,
                         const StepCallback& on_step = {});

/// Minimizes the per-pixel cross-entropy of the fused raster against the
/// one-hot ground truth.
TrainResult finetune_run(GnMapNet& net, std::span<const TileSample> tiles, const TrainConfig& cfg,
                         const StepCallback& on_step = {});

/// Mean completion MSE over tiles, one mask per tile from derive_seed(seed, "eval-mask", i).
double mean_completion_mse(GnMapNet& net, std::span<const TileSample> tiles, double mask_ratio,
                           std::uint64_t seed);
/// Mean fused cross-entropy over tiles.
double mean_fusion_ce(GnMapNet& net, std::span<const TileSample> tiles);

std::string loss_curve_csv(const std::vector<double>& losses);

}  // namespace gnmap
