#include "gnmap/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "gnmap/error.hpp"
#include "gnmap/nn/optim.hpp"
#include "gnmap/rng.hpp"

namespace gnmap {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("train: mask ratio must lie in [0, 1)");
  if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("train: clip_norm must be >= 0");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"steps", c.steps},           {"batch", c.batch}, {"lr", c.lr},
          {"mask_ratio", c.mask_ratio}, {"augment", c.augment}, {"warmup_steps", c.warmup_steps},
          {"clip_norm", c.clip_norm}, {"seed", c.seed}};
}

TrainConfig default_train_config(Phase phase) {
  TrainConfig c;
  if (phase == Phase::pretrain) {
    c.lr = 5e-4;
    c.warmup_steps = 200;
  } else {
    c.lr = 3e-4;
  }
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  TrainConfig c = base;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "steps") { c.steps = value.get<int>();
      } else if (key == "batch") { c.batch = value.get<int>();
      } else if (key == "lr") { c.lr = value.get<double>();
      } else if (key == "mask_ratio") { c.mask_ratio = value.get<double>();
      } else if (key == "augment") { c.augment = value.get<bool>();
      } else if (key == "warmup_steps") { c.warmup_steps = value.get<int>();
      } else if (key == "clip_norm") { c.clip_norm = value.get<double>();
      } else if (key == "seed") { c.seed = value.get<std::uint64_t>();
      } else {
        throw ConfigError("train config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("train config: ") + ex.what());
  }
  c.validate();
  return c;
}

BatchSampler::BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n == 0) throw std::invalid_argument("BatchSampler: empty dataset");
}

void BatchSampler::reshuffle() {
  ++epoch_;
  pos_ = 0;
  order_.resize(n_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng(derive_seed(seed_, "epoch", static_cast<std::uint64_t>(epoch_)));
  for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
}

std::vector<BatchSampler::Item> BatchSampler::next(int batch) {
  std::vector<Item> out;
  for (int b = 0; b < batch; ++b) {
    if (epoch_ < 0 || pos_ == n_) reshuffle();
    out.push_back({order_[pos_++], epoch_});
  }
  return out;
}

MaskPlan training_mask(const ModelConfig& cfg, double mask_ratio, std::uint64_t seed, long epoch,
                       std::size_t index) {
  const std::uint64_t s = derive_seed(derive_seed(seed, "mask", static_cast<std::uint64_t>(epoch)),
                                      "tile", index);
  return sample_mask(cfg.num_patches(), mask_ratio, s);
}

Augmentation training_augmentation(const RasterGeometry& geometry, std::size_t tours,
                                   std::uint64_t seed, long epoch, std::size_t index) {
  Rng rng(derive_seed(derive_seed(seed, "augment", static_cast<std::uint64_t>(epoch)), "tile", index));
  Augmentation a;
  a.transform = static_cast<int>(rng.below(static_cast<std::uint64_t>(dihedral_count(geometry.h, geometry.w))));
  a.order.resize(tours);
  std::iota(a.order.begin(), a.order.end(), std::size_t{0});
  for (std::size_t i = tours; i > 1; --i) std::swap(a.order[i - 1], a.order[rng.below(i)]);
  return a;
}

namespace {

void clip_gradients(const std::vector<nn::Param*>& params, double max_norm) {
  double sq = 0.0;
  for (const nn::Param* p : params)
    for (double g : p->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;  // also leaves non-finite gradients for Adam to report
  const double s = max_norm / norm;
  for (nn::Param* p : params)
    for (double& g : p->grad) g *= s;
}

template <class LossFn>
TrainResult run(GnMapNet& net, std::vector<nn::Param*> params, std::size_t n, const TrainConfig& cfg,
                const StepCallback& on_step, LossFn&& loss_of) {
  cfg.validate();
  if (n == 0) throw ConfigError("train: empty training split");
  nn::Adam adam(params, {cfg.lr});
  BatchSampler sampler(n, derive_seed(cfg.seed, "batches"));
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.steps));
  const double inv_b = 1.0 / cfg.batch;
  for (long step = 0; step < cfg.steps; ++step) {
    adam.zero_grad();
    double total = 0.0;
    for (const auto& item : sampler.next(cfg.batch)) {
      nn::Graph g;
      const nn::Var loss = loss_of(g, item);
      const double v = g.value(loss)[0];
      if (!std::isfinite(v)) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step));
      }
      total += v;
      g.backward(nn::scale(g, loss, inv_b));
    }
    if (cfg.warmup_steps > 0) {
      adam.set_lr(cfg.lr * std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps));
    }
    if (cfg.clip_norm > 0.0) clip_gradients(params, cfg.clip_norm);
    try {
      adam.step();
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    const double mean = total * inv_b;
    result.losses.push_back(mean);
    if (on_step) on_step(step, mean);
  }
  (void)net;
  return result;
}

}  // namespace

TrainResult pretrain_run(GnMapNet& net, std::span<const TileSample> tiles, const TrainConfig& cfg,
                         const StepCallback& on_step) {
  return run(net, net.pretrain_params(), tiles.size(), cfg, on_step,
             [&](nn::Graph& g, const BatchSampler::Item& item) {
               const MaskPlan plan =
                   training_mask(net.config(), cfg.mask_ratio, cfg.seed, item.epoch, item.index);
               const GrayRaster& gray = tiles[item.index].gt_gray;
               if (!cfg.augment) return net.pretrain_loss(g, gray, plan);
               const Augmentation a =
                   training_augmentation(gray.geometry(), 0, cfg.seed, item.epoch, item.index);
               return net.pretrain_loss(g, dihedral(gray, a.transform), plan);
             });
}

TrainResult finetune_run(GnMapNet& net, std::span<const TileSample> tiles, const TrainConfig& cfg,
                         const StepCallback& on_step) {
  for (const TileSample& t : tiles) {
    if (t.tours.empty()) throw ConfigError("finetune: tile " + t.tile.tile_id + " has no tours");
  }
  return run(net, net.finetune_params(), tiles.size(), cfg, on_step,
             [&](nn::Graph& g, const BatchSampler::Item& item) {
               const TileSample& t = tiles[item.index];
               if (!cfg.augment) return net.finetune_loss(g, tour_rasters(t.tours), t.gt_class);
               const Augmentation a = training_augmentation(t.gt_class.geometry(), t.tours.size(),
                                                            cfg.seed, item.epoch, item.index);
               std::vector<ClassRaster> moved;
               moved.reserve(t.tours.size());
               for (std::size_t i : a.order) moved.push_back(dihedral(t.tours[i].observed, a.transform));
               std::vector<const ClassRaster*> ptrs;
               for (const ClassRaster& r : moved) ptrs.push_back(&r);
               return net.finetune_loss(g, ptrs, dihedral(t.gt_class, a.transform));
             });
}

double mean_completion_mse(GnMapNet& net, std::span<const TileSample> tiles, double mask_ratio,
                           std::uint64_t seed) {
  double total = 0.0;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const MaskPlan plan = sample_mask(net.config().num_patches(), mask_ratio,
                                      derive_seed(seed, "eval-mask", i));
    nn::Graph g;
    total += g.value(net.pretrain_loss(g, tiles[i].gt_gray, plan))[0];
  }
  return tiles.empty() ? 0.0 : total / static_cast<double>(tiles.size());
}

double mean_fusion_ce(GnMapNet& net, std::span<const TileSample> tiles) {
  double total = 0.0;
  for (const TileSample& t : tiles) {
    nn::Graph g;
    total += g.value(net.finetune_loss(g, tour_rasters(t.tours), t.gt_class))[0];
  }
  return tiles.empty() ? 0.0 : total / static_cast<double>(tiles.size());
}

std::string loss_curve_csv(const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
    out += buf;
  }
  return out;
}

}  // namespace gnmap
