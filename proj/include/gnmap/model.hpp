#pragma once

// The shared attention autoencoder and its two task heads.
//
// Pretraining: gray tile -> patches -> keep a random subset -> embed (+ learned
// position) -> M encoder blocks -> insert mask tokens at removed positions ->
// N decoder blocks -> per-token linear head -> logistic -> completed tile.
//
// Fusion: each tour raster -> shared conv extractor -> features of all tours
// stacked on the channel axis (missing tours are zeros) -> patches -> embed
// -> encoder -> decoder -> per-token linear head -> per-pixel softmax.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/map_model.hpp"
#include "gnmap/nn/layers.hpp"
#include "gnmap/synth.hpp"

namespace gnmap {

struct ModelConfig {
  RasterGeometry geometry{};
  int patch_h = 8;  // k
  int patch_w = 8;  // l
  int classes = 4;  // c, background included
  int model_dim = 64;
  int num_heads = 4;
  int encoder_layers = 4;  // M
  int decoder_layers = 2;  // N
  int features = 8;        // f, extractor channels per tour
  int max_tours = 6;       // T_max
  int extractor_depth = 2;

  int num_patches() const { return (geometry.h / patch_h) * (geometry.w / patch_w); }
  int patch_size() const { return patch_h * patch_w; }
  nn::AttentionConfig attention() const {
    return {static_cast<std::size_t>(model_dim), static_cast<std::size_t>(num_heads)};
  }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
/// Missing keys keep defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

enum class Phase { pretrain, finetune };
std::string_view phase_name(Phase p);
Phase phase_from_name(std::string_view name);

class GnMapNet {
 public:
  /// Every parameter tensor is initialized from derive_seed(seed, <name>), so
  /// two models built with the same seed agree on every tensor regardless of
  /// which of them is later overwritten.
  GnMapNet(const ModelConfig& config, std::uint64_t seed);

  GnMapNet(const GnMapNet&) = delete;
  GnMapNet& operator=(const GnMapNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// Encoder and decoder block parameters (the weights shared by both phases).
  std::vector<std::string> shared_param_names() const;
  std::vector<nn::Param*> pretrain_params();
  std::vector<nn::Param*> finetune_params();

  /// tokens[i] = patches[i] W + b + pos_embed[indices[i]].
  nn::Var embed_patches(nn::Graph& g, const nn::Tensor& patches, const std::vector<int>& indices,
                        Phase phase);
  nn::Var encode(nn::Graph& g, nn::Var tokens);
  /// Full-length sequence: encoded tokens at kept positions, mask_token +
  /// pos_embed elsewhere.
  nn::Var insert_mask_tokens(nn::Graph& g, nn::Var encoded, const MaskPlan& plan);
  nn::Var decode(nn::Graph& g, nn::Var latent_full);
  nn::Var encoder_block(nn::Graph& g, nn::Var u, int i);
  nn::Var decoder_block(nn::Graph& g, nn::Var v, int j);

  /// Completed tile as a [h, w] node with values in (0, 1).
  nn::Var pretrain_forward(nn::Graph& g, const GrayRaster& gray, const MaskPlan& plan);
  GrayRaster complete(const GrayRaster& gray, const MaskPlan& plan);
  /// Scalar MSE between the completed tile and the unmasked input.
  nn::Var pretrain_loss(nn::Graph& g, const GrayRaster& gray, const MaskPlan& plan);

  /// [f, h, w] features of one tour raster.
  nn::Var extract_tour_features(nn::Graph& g, const ClassRaster& tour);
  /// [h*w, c] per-pixel class probabilities (raster order).
  nn::Var fuse_forward(nn::Graph& g, const std::vector<const ClassRaster*>& tours);
  ClassRaster fuse(const std::vector<TourObservation>& tours);
  nn::Var finetune_loss(nn::Graph& g, const std::vector<const ClassRaster*>& tours,
                        const ClassRaster& target);

 private:
  void check_geometry(const RasterGeometry& g) const;

  ModelConfig cfg_;
  nn::ParamSet params_;
  std::vector<nn::BlockParams> encoder_;
  std::vector<nn::BlockParams> decoder_;
  nn::LinearParams embed_pretrain_;
  nn::LinearParams embed_finetune_;
  nn::LinearParams head_pretrain_;
  nn::LinearParams head_finetune_;
  nn::Param* pos_embed_ = nullptr;   // [num_patches, d]
  nn::Param* mask_token_ = nullptr;  // [1, d]
  std::vector<nn::ConvParams> extractor_;
  std::vector<std::size_t> feature_patch_index_;  // gather map features -> tokens
  std::vector<std::size_t> class_unpatch_index_;  // gather map head -> [h*w, c]
  std::vector<std::size_t> gray_unpatch_index_;   // gather map head -> [h, w]
};

/// Channel-major [c, h, w] copy of a raster (stored channels-innermost).
nn::Tensor to_channel_major(const ClassRaster& r);
std::vector<const ClassRaster*> tour_rasters(const std::vector<TourObservation>& tours);

}  // namespace gnmap
