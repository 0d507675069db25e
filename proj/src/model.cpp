#include "gnmap/model.hpp"

#include <stdexcept>

#include "gnmap/error.hpp"

namespace gnmap {

using nn::Graph;
using nn::Tensor;
using nn::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (geometry.h < 1 || geometry.w < 1 || !(geometry.resolution > 0.0)) fail("invalid geometry");
  if (patch_h < 1 || patch_w < 1 || geometry.h % patch_h != 0 || geometry.w % patch_w != 0) {
    fail("patch size must divide the raster size");
  }
  if (classes < 2) fail("need at least two classes");
  if (model_dim < 1 || num_heads < 1 || model_dim % num_heads != 0) {
    fail("num_heads must divide model_dim");
  }
  if (encoder_layers < 1) fail("encoder needs at least one block");
  if (decoder_layers < 1) fail("decoder needs at least one block");
  if (features < 1 || max_tours < 1 || extractor_depth < 1) fail("extractor sizes must be positive");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"geometry", {{"h", c.geometry.h}, {"w", c.geometry.w}, {"resolution", c.geometry.resolution}}},
          {"patch_h", c.patch_h},
          {"patch_w", c.patch_w},
          {"classes", c.classes},
          {"model_dim", c.model_dim},
          {"num_heads", c.num_heads},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"features", c.features},
          {"max_tours", c.max_tours},
          {"extractor_depth", c.extractor_depth}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "geometry") {
        for (const auto& [gk, gv] : value.items()) {
          if (gk == "h") {
            c.geometry.h = gv.get<int>();
          } else if (gk == "w") {
            c.geometry.w = gv.get<int>();
          } else if (gk == "resolution") {
            c.geometry.resolution = gv.get<double>();
          } else {
            throw ConfigError("model config: unknown geometry key '" + gk + "'");
          }
        }
      } else if (key == "patch_h") { c.patch_h = value.get<int>();
      } else if (key == "patch_w") { c.patch_w = value.get<int>();
      } else if (key == "classes") { c.classes = value.get<int>();
      } else if (key == "model_dim") { c.model_dim = value.get<int>();
      } else if (key == "num_heads") { c.num_heads = value.get<int>();
      } else if (key == "encoder_layers") { c.encoder_layers = value.get<int>();
      } else if (key == "decoder_layers") { c.decoder_layers = value.get<int>();
      } else if (key == "features") { c.features = value.get<int>();
      } else if (key == "max_tours") { c.max_tours = value.get<int>();
      } else if (key == "extractor_depth") { c.extractor_depth = value.get<int>();
      } else {
        throw ConfigError("model config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("model config: ") + ex.what());
  }
  c.validate();
  return c;
}

std::string_view phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

Phase phase_from_name(std::string_view name) {
  if (name == "pretrain") return Phase::pretrain;
  if (name == "finetune") return Phase::finetune;
  throw ConfigError("unknown phase: " + std::string(name));
}

GnMapNet::GnMapNet(const ModelConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.model_dim);
  const auto np = static_cast<std::size_t>(cfg_.num_patches());
  const auto kl = static_cast<std::size_t>(cfg_.patch_size());
  const auto c = static_cast<std::size_t>(cfg_.classes);
  const auto f = static_cast<std::size_t>(cfg_.features);
  auto rng_for = [seed](const std::string& name) { return Rng(derive_seed(seed, name)); };

  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string prefix = "enc." + std::to_string(i);
    Rng rng = rng_for(prefix);
    encoder_.push_back(nn::make_block(params_, prefix, cfg_.attention(), rng));
  }
  for (int j = 0; j < cfg_.decoder_layers; ++j) {
    const std::string prefix = "dec." + std::to_string(j);
    Rng rng = rng_for(prefix);
    decoder_.push_back(nn::make_block(params_, prefix, cfg_.attention(), rng));
  }
  {
    Rng rng = rng_for("pos_embed");
    Tensor t({np, d});
    for (double& v : t.data) v = rng.normal(0.0, 0.02);
    pos_embed_ = &params_.add("pos_embed", std::move(t));
  }
  {
    Rng rng = rng_for("mask_token");
    Tensor t({1, d});
    for (double& v : t.data) v = rng.normal(0.0, 0.02);
    mask_token_ = &params_.add("mask_token", std::move(t));
  }
  {
    Rng rng = rng_for("embed.pretrain");
    embed_pretrain_ = nn::make_linear(params_, "embed.pretrain", kl, d, rng);
  }
  {
    Rng rng = rng_for("head.pretrain");
    head_pretrain_ = nn::make_linear(params_, "head.pretrain", d, kl, rng);
  }
  for (int i = 0; i < cfg_.extractor_depth; ++i) {
    const std::string prefix = "extractor." + std::to_string(i);
    Rng rng = rng_for(prefix);
    extractor_.push_back(nn::make_conv(params_, prefix, i == 0 ? c : f, f, 3, rng));
  }
  {
    Rng rng = rng_for("embed.finetune");
    embed_finetune_ =
        nn::make_linear(params_, "embed.finetune", static_cast<std::size_t>(cfg_.max_tours) * f * kl, d, rng);
  }
  {
    Rng rng = rng_for("head.finetune");
    head_finetune_ = nn::make_linear(params_, "head.finetune", d, kl * c, rng);
  }

  const int h = cfg_.geometry.h, w = cfg_.geometry.w;
  const int k = cfg_.patch_h, l = cfg_.patch_w;
  const std::size_t channels = static_cast<std::size_t>(cfg_.max_tours) * f;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  feature_patch_index_.resize(np * channels * kl);
  class_unpatch_index_.resize(hw * c);
  gray_unpatch_index_.resize(hw);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t o = 0; o < kl; ++o) {
      const std::size_t pix = patch_pixel_index(w, k, l, static_cast<int>(p), static_cast<int>(o));
      for (std::size_t ch = 0; ch < channels; ++ch) {
        feature_patch_index_[(p * channels + ch) * kl + o] = ch * hw + pix;
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        class_unpatch_index_[pix * c + ch] = (p * kl + o) * c + ch;
      }
      gray_unpatch_index_[pix] = p * kl + o;
    }
  }
}

std::vector<std::string> GnMapNet::shared_param_names() const {
  std::vector<std::string> out;
  for (const nn::Param* p : params_.all()) {
    if (p->name.starts_with("enc.") || p->name.starts_with("dec.")) out.push_back(p->name);
  }
  return out;
}

std::vector<nn::Param*> GnMapNet::pretrain_params() {
  return params_.with_prefix({"enc.", "dec.", "pos_embed", "mask_token", "embed.pretrain.",
                              "head.pretrain."});
}

std::vector<nn::Param*> GnMapNet::finetune_params() {
  return params_.with_prefix(
      {"enc.", "dec.", "pos_embed", "extractor.", "embed.finetune.", "head.finetune."});
}

void GnMapNet::check_geometry(const RasterGeometry& g) const {
  if (g.h != cfg_.geometry.h || g.w != cfg_.geometry.w) {
    throw std::invalid_argument("raster geometry does not match the model configuration");
  }
}

Var GnMapNet::embed_patches(Graph& g, const Tensor& patches, const std::vector<int>& indices,
                            Phase phase) {
  const nn::LinearParams& emb = phase == Phase::pretrain ? embed_pretrain_ : embed_finetune_;
  const std::size_t in = emb.w->value.dim(0);
  if (patches.rank() != 2 || patches.dim(1) != in || patches.dim(0) != indices.size()) {
    throw std::invalid_argument("embed_patches: expected [" + std::to_string(indices.size()) + ", " +
                                std::to_string(in) + "], got " + nn::shape_str(patches.shape));
  }
  const auto d = static_cast<std::size_t>(cfg_.model_dim);
  const Var tokens = nn::linear(g, g.constant(patches), emb);
  const Var pos = g.param(*pos_embed_);
  if (indices.size() == static_cast<std::size_t>(cfg_.num_patches())) {
    bool identity = true;
    for (std::size_t i = 0; i < indices.size(); ++i) identity = identity && indices[i] == static_cast<int>(i);
    if (identity) return nn::add(g, tokens, pos);
  }
  std::vector<std::size_t> rows;
  rows.reserve(indices.size() * d);
  for (int idx : indices) {
    if (idx < 0 || idx >= cfg_.num_patches()) throw std::invalid_argument("embed_patches: bad index");
    for (std::size_t c = 0; c < d; ++c) rows.push_back(static_cast<std::size_t>(idx) * d + c);
  }
  return nn::add(g, tokens, nn::gather(g, pos, std::move(rows), {indices.size(), d}));
}

Var GnMapNet::encoder_block(Graph& g, Var u, int i) { return nn::block(g, u, encoder_.at(i)); }

Var GnMapNet::decoder_block(Graph& g, Var v, int j) { return nn::block(g, v, decoder_.at(j)); }

Var GnMapNet::encode(Graph& g, Var tokens) {
  for (int i = 0; i < cfg_.encoder_layers; ++i) tokens = encoder_block(g, tokens, i);
  return tokens;
}

Var GnMapNet::decode(Graph& g, Var latent) {
  const nn::Shape& s = g.shape(latent);
  if (s.size() != 2 || s[0] != static_cast<std::size_t>(cfg_.num_patches())) {
    throw std::invalid_argument("decode: latent must hold every patch position");
  }
  for (int j = 0; j < cfg_.decoder_layers; ++j) latent = decoder_block(g, latent, j);
  return latent;
}

Var GnMapNet::insert_mask_tokens(Graph& g, Var encoded, const MaskPlan& plan) {
  const auto d = static_cast<std::size_t>(cfg_.model_dim);
  const auto np = static_cast<std::size_t>(cfg_.num_patches());
  if (plan.num_patches != cfg_.num_patches() || g.shape(encoded).at(0) != plan.kept.size()) {
    throw std::invalid_argument("insert_mask_tokens: plan does not match the encoded sequence");
  }
  const std::vector<int> removed = plan.removed();
  if (removed.empty()) return encoded;

  std::vector<std::size_t> tok_idx, pos_idx;
  for (int r : removed) {
    for (std::size_t c = 0; c < d; ++c) {
      tok_idx.push_back(c);
      pos_idx.push_back(static_cast<std::size_t>(r) * d + c);
    }
  }
  const Var fill = nn::add(
      g, nn::gather(g, g.param(*mask_token_), std::move(tok_idx), {removed.size(), d}),
      nn::gather(g, g.param(*pos_embed_), std::move(pos_idx), {removed.size(), d}));
  const Var stacked = nn::concat0(g, std::vector<Var>{encoded, fill});

  // Row p of the output comes from the encoded row of p if kept, else from fill.
  std::vector<std::size_t> source_row(np);
  for (std::size_t i = 0; i < plan.kept.size(); ++i) source_row[plan.kept[i]] = i;
  for (std::size_t i = 0; i < removed.size(); ++i) source_row[removed[i]] = plan.kept.size() + i;
  std::vector<std::size_t> index;
  index.reserve(np * d);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t c = 0; c < d; ++c) index.push_back(source_row[p] * d + c);
  }
  return nn::gather(g, stacked, std::move(index), {np, d});
}

Var GnMapNet::pretrain_forward(Graph& g, const GrayRaster& gray, const MaskPlan& plan) {
  check_geometry(gray.geometry());
  const PatchGrid grid = split_patches(gray, cfg_.patch_h, cfg_.patch_w);
  const VisiblePatches visible = apply_mask(grid, plan);
  const auto kl = static_cast<std::size_t>(cfg_.patch_size());
  Tensor patches({visible.indices.size(), kl}, visible.data);

  const Var tokens = embed_patches(g, patches, visible.indices, Phase::pretrain);
  const Var latent = insert_mask_tokens(g, encode(g, tokens), plan);
  const Var logits = nn::linear(g, decode(g, latent), head_pretrain_);
  const Var probs = nn::sigmoid(g, logits);
  return nn::gather(g, probs, gray_unpatch_index_,
                    {static_cast<std::size_t>(gray.h), static_cast<std::size_t>(gray.w)});
}

GrayRaster GnMapNet::complete(const GrayRaster& gray, const MaskPlan& plan) {
  Graph g;
  const Var out = pretrain_forward(g, gray, plan);
  GrayRaster r(gray.h, gray.w, gray.resolution);
  r.values = g.value(out).data;
  return r;
}

Var GnMapNet::pretrain_loss(Graph& g, const GrayRaster& gray, const MaskPlan& plan) {
  const Var out = pretrain_forward(g, gray, plan);
  return nn::mse_loss(g, out, Tensor(g.shape(out), gray.values));
}

Tensor to_channel_major(const ClassRaster& r) {
  const auto c = static_cast<std::size_t>(r.c);
  const std::size_t hw = static_cast<std::size_t>(r.h) * r.w;
  Tensor t({c, static_cast<std::size_t>(r.h), static_cast<std::size_t>(r.w)});
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) t.data[ch * hw + p] = r.values[p * c + ch];
  }
  return t;
}

std::vector<const ClassRaster*> tour_rasters(const std::vector<TourObservation>& tours) {
  std::vector<const ClassRaster*> out;
  out.reserve(tours.size());
  for (const auto& t : tours) out.push_back(&t.observed);
  return out;
}

Var GnMapNet::extract_tour_features(Graph& g, const ClassRaster& tour) {
  check_geometry(tour.geometry());
  if (tour.c != cfg_.classes) throw std::invalid_argument("tour raster has the wrong channel count");
  Var x = g.constant(to_channel_major(tour));
  for (std::size_t i = 0; i < extractor_.size(); ++i) {
    if (i > 0) x = nn::gelu(g, x);
    x = nn::conv2d(g, x, extractor_[i]);
  }
  return x;
}

Var GnMapNet::fuse_forward(Graph& g, const std::vector<const ClassRaster*>& tours) {
  if (tours.empty()) throw std::invalid_argument("fuse_forward: at least one tour is required");
  if (tours.size() > static_cast<std::size_t>(cfg_.max_tours)) {
    throw std::invalid_argument("fuse_forward: more tours than max_tours");
  }
  const auto f = static_cast<std::size_t>(cfg_.features);
  const auto h = static_cast<std::size_t>(cfg_.geometry.h);
  const auto w = static_cast<std::size_t>(cfg_.geometry.w);
  const auto np = static_cast<std::size_t>(cfg_.num_patches());
  const auto kl = static_cast<std::size_t>(cfg_.patch_size());
  const auto c = static_cast<std::size_t>(cfg_.classes);
  const auto tmax = static_cast<std::size_t>(cfg_.max_tours);

  std::vector<Var> feats;
  for (const ClassRaster* t : tours) feats.push_back(extract_tour_features(g, *t));
  if (tours.size() < tmax) feats.push_back(g.constant(Tensor({(tmax - tours.size()) * f, h, w})));
  const Var stacked = nn::concat0(g, feats);
  const Var patches = nn::gather(g, stacked, feature_patch_index_, {np, tmax * f * kl});

  const Var tokens = nn::add(g, nn::linear(g, patches, embed_finetune_), g.param(*pos_embed_));
  const Var logits = nn::linear(g, decode(g, encode(g, tokens)), head_finetune_);
  return nn::softmax(g, nn::gather(g, logits, class_unpatch_index_, {h * w, c}));
}

ClassRaster GnMapNet::fuse(const std::vector<TourObservation>& tours) {
  Graph g;
  const Var out = fuse_forward(g, tour_rasters(tours));
  ClassRaster r(cfg_.geometry.h, cfg_.geometry.w, cfg_.classes, cfg_.geometry.resolution);
  r.values = g.value(out).data;
  return r;
}

Var GnMapNet::finetune_loss(Graph& g, const std::vector<const ClassRaster*>& tours,
                            const ClassRaster& target) {
  check_geometry(target.geometry());
  const Var probs = fuse_forward(g, tours);
  return nn::ce_loss(g, probs, Tensor(g.shape(probs), target.values));
}

}  // namespace gnmap
