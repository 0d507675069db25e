#pragma once

// Layers of the shared autoencoder: linear maps, multi-head self-attention,
// the GELU MLP, layer normalization, and the residual block that stacks them.

#include <string>

#include "gnmap/nn/graph.hpp"
#include "gnmap/rng.hpp"

namespace gnmap::nn {

struct AttentionConfig {
  std::size_t model_dim = 64;
  std::size_t num_heads = 4;

  std::size_t head_dim() const { return model_dim / num_heads; }
  /// Throws std::invalid_argument unless num_heads divides model_dim.
  void validate() const;
};

struct LinearParams {
  Param* w = nullptr;  // [in, out]
  Param* b = nullptr;  // [out]
};

struct AttentionParams {
  AttentionConfig cfg;
  LinearParams q, k, v, o;  // each [d, d]; heads are column blocks of q/k/v
};

struct MlpParams {
  LinearParams up;    // [d, 4d]
  LinearParams down;  // [4d, d]
};

struct LayerNormParams {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  double eps = 1e-5;
};

struct BlockParams {
  AttentionParams attn;
  MlpParams mlp;
  LayerNormParams ln;
};

struct ConvParams {
  Param* kernels = nullptr;  // [co, ci, kh, kw]
  Param* bias = nullptr;     // [co]
};

/// Glorot-uniform weights, zero bias. Registers "<prefix>.w" and "<prefix>.b".
LinearParams make_linear(ParamSet& ps, const std::string& prefix, std::size_t in,
                         std::size_t out, Rng& rng);
AttentionParams make_attention(ParamSet& ps, const std::string& prefix,
                               const AttentionConfig& cfg, Rng& rng);
MlpParams make_mlp(ParamSet& ps, const std::string& prefix, std::size_t d, Rng& rng);
/// gamma = 1, beta = 0.
LayerNormParams make_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t d);
/// Names: <prefix>.msa.*, <prefix>.mlp.*, <prefix>.ln.*
BlockParams make_block(ParamSet& ps, const std::string& prefix, const AttentionConfig& cfg,
                       Rng& rng);
ConvParams make_conv(ParamSet& ps, const std::string& prefix, std::size_t in_channels,
                     std::size_t out_channels, std::size_t kernel, Rng& rng);

/// y = x W + b for x[n, in].
Var linear(Graph& g, Var x, const LinearParams& p);

/// Unmasked scaled dot-product attention, heads concatenated, then the
/// output projection.
Var msa(Graph& g, Var x, const AttentionParams& p);

/// linear(d -> 4d), GELU, linear(4d -> d).
Var mlp(Graph& g, Var x, const MlpParams& p);

Var layer_norm(Graph& g, Var x, const LayerNormParams& p);

/// U' = MSA(U) + U;  out = LN(MLP(U') + U').
Var block(Graph& g, Var u, const BlockParams& p);

Var conv2d(Graph& g, Var x, const ConvParams& p);

}  // namespace gnmap::nn
