#include "gnmap/nn/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace gnmap::nn {

void AttentionConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw std::invalid_argument("attention: num_heads must divide model_dim");
  }
}

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-a, a);
  return t;
}

}  // namespace

LinearParams make_linear(ParamSet& ps, const std::string& prefix, std::size_t in,
                         std::size_t out, Rng& rng) {
  LinearParams p;
  p.w = &ps.add(prefix + ".w", glorot({in, out}, in, out, rng));
  p.b = &ps.add(prefix + ".b", Tensor({out}));
  return p;
}

AttentionParams make_attention(ParamSet& ps, const std::string& prefix,
                               const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.model_dim;
  AttentionParams p{cfg, make_linear(ps, prefix + ".q", d, d, rng),
                    make_linear(ps, prefix + ".k", d, d, rng),
                    make_linear(ps, prefix + ".v", d, d, rng),
                    make_linear(ps, prefix + ".o", d, d, rng)};
  return p;
}

MlpParams make_mlp(ParamSet& ps, const std::string& prefix, std::size_t d, Rng& rng) {
  return {make_linear(ps, prefix + ".up", d, 4 * d, rng),
          make_linear(ps, prefix + ".down", 4 * d, d, rng)};
}

LayerNormParams make_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t d) {
  LayerNormParams p;
  p.gamma = &ps.add(prefix + ".gamma", Tensor({d}, 1.0));
  p.beta = &ps.add(prefix + ".beta", Tensor({d}));
  return p;
}

BlockParams make_block(ParamSet& ps, const std::string& prefix, const AttentionConfig& cfg,
                       Rng& rng) {
  BlockParams b;
  b.attn = make_attention(ps, prefix + ".msa", cfg, rng);
  b.mlp = make_mlp(ps, prefix + ".mlp", cfg.model_dim, rng);
  b.ln = make_layer_norm(ps, prefix + ".ln", cfg.model_dim);
  return b;
}

ConvParams make_conv(ParamSet& ps, const std::string& prefix, std::size_t in_channels,
                     std::size_t out_channels, std::size_t kernel, Rng& rng) {
  const std::size_t fan = kernel * kernel;
  ConvParams p;
  p.kernels = &ps.add(prefix + ".w", glorot({out_channels, in_channels, kernel, kernel},
                                            in_channels * fan, out_channels * fan, rng));
  p.bias = &ps.add(prefix + ".b", Tensor({out_channels}));
  return p;
}

Var linear(Graph& g, Var x, const LinearParams& p) {
  return add_bias(g, matmul(g, x, g.param(*p.w)), g.param(*p.b));
}

Var msa(Graph& g, Var x, const AttentionParams& p) {
  const Shape& s = g.shape(x);
  if (s.size() != 2 || s[1] != p.cfg.model_dim) {
    throw std::invalid_argument("msa: expected [n, " + std::to_string(p.cfg.model_dim) +
                                "], got " + shape_str(s));
  }
  if (s[0] == 0) throw std::invalid_argument("msa: empty sequence");
  const std::size_t hd = p.cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  const Var q = linear(g, x, p.q);
  const Var k = linear(g, x, p.k);
  const Var v = linear(g, x, p.v);
  std::vector<Var> heads;
  heads.reserve(p.cfg.num_heads);
  for (std::size_t h = 0; h < p.cfg.num_heads; ++h) {
    const Var qh = slice_cols(g, q, h * hd, hd);
    const Var kh = slice_cols(g, k, h * hd, hd);
    const Var vh = slice_cols(g, v, h * hd, hd);
    const Var weights = softmax(g, scale(g, matmul_nt(g, qh, kh), inv_sqrt));
    heads.push_back(matmul(g, weights, vh));
  }
  const Var merged = heads.size() == 1 ? heads[0] : concat_cols(g, heads);
  return linear(g, merged, p.o);
}

Var mlp(Graph& g, Var x, const MlpParams& p) {
  return linear(g, gelu(g, linear(g, x, p.up)), p.down);
}

Var layer_norm(Graph& g, Var x, const LayerNormParams& p) {
  return layer_norm(g, x, g.param(*p.gamma), g.param(*p.beta), p.eps);
}

Var block(Graph& g, Var u, const BlockParams& p) {
  const Var attended = add(g, msa(g, u, p.attn), u);
  return layer_norm(g, add(g, mlp(g, attended, p.mlp), attended), p.ln);
}

Var conv2d(Graph& g, Var x, const ConvParams& p) {
  return conv2d(g, x, g.param(*p.kernels), g.param(*p.bias));
}

}  // namespace gnmap::nn
