#include "gnmap/grad_suite.hpp"

#include <functional>
#include <map>
#include <stdexcept>

#include "gnmap/model.hpp"
#include "gnmap/nn/layers.hpp"
#include "gnmap/synth.hpp"

namespace gnmap {

using nn::Graph;
using nn::Param;
using nn::ParamSet;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Random weights for the scalar head. A plain sum would make some gradients
// vanish identically (e.g. everything upstream of a softmax or layer norm).
Tensor head_weights(const Shape& s, Rng& rng) { return random_tensor(s, rng); }

Tensor one_hot_rows(std::size_t n, std::size_t c, Rng& rng) {
  Tensor t({n, c});
  for (std::size_t i = 0; i < n; ++i) t.at(i, rng.below(c)) = 1.0;
  return t;
}

struct Case {
  ParamSet params;
  std::function<Var(Graph&)> forward;
};

using Builder = std::function<void(Case&, Rng&)>;

// Reads a Param and scalarizes an op's output with a fixed random head.
Var head(Graph& g, Var y, const Tensor& w) { return nn::dot_const(g, y, w); }

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.between(static_cast<int>(lo), static_cast<int>(hi)));
}

const std::map<std::string, Builder>& builders() {
  static const std::map<std::string, Builder> table = {
      {"matmul",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 5), m = pick(rng, 1, 4);
         Param& a = c.params.add("a", random_tensor({n, k}, rng));
         Param& b = c.params.add("b", random_tensor({k, m}, rng));
         const Tensor w = head_weights({n, m}, rng);
         c.forward = [&a, &b, w](Graph& g) { return head(g, nn::matmul(g, g.param(a), g.param(b)), w); };
       }},
      {"matmul_nt",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 5), m = pick(rng, 1, 4);
         Param& a = c.params.add("a", random_tensor({n, k}, rng));
         Param& b = c.params.add("b", random_tensor({m, k}, rng));
         const Tensor w = head_weights({n, m}, rng);
         c.forward = [&a, &b, w](Graph& g) {
           return head(g, nn::matmul_nt(g, g.param(a), g.param(b)), w);
         };
       }},
      {"add",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
         Param& a = c.params.add("a", random_tensor(s, rng));
         Param& b = c.params.add("b", random_tensor(s, rng));
         const Tensor w = head_weights(s, rng);
         c.forward = [&a, &b, w](Graph& g) { return head(g, nn::add(g, g.param(a), g.param(b)), w); };
       }},
      {"add_bias",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), m = pick(rng, 1, 5);
         Param& x = c.params.add("x", random_tensor({n, m}, rng));
         Param& b = c.params.add("bias", random_tensor({m}, rng));
         const Tensor w = head_weights({n, m}, rng);
         c.forward = [&x, &b, w](Graph& g) { return head(g, nn::add_bias(g, g.param(x), g.param(b)), w); };
       }},
      {"scale",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
         const double k = rng.uniform(-2, 2);
         Param& x = c.params.add("x", random_tensor(s, rng));
         const Tensor w = head_weights(s, rng);
         c.forward = [&x, k, w](Graph& g) { return head(g, nn::scale(g, g.param(x), k), w); };
       }},
      {"mul",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
         Param& a = c.params.add("a", random_tensor(s, rng));
         Param& b = c.params.add("b", random_tensor(s, rng));
         const Tensor w = head_weights(s, rng);
         c.forward = [&a, &b, w](Graph& g) { return head(g, nn::mul(g, g.param(a), g.param(b)), w); };
       }},
      {"gelu",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 2, 6)};
         Param& x = c.params.add("x", random_tensor(s, rng, -3, 3));
         const Tensor w = head_weights(s, rng);
         c.forward = [&x, w](Graph& g) { return head(g, nn::gelu(g, g.param(x)), w); };
       }},
      {"sigmoid",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 2, 6)};
         Param& x = c.params.add("x", random_tensor(s, rng, -4, 4));
         const Tensor w = head_weights(s, rng);
         c.forward = [&x, w](Graph& g) { return head(g, nn::sigmoid(g, g.param(x)), w); };
       }},
      {"softmax",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 2, 6)};
         Param& x = c.params.add("x", random_tensor(s, rng, -2, 2));
         const Tensor w = head_weights(s, rng);
         c.forward = [&x, w](Graph& g) { return head(g, nn::softmax(g, g.param(x)), w); };
       }},
      {"layer_norm",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), d = pick(rng, 2, 7);
         Param& x = c.params.add("x", random_tensor({n, d}, rng, -2, 2));
         Param& gamma = c.params.add("gamma", random_tensor({d}, rng, 0.5, 1.5));
         Param& beta = c.params.add("beta", random_tensor({d}, rng));
         const Tensor w = head_weights({n, d}, rng);
         c.forward = [&x, &gamma, &beta, w](Graph& g) {
           return head(g, nn::layer_norm(g, g.param(x), g.param(gamma), g.param(beta), 1e-5), w);
         };
       }},
      {"slice_cols",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), m = pick(rng, 2, 6);
         const std::size_t start = pick(rng, 0, m - 1), len = pick(rng, 1, m - start);
         Param& x = c.params.add("x", random_tensor({n, m}, rng));
         const Tensor w = head_weights({n, len}, rng);
         c.forward = [&x, start, len, w](Graph& g) {
           return head(g, nn::slice_cols(g, g.param(x), start, len), w);
         };
       }},
      {"concat_cols",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), m1 = pick(rng, 1, 3), m2 = pick(rng, 1, 3);
         Param& a = c.params.add("a", random_tensor({n, m1}, rng));
         Param& b = c.params.add("b", random_tensor({n, m2}, rng));
         const Tensor w = head_weights({n, m1 + m2}, rng);
         c.forward = [&a, &b, w](Graph& g) {
           const Var parts[] = {g.param(a), g.param(b)};
           return head(g, nn::concat_cols(g, parts), w);
         };
       }},
      {"concat0",
       [](Case& c, Rng& rng) {
         const std::size_t n1 = pick(rng, 1, 3), n2 = pick(rng, 1, 3), m = pick(rng, 1, 4);
         Param& a = c.params.add("a", random_tensor({n1, m}, rng));
         Param& b = c.params.add("b", random_tensor({n2, m}, rng));
         const Tensor w = head_weights({n1 + n2, m}, rng);
         c.forward = [&a, &b, w](Graph& g) {
           const Var parts[] = {g.param(a), g.param(b)};
           return head(g, nn::concat0(g, parts), w);
         };
       }},
      {"gather",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 2, 8), out = pick(rng, 3, 10);
         Param& x = c.params.add("x", random_tensor({n}, rng));
         std::vector<std::size_t> idx(out);
         for (auto& i : idx) i = rng.below(n);  // repeats exercise accumulation
         const Tensor w = head_weights({out}, rng);
         c.forward = [&x, idx, out, w](Graph& g) {
           return head(g, nn::gather(g, g.param(x), idx, {out}), w);
         };
       }},
      {"reshape",
       [](Case& c, Rng& rng) {
         const std::size_t a = pick(rng, 1, 3), b = pick(rng, 1, 4);
         Param& x = c.params.add("x", random_tensor({a, b}, rng));
         const Tensor w = head_weights({b, a}, rng);
         c.forward = [&x, a, b, w](Graph& g) { return head(g, nn::reshape(g, g.param(x), {b, a}), w); };
       }},
      {"conv2d",
       [](Case& c, Rng& rng) {
         const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
         const std::size_t h = pick(rng, 3, 6), w = pick(rng, 3, 6), k = rng.bernoulli(0.5) ? 3 : 1;
         Param& x = c.params.add("x", random_tensor({ci, h, w}, rng));
         Param& kern = c.params.add("kernels", random_tensor({co, ci, k, k}, rng));
         Param& bias = c.params.add("bias", random_tensor({co}, rng));
         const Tensor hw = head_weights({co, h, w}, rng);
         c.forward = [&x, &kern, &bias, hw](Graph& g) {
           return head(g, nn::conv2d(g, g.param(x), g.param(kern), g.param(bias)), hw);
         };
       }},
      {"sum",
       [](Case& c, Rng& rng) {
         Param& x = c.params.add("x", random_tensor({pick(rng, 1, 4), pick(rng, 1, 4)}, rng));
         c.forward = [&x](Graph& g) { return nn::scale(g, nn::sum(g, g.param(x)), 0.5); };
       }},
      {"dot_const",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
         Param& x = c.params.add("x", random_tensor(s, rng));
         const Tensor w = head_weights(s, rng);
         c.forward = [&x, w](Graph& g) { return nn::dot_const(g, g.param(x), w); };
       }},
      {"mse_loss",
       [](Case& c, Rng& rng) {
         const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
         Param& y = c.params.add("y", random_tensor(s, rng));
         const Tensor target = random_tensor(s, rng);
         c.forward = [&y, target](Graph& g) { return nn::mse_loss(g, g.param(y), target); };
       }},
      {"ce_loss",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 5);
         Param& x = c.params.add("logits", random_tensor({n, k}, rng, -2, 2));
         const Tensor target = one_hot_rows(n, k, rng);
         c.forward = [&x, target](Graph& g) {
           return nn::ce_loss(g, nn::softmax(g, g.param(x)), target);
         };
       }},
      {"linear",
       [](Case& c, Rng& rng) {
         const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
         Param& x = c.params.add("x", random_tensor({n, in}, rng));
         const nn::LinearParams lin = nn::make_linear(c.params, "linear", in, out, rng);
         for (double& v : lin.b->value.data) v = rng.uniform(-0.5, 0.5);
         const Tensor w = head_weights({n, out}, rng);
         c.forward = [&x, lin, w](Graph& g) { return head(g, nn::linear(g, g.param(x), lin), w); };
       }},
      {"msa",
       [](Case& c, Rng& rng) {
         const std::size_t heads = pick(rng, 1, 2), d = heads * pick(rng, 2, 3), n = pick(rng, 1, 4);
         Param& x = c.params.add("x", random_tensor({n, d}, rng));
         const nn::AttentionParams p = nn::make_attention(c.params, "msa", {d, heads}, rng);
         const Tensor w = head_weights({n, d}, rng);
         c.forward = [&x, p, w](Graph& g) { return head(g, nn::msa(g, g.param(x), p), w); };
       }},
      {"mlp",
       [](Case& c, Rng& rng) {
         const std::size_t d = pick(rng, 2, 4), n = pick(rng, 1, 4);
         Param& x = c.params.add("x", random_tensor({n, d}, rng));
         const nn::MlpParams p = nn::make_mlp(c.params, "mlp", d, rng);
         const Tensor w = head_weights({n, d}, rng);
         c.forward = [&x, p, w](Graph& g) { return head(g, nn::mlp(g, g.param(x), p), w); };
       }},
      {"block",
       [](Case& c, Rng& rng) {
         const std::size_t heads = pick(rng, 1, 2), d = heads * 2, n = pick(rng, 2, 4);
         Param& x = c.params.add("x", random_tensor({n, d}, rng));
         const nn::BlockParams p = nn::make_block(c.params, "block", {d, heads}, rng);
         const Tensor w = head_weights({n, d}, rng);
         c.forward = [&x, p, w](Graph& g) { return head(g, nn::block(g, g.param(x), p), w); };
       }},
  };
  return table;
}

// Tiny end-to-end configuration: 16x16 tiles, 8x8 patches, d = 8, M = N = 1.
ModelConfig tiny_model() {
  ModelConfig m;
  m.geometry = {16, 16, 1.0};
  m.model_dim = 8;
  m.num_heads = 2;
  m.encoder_layers = 1;
  m.decoder_layers = 1;
  m.features = 2;
  return m;
}

TileSample tiny_tile(const ModelConfig& m, std::uint64_t seed) {
  SynthConfig s;
  s.train_tiles = s.valid_tiles = s.test_tiles = 1;
  s.geometry = m.geometry;
  s.seed = seed;
  return gen_dataset(s).train.front();
}

nn::GradCheckReport end_to_end(bool pretrain, std::uint64_t seed, nn::GradCheckOptions options) {
  const ModelConfig m = tiny_model();
  GnMapNet net(m, derive_seed(seed, "grad-check/model"));
  const TileSample tile = tiny_tile(m, seed);
  if (pretrain) {
    const MaskPlan plan = sample_mask(m.num_patches(), 0.5, derive_seed(seed, "grad-check/mask"));
    return nn::grad_check([&](Graph& g) { return net.pretrain_loss(g, tile.gt_gray, plan); },
                          net.pretrain_params(), options);
  }
  const auto tours = tour_rasters(tile.tours);
  return nn::grad_check([&](Graph& g) { return net.finetune_loss(g, tours, tile.gt_class); },
                        net.finetune_params(), options);
}

}  // namespace

const std::vector<std::string>& grad_suite_modules() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, _] : builders()) v.push_back(name);
    v.push_back("pretrain");
    v.push_back("finetune");
    return v;
  }();
  return names;
}

nn::GradCheckReport run_grad_check(const std::string& module, std::uint64_t seed,
                                   nn::GradCheckOptions options) {
  if (module == "pretrain") return end_to_end(true, seed, options);
  if (module == "finetune") return end_to_end(false, seed, options);
  const auto it = builders().find(module);
  if (it == builders().end()) throw std::invalid_argument("unknown grad-check module: " + module);
  Case c;
  Rng rng(derive_seed(seed, "grad-check/" + module));
  it->second(c, rng);
  return nn::grad_check(c.forward, c.params.all(), options);
}

}  // namespace gnmap
