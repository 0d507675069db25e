#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "gnmap/error.hpp"
#include "gnmap/grad_suite.hpp"
#include "gnmap/nn/layers.hpp"
#include "gnmap/nn/optim.hpp"

using namespace gnmap;
using namespace gnmap::nn;

namespace {

Tensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Naive oracles -------------------------------------------------------------

std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t n, std::size_t k, std::size_t m) {
  std::vector<double> y(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) y[i * m + j] += a[i * k + t] * b[t * m + j];
  return y;
}

std::vector<double> naive_linear(const std::vector<double>& x, const LinearParams& p, std::size_t n) {
  const std::size_t in = p.w->value.dim(0), out = p.w->value.dim(1);
  auto y = naive_matmul(x, p.w->value.data, n, in, out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] += p.b->value.data[j];
  return y;
}

std::vector<double> naive_softmax_row(std::vector<double> r) {
  double mx = r[0];
  for (double v : r) mx = std::max(mx, v);
  double s = 0;
  for (double& v : r) s += (v = std::exp(v - mx));
  for (double& v : r) v /= s;
  return r;
}

std::vector<double> naive_attention(const std::vector<double>& x, const AttentionParams& p,
                                    std::size_t n) {
  const std::size_t d = p.cfg.model_dim, hd = p.cfg.head_dim();
  const auto q = naive_linear(x, p.q, n), k = naive_linear(x, p.k, n), v = naive_linear(x, p.v, n);
  std::vector<double> merged(n * d, 0.0);
  for (std::size_t h = 0; h < p.cfg.num_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> score(n);
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t t = 0; t < hd; ++t) s += q[i * d + h * hd + t] * k[j * d + h * hd + t];
        score[j] = s / std::sqrt(static_cast<double>(hd));
      }
      const auto wgt = naive_softmax_row(score);
      for (std::size_t t = 0; t < hd; ++t) {
        double acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += wgt[j] * v[j * d + h * hd + t];
        merged[i * d + h * hd + t] = acc;
      }
    }
  }
  return naive_linear(merged, p.o, n);
}

double naive_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

std::vector<double> naive_layer_norm(const std::vector<double>& x, std::size_t n, std::size_t d,
                                     const std::vector<double>& gamma,
                                     const std::vector<double>& beta, double eps) {
  std::vector<double> y(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
    mean /= d;
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mean) * (x[i * d + j] - mean);
    var /= d;
    for (std::size_t j = 0; j < d; ++j) {
      y[i * d + j] = gamma[j] * (x[i * d + j] - mean) / std::sqrt(var + eps) + beta[j];
    }
  }
  return y;
}

std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  std::vector<double> y(co * h * w);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < w; ++q) {
        double acc = b.data[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long rr = static_cast<long>(r + i) - static_cast<long>(kh / 2);
              const long qq = static_cast<long>(q + j) - static_cast<long>(kw / 2);
              if (rr < 0 || qq < 0 || rr >= static_cast<long>(h) || qq >= static_cast<long>(w)) continue;
              acc += k.data[((o * ci + c) * kh + i) * kw + j] * x.data[(c * h + rr) * w + qq];
            }
        y[(o * h + r) * w + q] = acc;
      }
  return y;
}

void set_identity(Param* w) {
  std::fill(w->value.data.begin(), w->value.data.end(), 0.0);
  for (std::size_t i = 0; i < w->value.dim(0); ++i) w->value.at(i, i) = 1.0;
}


}  // namespace

TEST_CASE("linear") {
  Rng rng(1);
  ParamSet ps;
  LinearParams p = make_linear(ps, "l", 4, 2, rng);
  for (double& v : p.b->value.data) v = rng.uniform(-1, 1);
  const Tensor x = rand_t({3, 4}, rng);
  {
    Graph g;
    CHECK(max_abs_diff(g.value(linear(g, g.constant(x), p)).data, naive_linear(x.data, p, 3)) < 1e-12);
  }
  {
    Graph g;
    const auto y = g.value(linear(g, g.constant(Tensor({3, 4})), p)).data;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(y[i * 2 + j] == p.b->value.data[j]);
  }
  SUBCASE("identity weights") {
    ParamSet ps2;
    LinearParams id = make_linear(ps2, "id", 4, 4, rng);
    set_identity(id.w);
    Graph g;
    CHECK(g.value(linear(g, g.constant(x), id)).data == x.data);
  }
  SUBCASE("affine linearity") {
    const Tensor x2 = rand_t({3, 4}, rng);
    const double a = 0.7, b = -1.3;
    Tensor mix({3, 4});
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = a * x.data[i] + b * x2.data[i];
    Graph g;
    const auto y1 = g.value(linear(g, g.constant(x), p)).data;
    const auto y2 = g.value(linear(g, g.constant(x2), p)).data;
    const auto ym = g.value(linear(g, g.constant(mix), p)).data;
    for (std::size_t i = 0; i < ym.size(); ++i) {
      const double expect = a * y1[i] + b * y2[i] - (a + b - 1) * p.b->value.data[i % 2];
      CHECK(std::abs(ym[i] - expect) < 1e-10);
    }
  }
  Graph g;
  CHECK_THROWS_AS(linear(g, g.constant(Tensor({3, 5})), p), std::invalid_argument);
}

TEST_CASE("softmax") {
  Graph g;
  const auto u = g.value(softmax(g, g.constant(Tensor({1, 4}, 2.5)))).data;
  for (double v : u) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const auto s = g.value(softmax(g, g.constant(Tensor({1, 2}, {0.0, std::log(3.0)})))).data;
  CHECK(std::abs(s[0] - 0.25) < 1e-15);
  CHECK(std::abs(s[1] - 0.75) < 1e-15);

  Rng rng(2);
  Tensor x = rand_t({5, 7}, rng, -5, 5);
  Tensor shifted = x;
  for (double& v : shifted.data) v += 5.0;
  const auto a = g.value(softmax(g, g.constant(x))).data;
  const auto b = g.value(softmax(g, g.constant(shifted))).data;
  CHECK(max_abs_diff(a, b) < 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(a[r * 7 + c] > 0.0);
      sum += a[r * 7 + c];
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  x.data[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(softmax(g, g.constant(x)));
}

TEST_CASE("layer_norm") {
  Rng rng(3);
  const std::size_t n = 4, d = 6;
  const Tensor x = rand_t({n, d}, rng, -3, 3);
  Graph g;
  const Var one = g.constant(Tensor({d}, 1.0)), zero = g.constant(Tensor({d}));
  const auto y = g.value(layer_norm(g, g.constant(x), one, zero, 1e-5)).data;
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < d; ++j) m += y[i * d + j];
    m /= d;
    for (std::size_t j = 0; j < d; ++j) v += (y[i * d + j] - m) * (y[i * d + j] - m);
    v /= d;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-4);  // eps shrinks the variance slightly
  }
  const auto c = g.value(layer_norm(g, g.constant(Tensor({1, d}, 4.2)), one, zero, 1e-5)).data;
  for (double v : c) CHECK(v == 0.0);

  const Tensor gamma = rand_t({d}, rng, 0.5, 2), beta = rand_t({d}, rng);
  const auto z = g.value(layer_norm(g, g.constant(x), g.constant(gamma), g.constant(beta), 1e-5)).data;
  CHECK(max_abs_diff(z, naive_layer_norm(x.data, n, d, gamma.data, beta.data, 1e-5)) < 1e-10);
}

TEST_CASE("layer_norm unit variance with negligible eps") {
  Rng rng(4);
  const Tensor x = rand_t({3, 8}, rng, -3, 3);
  Graph g;
  const auto y = g.value(layer_norm(g, g.constant(x), g.constant(Tensor({8}, 1.0)),
                                    g.constant(Tensor({8})), 1e-12)).data;
  for (std::size_t i = 0; i < 3; ++i) {
    double v = 0;
    for (std::size_t j = 0; j < 8; ++j) v += y[i * 8 + j] * y[i * 8 + j];
    CHECK(std::abs(v / 8 - 1.0) < 1e-6);
  }
}

TEST_CASE("multi-head self-attention") {
  Rng rng(5);
  SUBCASE("single token with identity projections returns the token") {
    ParamSet ps;
    AttentionParams p = make_attention(ps, "a", {4, 1}, rng);
    for (auto* lin : {&p.q, &p.k, &p.v, &p.o}) set_identity(lin->w);
    const Tensor x = rand_t({1, 4}, rng);
    Graph g;
    CHECK(max_abs_diff(g.value(msa(g, g.constant(x), p)).data, x.data) < 1e-15);
  }
  SUBCASE("single token equals the projected value path") {
    ParamSet ps;
    AttentionParams p = make_attention(ps, "a", {6, 3}, rng);
    for (auto* lin : {&p.q, &p.k, &p.v, &p.o})
      for (double& v : lin->b->value.data) v = rng.uniform(-1, 1);
    const Tensor x = rand_t({1, 6}, rng);
    Graph g;
    const auto expect = naive_linear(naive_linear(x.data, p.v, 1), p.o, 1);
    CHECK(max_abs_diff(g.value(msa(g, g.constant(x), p)).data, expect) < 1e-12);
  }
  SUBCASE("identical tokens give identical rows") {
    ParamSet ps;
    AttentionParams p = make_attention(ps, "a", {4, 2}, rng);
    const Tensor row = rand_t({1, 4}, rng);
    Tensor x({3, 4});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) x.at(i, j) = row.data[j];
    Graph g;
    const auto y = g.value(msa(g, g.constant(x), p)).data;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(y[j] == y[4 + j]);
      CHECK(y[j] == y[8 + j]);
    }
  }
  SUBCASE("n=3, d=4, two heads against the naive loop") {
    ParamSet ps;
    AttentionParams p = make_attention(ps, "a", {4, 2}, rng);
    for (auto* lin : {&p.q, &p.k, &p.v, &p.o})
      for (double& v : lin->b->value.data) v = rng.uniform(-1, 1);
    const Tensor x = rand_t({3, 4}, rng);
    Graph g;
    CHECK(max_abs_diff(g.value(msa(g, g.constant(x), p)).data, naive_attention(x.data, p, 3)) < 1e-10);
  }
  CHECK_THROWS_AS(AttentionConfig({6, 4}).validate(), std::invalid_argument);
}

TEST_CASE("mlp") {
  Rng rng(6);
  ParamSet ps;
  MlpParams p = make_mlp(ps, "m", 3, rng);
  CHECK(p.up.w->value.shape == Shape{3, 12});
  for (double& v : p.up.b->value.data) v = rng.uniform(-1, 1);
  for (double& v : p.down.b->value.data) v = rng.uniform(-1, 1);
  const Tensor x = rand_t({4, 3}, rng);
  auto hidden = naive_linear(x.data, p.up, 4);
  for (double& v : hidden) v = naive_gelu(v);
  const auto expect = naive_linear(hidden, p.down, 4);
  Graph g;
  CHECK(max_abs_diff(g.value(mlp(g, g.constant(x), p)).data, expect) < 1e-12);

  for (Param* q : ps.all()) std::fill(q->value.data.begin(), q->value.data.end(), 0.0);
  Graph fresh;
  for (double v : fresh.value(mlp(fresh, fresh.constant(x), p)).data) CHECK(v == 0.0);
}

TEST_CASE("encoder block is post-LN around the MLP residual only") {
  Rng rng(7);
  ParamSet ps;
  BlockParams p = make_block(ps, "b", {4, 2}, rng);
  for (double& v : p.ln.gamma->value.data) v = rng.uniform(0.5, 1.5);
  for (double& v : p.ln.beta->value.data) v = rng.uniform(-0.5, 0.5);
  const Tensor x = rand_t({5, 4}, rng);
  auto attended = naive_attention(x.data, p.attn, 5);
  for (std::size_t i = 0; i < attended.size(); ++i) attended[i] += x.data[i];
  auto hidden = naive_linear(attended, p.mlp.up, 5);
  for (double& v : hidden) v = naive_gelu(v);
  auto out = naive_linear(hidden, p.mlp.down, 5);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += attended[i];
  const auto expect = naive_layer_norm(out, 5, 4, p.ln.gamma->value.data, p.ln.beta->value.data, 1e-5);
  Graph g;
  CHECK(max_abs_diff(g.value(block(g, g.constant(x), p)).data, expect) < 1e-10);
}

TEST_CASE("conv2d") {
  Rng rng(8);
  const Tensor x = rand_t({2, 5, 5}, rng);
  const Tensor k = rand_t({3, 2, 3, 3}, rng), b = rand_t({3}, rng);
  Graph g;
  CHECK(max_abs_diff(g.value(conv2d(g, g.constant(x), g.constant(k), g.constant(b))).data,
                     naive_conv(x, k, b)) < 1e-12);

  // Delta kernel: out-channel o sums the input channels it is connected to.
  Tensor delta({2, 2, 3, 3});
  delta.data[((0 * 2 + 0) * 3 + 1) * 3 + 1] = 1.0;
  delta.data[((1 * 2 + 0) * 3 + 1) * 3 + 1] = 1.0;
  delta.data[((1 * 2 + 1) * 3 + 1) * 3 + 1] = 1.0;
  const auto y = g.value(conv2d(g, g.constant(x), g.constant(delta), g.constant(Tensor({2})))).data;
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(y[i] == x.data[i]);
    CHECK(y[25 + i] == x.data[i] + x.data[25 + i]);
  }
  const auto z = g.value(conv2d(g, g.constant(Tensor({2, 5, 5})), g.constant(k), g.constant(Tensor({3})))).data;
  for (double v : z) CHECK(v == 0.0);
  CHECK_THROWS_AS(conv2d(g, g.constant(x), g.constant(Tensor({3, 2, 2, 2})), g.constant(Tensor({3}))),
                  std::invalid_argument);
}

TEST_CASE("losses") {
  Rng rng(9);
  Graph g;
  const Tensor y = rand_t({4, 4}, rng);
  CHECK(g.value(mse_loss(g, g.constant(y), y))[0] == 0.0);
  CHECK(g.value(mse_loss(g, g.constant(Tensor({8, 8}, 1.0)), Tensor({8, 8})))[0] == 1.0);
  const Tensor t = rand_t({4, 4}, rng);
  double direct = 0;
  for (std::size_t i = 0; i < 16; ++i) direct += (y.data[i] - t.data[i]) * (y.data[i] - t.data[i]);
  CHECK(std::abs(g.value(mse_loss(g, g.constant(y), t))[0] - direct / 16) < 1e-12);

  Tensor onehot({3, 4});
  onehot.at(0, 1) = onehot.at(1, 0) = onehot.at(2, 3) = 1.0;
  CHECK(std::abs(g.value(ce_loss(g, g.constant(onehot), onehot))[0]) < 1e-10);
  CHECK(std::abs(g.value(ce_loss(g, g.constant(Tensor({3, 4}, 0.25)), onehot))[0] - std::log(4.0)) < 1e-12);

  const Var probs = softmax(g, g.constant(rand_t({3, 4}, rng, -2, 2)));
  const auto& pv = g.value(probs).data;
  const double ce = -(std::log(pv[1]) + std::log(pv[4]) + std::log(pv[11])) / 3;
  CHECK(std::abs(g.value(ce_loss(g, probs, onehot))[0] - ce) < 1e-12);

  CHECK_THROWS_AS(ce_loss(g, g.constant(Tensor({3, 4}, 0.3)), onehot), std::invalid_argument);
  Tensor soft = onehot;
  soft.at(0, 1) = 0.5;
  soft.at(0, 2) = 0.5;
  CHECK_THROWS_AS(ce_loss(g, g.constant(Tensor({3, 4}, 0.25)), soft), std::invalid_argument);
  CHECK_THROWS_AS(mse_loss(g, g.constant(y), Tensor({3, 3})), std::invalid_argument);
}

TEST_CASE("backward") {
  Rng rng(10);
  SUBCASE("sum gives ones") {
    ParamSet ps;
    Param& x = ps.add("x", rand_t({3, 2}, rng));
    Graph g;
    g.backward(sum(g, g.param(x)));
    for (double v : x.grad) CHECK(v == 1.0);
    CHECK_THROWS_AS(g.backward(Var{0}), std::logic_error);
  }
  SUBCASE("least squares gradient matches 2 X^T (Xw - y) / n") {
    const std::size_t n = 6, k = 3;
    const Tensor X = rand_t({n, k}, rng), y = rand_t({n, 1}, rng);
    ParamSet ps;
    Param& w = ps.add("w", rand_t({k, 1}, rng));
    Graph g;
    g.backward(mse_loss(g, matmul(g, g.constant(X), g.param(w)), y));
    const auto pred = naive_matmul(X.data, w.value.data, n, k, 1);
    for (std::size_t j = 0; j < k; ++j) {
      double expect = 0;
      for (std::size_t i = 0; i < n; ++i) expect += 2.0 * X.data[i * k + j] * (pred[i] - y.data[i]) / n;
      CHECK(std::abs(w.grad[j] - expect) < 1e-12);
    }
  }
  SUBCASE("gradients accumulate across graphs") {
    ParamSet ps;
    Param& x = ps.add("x", rand_t({2}, rng));
    for (int i = 0; i < 2; ++i) {
      Graph g;
      g.backward(sum(g, g.param(x)));
    }
    for (double v : x.grad) CHECK(v == 2.0);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged and decays the moments") {
    ParamSet ps;
    Param& w = ps.add("w", Tensor({2}, {1.0, -2.0}));
    Adam opt({&w}, {});
    opt.step();
    CHECK(w.value.data == std::vector<double>{1.0, -2.0});
    w.grad = {0.5, 0.5};
    opt.step();
    const auto m = opt.first_moment(0);
    const auto v = opt.second_moment(0);
    w.grad = {0.0, 0.0};
    opt.step();
    CHECK(opt.first_moment(0)[0] == doctest::Approx(0.9 * m[0]).epsilon(1e-15));
    CHECK(opt.second_moment(0)[0] == doctest::Approx(0.999 * v[0]).epsilon(1e-15));
  }
  SUBCASE("quadratic converges") {
    ParamSet ps;
    Param& w = ps.add("w", Tensor({1}, {1.0}));
    Adam opt({&w}, {.lr = 0.1});
    for (int i = 0; i < 200; ++i) {
      opt.zero_grad();
      Graph g;
      const Var p = g.param(w);
      g.backward(sum(g, mul(g, p, p)));
      opt.step();
    }
    CHECK(std::abs(w.value.data[0]) < 1e-2);
  }
  SUBCASE("identical runs give identical trajectories") {
    auto run = [] {
      Rng rng(3);
      ParamSet ps;
      Param& w = ps.add("w", rand_t({4}, rng));
      Adam opt({&w}, {.lr = 0.05});
      std::vector<double> traj;
      for (int i = 0; i < 50; ++i) {
        opt.zero_grad();
        Graph g;
        const Var p = g.param(w);
        g.backward(dot_const(g, mul(g, p, p), Tensor({4}, {1, 2, 3, 4})));
        opt.step();
        traj.insert(traj.end(), w.value.data.begin(), w.value.data.end());
      }
      return traj;
    };
    CHECK(run() == run());
  }
  SUBCASE("non-finite gradient fails with the parameter name and changes nothing") {
    ParamSet ps;
    Param& a = ps.add("first", Tensor({1}, {1.0}));
    Param& b = ps.add("second.weight", Tensor({1}, {1.0}));
    Adam opt({&a, &b}, {});
    a.grad = {1.0};
    b.grad = {std::numeric_limits<double>::infinity()};
    try {
      opt.step();
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("second.weight") != std::string::npos);
    }
    CHECK(a.value.data[0] == 1.0);
    CHECK(b.value.data[0] == 1.0);
  }
}

TEST_CASE("finite-difference gradient suite, three seeds per module") {
  for (const std::string& module : grad_suite_modules()) {
    for (std::uint64_t seed : {1, 2, 3}) {
      const GradCheckReport r = run_grad_check(module, seed);
      INFO(module << " seed " << seed << " max rel " << r.max_rel_error);
      CHECK(r.passed(1e-4));
      CHECK_FALSE(r.params.empty());
    }
  }
  CHECK(run_grad_check("linear", 4).max_rel_error < 1e-6);
  CHECK_THROWS_AS(run_grad_check("nope", 1), std::invalid_argument);
}

// A vectorized reduction sums in an order that depends on where each row
// starts in memory, which made repeated training runs drift apart.
TEST_CASE("conv2d bias gradient sums each row in order") {
  Rng rng(12);
  const Tensor x = rand_t({3, 7, 5}, rng), k = rand_t({4, 3, 3, 3}, rng), w = rand_t({4, 7, 5}, rng);
  ParamSet ps;
  Param& b = ps.add("b", rand_t({4}, rng));
  Graph g;
  g.backward(dot_const(g, conv2d(g, g.constant(x), g.constant(k), g.param(b)), w));
  for (std::size_t o = 0; o < 4; ++o) {
    double s = 0.0;
    for (std::size_t t = 0; t < 35; ++t) s += w.data[o * 35 + t];
    CHECK(b.grad[o] == s);
  }
}
