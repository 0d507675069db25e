#include "gnmap/nn/graph.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include <Eigen/Core>

namespace gnmap::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

CMapR as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapR(t.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapR as_mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MapR(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(s));
  }
}

// Last-axis length and number of leading rows.
std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  const std::size_t cols = s.back();
  return {cols == 0 ? 0 : shape_size(s) / cols, cols};
}

// Enumerates the contiguous runs of the im2col map for a same-padded
// convolution: fn(col_row, src_offset, dst_offset, length) where col_row is
// (c*kh + i)*kw + j, src indexes x[c][.][.] and dst indexes the h*w row.
template <class Fn>
void for_each_tap(std::size_t ci, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                  Fn&& fn) {
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t row = (c * kh + i) * kw + j;
        const long di = static_cast<long>(i) - ph, dj = static_cast<long>(j) - pw;
        const long qlo = std::max(0L, -dj), qhi = std::min(W, W - dj);
        if (qhi <= qlo) continue;
        for (long r = std::max(0L, -di); r < std::min(H, H - di); ++r) {
          const auto src = static_cast<std::size_t>((static_cast<long>(c) * H + r + di) * W + qlo + dj);
          const auto dst = static_cast<std::size_t>(r * W + qlo);
          fn(row, src, dst, static_cast<std::size_t>(qhi - qlo));
        }
      }
    }
  }
}

}  // namespace

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return {nodes_.size() - 1};
}

Var Graph::param(Param& p) {
  for (const auto& [ptr, id] : param_nodes_) {
    if (ptr == &p) return {id};
  }
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  param_nodes_.emplace_back(&p, nodes_.size() - 1);
  return {nodes_.size() - 1};
}

std::vector<double>& Graph::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, Backward back) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(back));
}

Var Graph::record(Tensor value, std::span<const Var> parents, Backward back) {
  bool needs = false;
  for (Var p : parents) needs = needs || nodes_.at(p.id).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(back) : Backward{}, nullptr, needs});
  return {nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  if (backward_done_) throw std::logic_error("backward() already ran on this graph");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss");
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, Var{i});
  }
  for (const auto& [p, id] : param_nodes_) {
    const auto& g = nodes_[id].grad;
    if (g.empty()) continue;
    for (std::size_t k = 0; k < g.size(); ++k) p->grad[k] += g[k];
  }
}

// ---------------------------------------------------------------------------

Var matmul(Graph& g, Var a, Var b) {
  const Shape& sa = g.shape(a);
  const Shape& sb = g.shape(b);
  require_rank("matmul", sa, 2);
  require_rank("matmul", sb, 2);
  if (sa[1] != sb[0]) shape_error("matmul", sa, sb);
  const std::size_t n = sa[0], k = sa[1], m = sb[1];
  Tensor out({n, m});
  as_mat(out.data, n, m).noalias() = as_mat(g.value(a), n, k) * as_mat(g.value(b), k, m);
  return g.record(std::move(out), {a, b}, [a, b, n, k, m](Graph& g, Var self) {
    auto dy = as_mat(g.grad(self), n, m);
    if (g.requires_grad(a)) {
      as_mat(g.grad(a), n, k).noalias() += dy * as_mat(g.value(b), k, m).transpose();
    }
    if (g.requires_grad(b)) {
      as_mat(g.grad(b), k, m).noalias() += as_mat(g.value(a), n, k).transpose() * dy;
    }
  });
}

Var matmul_nt(Graph& g, Var a, Var b) {
  const Shape& sa = g.shape(a);
  const Shape& sb = g.shape(b);
  require_rank("matmul_nt", sa, 2);
  require_rank("matmul_nt", sb, 2);
  if (sa[1] != sb[1]) shape_error("matmul_nt", sa, sb);
  const std::size_t n = sa[0], k = sa[1], m = sb[0];
  Tensor out({n, m});
  as_mat(out.data, n, m).noalias() =
      as_mat(g.value(a), n, k) * as_mat(g.value(b), m, k).transpose();
  return g.record(std::move(out), {a, b}, [a, b, n, k, m](Graph& g, Var self) {
    auto dy = as_mat(g.grad(self), n, m);
    if (g.requires_grad(a)) as_mat(g.grad(a), n, k).noalias() += dy * as_mat(g.value(b), m, k);
    if (g.requires_grad(b)) {
      as_mat(g.grad(b), m, k).noalias() += dy.transpose() * as_mat(g.value(a), n, k);
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  if (g.shape(a) != g.shape(b)) shape_error("add", g.shape(a), g.shape(b));
  Tensor out = g.value(a);
  const Tensor& vb = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    for (Var p : {a, b}) {
      if (!g.requires_grad(p)) continue;
      auto& dp = g.grad(p);
      for (std::size_t i = 0; i < dy.size(); ++i) dp[i] += dy[i];
    }
  });
}

Var add_bias(Graph& g, Var x, Var bias) {
  const Shape& sx = g.shape(x);
  const Shape& sb = g.shape(bias);
  require_rank("add_bias", sx, 2);
  if (sb.size() != 1 || sb[0] != sx[1]) shape_error("add_bias", sx, sb);
  const std::size_t n = sx[0], m = sx[1];
  Tensor out = g.value(x);
  const Tensor& b = g.value(bias);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out.data[r * m + c] += b.data[c];
  }
  return g.record(std::move(out), {x, bias}, [x, bias, n, m](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(x)) {
      auto& dx = g.grad(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.requires_grad(bias)) {
      auto& db = g.grad(bias);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) db[c] += dy[r * m + c];
      }
    }
  });
}

Var scale(Graph& g, Var x, double s) {
  Tensor out = g.value(x);
  for (double& v : out.data) v *= s;
  return g.record(std::move(out), {x}, [x, s](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += s * dy[i];
  });
}

Var mul(Graph& g, Var a, Var b) {
  if (g.shape(a) != g.shape(b)) shape_error("mul", g.shape(a), g.shape(b));
  Tensor out = g.value(a);
  const Tensor& vb = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(a)) {
      auto& da = g.grad(a);
      const auto& vb = g.value(b).data;
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * vb[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad(b);
      const auto& va = g.value(a).data;
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * va[i];
    }
  });
}

Var gelu(Graph& g, Var x) {
  Tensor out = g.value(x);
  auto slope = std::make_shared<std::vector<double>>(out.size());
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = out.data[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * (0.5 * std::numbers::sqrt2)));
    (*slope)[i] = cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    out.data[i] = v * cdf;
  }
  return g.record(std::move(out), {x}, [x, slope](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*slope)[i];
  });
}

Var sigmoid(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return g.record(std::move(out), {x}, [x](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    const auto& y = g.value(self).data;
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax(Graph& g, Var x) {
  const Shape& s = g.shape(x);
  if (s.empty() || s.back() == 0) throw std::invalid_argument("softmax: empty last axis");
  const auto [rows, m] = rows_cols(s);
  Tensor out = g.value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data.data() + r * m;
    double mx = row[0];
    for (std::size_t c = 0; c < m; ++c) {
      if (!std::isfinite(row[c])) throw std::invalid_argument("softmax: non-finite input");
      mx = std::max(mx, row[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < m; ++c) row[c] /= z;
  }
  return g.record(std::move(out), {x}, [x, rows, m](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    const auto& y = g.value(self).data;
    auto& dx = g.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * m;
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += dy[o + c] * y[o + c];
      for (std::size_t c = 0; c < m; ++c) dx[o + c] += y[o + c] * (dy[o + c] - dot);
    }
  });
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta, double eps) {
  const Shape& s = g.shape(x);
  require_rank("layer_norm", s, 2);
  const std::size_t n = s[0], d = s[1];
  if (g.shape(gamma) != Shape{d} || g.shape(beta) != Shape{d}) {
    shape_error("layer_norm", s, g.shape(gamma));
  }
  const Tensor& vx = g.value(x);
  const Tensor& ga = g.value(gamma);
  const Tensor& be = g.value(beta);
  auto xhat = std::make_shared<std::vector<double>>(n * d);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = vx.data.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (row[c] - mean) * is;
      (*xhat)[r * d + c] = xh;
      out.data[r * d + c] = ga.data[c] * xh + be.data[c];
    }
  }
  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, n, d, xhat, inv_std](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(gamma)) {
      auto& dg = g.grad(gamma);
      for (std::size_t i = 0; i < n * d; ++i) dg[i % d] += dy[i] * (*xhat)[i];
    }
    if (g.requires_grad(beta)) {
      auto& db = g.grad(beta);
      for (std::size_t i = 0; i < n * d; ++i) db[i % d] += dy[i];
    }
    if (g.requires_grad(x)) {
      const auto& ga = g.value(gamma).data;
      auto& dx = g.grad(x);
      std::vector<double> dxh(d);
      for (std::size_t r = 0; r < n; ++r) {
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dxh[c] = dy[r * d + c] * ga[c];
          mean_dxh += dxh[c];
          mean_dxh_xh += dxh[c] * (*xhat)[r * d + c];
        }
        mean_dxh /= static_cast<double>(d);
        mean_dxh_xh /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
          dx[r * d + c] +=
              (*inv_std)[r] * (dxh[c] - mean_dxh - (*xhat)[r * d + c] * mean_dxh_xh);
        }
      }
    }
  });
}

Var slice_cols(Graph& g, Var x, std::size_t start, std::size_t len) {
  const Shape& s = g.shape(x);
  require_rank("slice_cols", s, 2);
  if (start + len > s[1]) throw std::invalid_argument("slice_cols: range out of bounds");
  const std::size_t n = s[0], m = s[1];
  Tensor out({n, len});
  const Tensor& vx = g.value(x);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(vx.data.begin() + static_cast<std::ptrdiff_t>(r * m + start), len,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * len));
  }
  return g.record(std::move(out), {x}, [x, n, m, start, len](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < len; ++c) dx[r * m + start + c] += dy[r * len + c];
    }
  });
}

Var concat_cols(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t n = g.shape(parts[0]).at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Shape& s = g.shape(p);
    require_rank("concat_cols", s, 2);
    if (s[0] != n) shape_error("concat_cols", g.shape(parts[0]), s);
    widths.push_back(s[1]);
    total += s[1];
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = g.value(parts[i]);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.data.begin() + static_cast<std::ptrdiff_t>(r * widths[i]), widths[i],
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    }
    off += widths[i];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [ps, widths, n, total](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (g.requires_grad(ps[i])) {
        auto& dp = g.grad(ps[i]);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) dp[r * widths[i] + c] += dy[r * total + off + c];
        }
      }
      off += widths[i];
    }
  });
}

Var concat0(Graph& g, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat0: no inputs");
  Shape out_shape = g.shape(parts[0]);
  if (out_shape.empty()) throw std::invalid_argument("concat0: scalar input");
  out_shape[0] = 0;
  std::vector<std::size_t> sizes;
  for (Var p : parts) {
    const Shape& s = g.shape(p);
    if (s.size() != out_shape.size() || !std::equal(s.begin() + 1, s.end(), out_shape.begin() + 1)) {
      shape_error("concat0", g.shape(parts[0]), s);
    }
    out_shape[0] += s[0];
    sizes.push_back(shape_size(s));
  }
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = g.value(parts[i]);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += sizes[i];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return g.record(std::move(out), parts, [ps, sizes](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (g.requires_grad(ps[i])) {
        auto& dp = g.grad(ps[i]);
        for (std::size_t k = 0; k < sizes[i]; ++k) dp[k] += dy[off + k];
      }
      off += sizes[i];
    }
  });
}

Var gather(Graph& g, Var x, std::vector<std::size_t> index, Shape out_shape) {
  if (shape_size(out_shape) != index.size()) {
    throw std::invalid_argument("gather: index count does not match output shape");
  }
  const Tensor& vx = g.value(x);
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= vx.size()) throw std::invalid_argument("gather: index out of range");
    out.data[i] = vx.data[index[i]];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return g.record(std::move(out), {x}, [x, idx](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < idx->size(); ++i) dx[(*idx)[i]] += dy[i];
  });
}

Var reshape(Graph& g, Var x, Shape shape) {
  if (shape_size(shape) != g.value(x).size()) {
    shape_error("reshape", g.shape(x), shape);
  }
  Tensor out(std::move(shape), g.value(x).data);
  return g.record(std::move(out), {x}, [x](Graph& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var conv2d(Graph& g, Var x, Var kernels, Var bias) {
  const Shape& sx = g.shape(x);
  const Shape& sk = g.shape(kernels);
  require_rank("conv2d", sx, 3);
  require_rank("conv2d", sk, 4);
  const std::size_t ci = sx[0], h = sx[1], w = sx[2];
  const std::size_t co = sk[0], kh = sk[2], kw = sk[3];
  if (sk[1] != ci) shape_error("conv2d", sx, sk);
  if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (g.shape(bias) != Shape{co}) shape_error("conv2d", sk, g.shape(bias));
  const std::size_t patch = ci * kh * kw, hw = h * w;

  // im2col: cols[(c*kh + i)*kw + j][r*w + q] = x[c][r+i-ph][q+j-pw] (zero outside)
  auto cols = std::make_shared<std::vector<double>>(patch * hw, 0.0);
  const Tensor& vx = g.value(x);
  for_each_tap(ci, h, w, kh, kw, [&](std::size_t row, std::size_t src, std::size_t dst, std::size_t n) {
    std::copy_n(vx.data.data() + src, n, cols->data() + row * hw + dst);
  });
  Tensor out({co, h, w});
  auto om = as_mat(out.data, co, hw);
  om.noalias() = as_mat(g.value(kernels), co, patch) *
                 CMapR(cols->data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw));
  const Tensor& vb = g.value(bias);
  for (std::size_t o = 0; o < co; ++o) om.row(static_cast<Eigen::Index>(o)).array() += vb.data[o];

  return g.record(std::move(out), {x, kernels, bias},
                  [=](Graph& g, Var self) {
    auto& dyv = g.grad(self);
    auto dy = as_mat(dyv, co, hw);
    const CMapR cm(cols->data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(hw));
    if (g.requires_grad(kernels)) as_mat(g.grad(kernels), co, patch).noalias() += dy * cm.transpose();
    if (g.requires_grad(bias)) {
      auto& db = g.grad(bias);
      // plain loop: Eigen's vectorized sum depends on the row's address alignment
      for (std::size_t o = 0; o < co; ++o) {
        const double* r = dyv.data() + o * hw;
        double s = 0.0;
        for (std::size_t t = 0; t < hw; ++t) s += r[t];
        db[o] += s;
      }
    }
    if (g.requires_grad(x)) {
      MatR dcols = as_mat(g.value(kernels), co, patch).transpose() * dy;
      auto& dx = g.grad(x);
      for_each_tap(ci, h, w, kh, kw, [&](std::size_t row, std::size_t src, std::size_t dst, std::size_t n) {
        const double* from = dcols.data() + row * hw + dst;
        double* to = dx.data() + src;
        for (std::size_t t = 0; t < n; ++t) to[t] += from[t];
      });
    }
  });
}

Var sum(Graph& g, Var x) {
  double s = 0.0;
  for (double v : g.value(x).data) s += v;
  return g.record(Tensor({1}, {s}), {x}, [x](Graph& g, Var self) {
    const double dy = g.grad(self)[0];
    for (double& v : g.grad(x)) v += dy;
  });
}

Var dot_const(Graph& g, Var x, const Tensor& weights) {
  if (weights.size() != g.value(x).size()) shape_error("dot_const", g.shape(x), weights.shape);
  double s = 0.0;
  const auto& vx = g.value(x).data;
  for (std::size_t i = 0; i < vx.size(); ++i) s += vx[i] * weights.data[i];
  auto w = std::make_shared<std::vector<double>>(weights.data);
  return g.record(Tensor({1}, {s}), {x}, [x, w](Graph& g, Var self) {
    const double dy = g.grad(self)[0];
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy * (*w)[i];
  });
}

Var mse_loss(Graph& g, Var y, const Tensor& target) {
  const Tensor& vy = g.value(y);
  if (vy.size() != target.size()) shape_error("mse_loss", vy.shape, target.shape);
  if (vy.size() == 0) throw std::invalid_argument("mse_loss: empty input");
  const double inv_n = 1.0 / static_cast<double>(vy.size());
  double s = 0.0;
  for (std::size_t i = 0; i < vy.size(); ++i) {
    const double e = vy.data[i] - target.data[i];
    s += e * e;
  }
  auto t = std::make_shared<std::vector<double>>(target.data);
  return g.record(Tensor({1}, {s * inv_n}), {y}, [y, t, inv_n](Graph& g, Var self) {
    const double dy = g.grad(self)[0];
    const auto& vy = g.value(y).data;
    auto& dx = g.grad(y);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy * 2.0 * (vy[i] - (*t)[i]) * inv_n;
  });
}

Var ce_loss(Graph& g, Var y, const Tensor& target) {
  constexpr double kClamp = 1e-12;
  const Tensor& vy = g.value(y);
  if (vy.shape != target.shape || vy.rank() != 2) shape_error("ce_loss", vy.shape, target.shape);
  const std::size_t n = vy.shape[0], c = vy.shape[1];
  if (n == 0) throw std::invalid_argument("ce_loss: empty input");
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double row_sum = 0.0;
    int ones = 0;
    for (std::size_t k = 0; k < c; ++k) {
      row_sum += vy.data[r * c + k];
      const double t = target.data[r * c + k];
      if (t == 1.0) {
        ++ones;
      } else if (t != 0.0) {
        ones = -1000;
      }
      if (t != 0.0) s += t * std::log(std::max(vy.data[r * c + k], kClamp));
    }
    if (std::abs(row_sum - 1.0) > 1e-6) throw std::invalid_argument("ce_loss: prediction row not normalized");
    if (ones != 1) throw std::invalid_argument("ce_loss: target row is not one-hot");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto t = std::make_shared<std::vector<double>>(target.data);
  return g.record(Tensor({1}, {-s * inv_n}), {y}, [y, t, inv_n](Graph& g, Var self) {
    const double dy = g.grad(self)[0];
    const auto& vy = g.value(y).data;
    auto& dx = g.grad(y);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if ((*t)[i] != 0.0 && vy[i] > kClamp) dx[i] -= dy * inv_n * (*t)[i] / vy[i];
    }
  });
}

}  // namespace gnmap::nn
