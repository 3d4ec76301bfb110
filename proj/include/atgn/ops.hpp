#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "atgn/kernels.hpp"
#include "atgn/tensor.hpp"

// The fixed differentiable op set. Every op validates shapes up front and
// registers a backward closure only when an input is tracked.
namespace atgn {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xin = self.inputs[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * deriv(xin[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ, A is " + shape_str(a.shape()) + " and B is " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, out.data(), n);
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* gy = self.grad.data();
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    if (double* ga = detail::input_grad(self, 0)) kernels::gemm_nt(m, k, n, gy, n, bv.data(), n, ga, k);
    if (double* gb = detail::input_grad(self, 1)) kernels::gemm_tn(k, n, m, av.data(), k, gy, n, gb, n);
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return detail::make_result("transpose", {c, r}, std::move(out), {a}, [r, c](detail::Node& self) {
    double* ga = detail::input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result("reshape", std::move(shape), a.values(), {a}, [](detail::Node& self) {
    double* ga = detail::input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::make_result("scale", a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
  });
}

// X[…×C] + b[C]
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  detail::require_rank(b, 1, "add_bias");
  if (x.rank() == 0 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: last axis of " + shape_str(x.shape()) + " does not match bias " +
                         shape_str(b.shape()));
  }
  const std::size_t c = b.dim(0);
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.values());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += b[j];
  return detail::make_result("add_bias", x.shape(), std::move(out), {x, b}, [rows, c](detail::Node& self) {
    if (double* gx = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    if (double* gb = detail::input_grad(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[r * c + j];
  });
}

// Per-row affine map X[n×in] · W[in×out] + b[out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result("sum", {}, {s}, {x}, [](detail::Node& self) {
    if (double* g = detail::input_grad(self, 0)) {
      const double gy = self.grad[0];
      for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) g[i] += gy;
    }
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ArgumentError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// GPT-2 tanh approximation.
inline Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return detail::unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

// Softmax over the last axis. With `causal`, X must be rank 2 and row i only
// spans columns j <= i; masked entries come out exactly 0.
inline Tensor softmax_lastaxis(const Tensor& x, bool causal = false) {
  if (x.rank() == 0) throw DimensionError("softmax_lastaxis: scalar input");
  if (causal) detail::require_rank(x, 2, "softmax_lastaxis(causal)");
  const std::size_t c = x.shape().back();
  const std::size_t rows = c ? x.numel() / c : 0;
  std::vector<double> out(x.numel(), 0.0);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t span = causal ? std::min(c, r + 1) : c;
    const double* xr = in.data() + r * c;
    double* yr = out.data() + r * c;
    double mx = xr[0];
    for (std::size_t j = 1; j < span; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < span; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < span; ++j) yr[j] /= z;
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [rows, c, causal](detail::Node& self) {
    double* gx = detail::input_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t span = causal ? std::min(c, r + 1) : c;
      const double* y = self.data.data() + r * c;
      const double* gy = self.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < span; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < span; ++j) gx[r * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ArgumentError("layer_norm: eps must be positive");
  detail::require_rank(gain, 1, "layer_norm");
  detail::require_rank(bias, 1, "layer_norm");
  if (x.rank() == 0 || x.shape().back() != gain.dim(0) || gain.dim(0) != bias.dim(0)) {
    throw DimensionError("layer_norm: last axis of " + shape_str(x.shape()) + " does not match gain " +
                         shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()));
  }
  const std::size_t c = gain.dim(0);
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (xr[j] - mu) * is;
      out[r * c + j] = xhat[r * c + j] * gain[j] + bias[j];
    }
  }
  return detail::make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& g = self.inputs[1]->data;
        double* gx = detail::input_grad(self, 0);
        double* gg = detail::input_grad(self, 1);
        double* gb = detail::input_grad(self, 2);
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = self.grad.data() + r * c;
          const double* xh = xhat.data() + r * c;
          if (gg)
            for (std::size_t j = 0; j < c; ++j) gg[j] += gy[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < c; ++j) gb[j] += gy[j];
          if (gx) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = gy[j] * g[j];
              m1 += d;
              m2 += d * xh[j];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += inv_std[r] * (gy[j] * g[j] - m1 - xh[j] * m2);
          }
        }
      });
}

// Stack along the last axis; all inputs agree on the leading axes.
inline Tensor concat_lastaxis(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_lastaxis: no inputs");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw DimensionError("concat_lastaxis: " + shape_str(p.shape()) + " does not match leading axes of " +
                           shape_str(parts[0].shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + col + j] = in[r * widths[k] + j];
    col += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  return detail::make_result("concat", std::move(shape), std::move(out), parts,
                             [rows, total, widths](detail::Node& self) {
                               std::size_t col = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (double* g = detail::input_grad(self, k))
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       g[r * widths[k] + j] += self.grad[r * total + col + j];
                                 col += widths[k];
                               }
                             });
}

// Columns [start, start+len) of a rank-2 tensor.
inline Tensor slice_lastaxis(const Tensor& x, std::size_t start, std::size_t len) {
  detail::require_rank(x, 2, "slice_lastaxis");
  const std::size_t rows = x.dim(0), c = x.dim(1);
  if (start + len > c) throw DimensionError("slice_lastaxis: range exceeds width " + std::to_string(c));
  std::vector<double> out(rows * len);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = in[r * c + start + j];
  return detail::make_result("slice", {rows, len}, std::move(out), {x}, [rows, c, start, len](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) g[r * c + start + j] += self.grad[r * len + j];
  });
}

// Stack along axis 0; trailing axes must agree.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw DimensionError("concat_rows: " + shape_str(p.shape()) + " does not match trailing axes of " +
                           shape_str(parts[0].shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return detail::make_result("concat_rows", std::move(shape), std::move(out), parts, [](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t n = self.inputs[k]->data.size();
      if (double* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      off += n;
    }
  });
}

// Mean over one axis; the axis is removed from the result shape.
inline Tensor mean_pool_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("mean_pool_axis: axis out of range for " + shape_str(x.shape()));
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  if (n == 0) throw ArgumentError("mean_pool_axis: empty axis");
  std::vector<double> out(outer * inner, 0.0);
  const auto in = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * n + a) * inner + i];
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out) v *= inv;
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return detail::make_result("mean_pool", std::move(shape), std::move(out), {x},
                             [outer, inner, n, inv](detail::Node& self) {
                               double* g = detail::input_grad(self, 0);
                               if (!g) return;
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t a = 0; a < n; ++a)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     g[(o * n + a) * inner + i] += self.grad[o * inner + i] * inv;
                             });
}

// Causal dilated 1-D convolution: Y(t) = sum_s X(t - d*s) · F(s), with X
// implicitly zero for t < 0. X is [L×C_in], F is [k×C_in×C_out].
inline Tensor conv1d_dilated(const Tensor& x, const Tensor& f, std::size_t dilation) {
  if (dilation < 1) throw ArgumentError("conv1d_dilated: dilation must be >= 1");
  detail::require_rank(x, 2, "conv1d_dilated");
  detail::require_rank(f, 3, "conv1d_dilated");
  if (x.dim(0) == 0) throw ArgumentError("conv1d_dilated: empty input sequence");
  if (f.dim(0) == 0) throw ArgumentError("conv1d_dilated: kernel size must be >= 1");
  if (f.dim(1) != x.dim(1)) {
    throw DimensionError("conv1d_dilated: input " + shape_str(x.shape()) + " does not match filter " +
                         shape_str(f.shape()));
  }
  const std::size_t len = x.dim(0), cin = x.dim(1), k = f.dim(0), cout = f.dim(2);
  std::vector<double> out(len * cout, 0.0);
  const double* xv = x.data().data();
  const double* fv = f.data().data();
  for (std::size_t s = 0; s < k; ++s) {
    const std::size_t off = dilation * s;
    if (off >= len) break;
    kernels::gemm_nn(len - off, cout, cin, xv, cin, fv + s * cin * cout, cout, out.data() + off * cout, cout);
  }
  return detail::make_result(
      "conv1d_dilated", {len, cout}, std::move(out), {x, f}, [len, cin, k, cout, dilation](detail::Node& self) {
        const double* gy = self.grad.data();
        const double* xv = self.inputs[0]->data.data();
        const double* fv = self.inputs[1]->data.data();
        double* gx = detail::input_grad(self, 0);
        double* gf = detail::input_grad(self, 1);
        for (std::size_t s = 0; s < k; ++s) {
          const std::size_t off = dilation * s;
          if (off >= len) break;
          if (gx) kernels::gemm_nt(len - off, cin, cout, gy + off * cout, cout, fv + s * cin * cout, cout, gx, cin);
          if (gf) kernels::gemm_tn(cin, cout, len - off, xv, cin, gy + off * cout, cout, gf + s * cin * cout, cout);
        }
      });
}

// Same-padded 2-D convolution over an [H×W×C_in] map with an odd
// [kh×kw×C_in×C_out] filter.
inline Tensor conv2d_same(const Tensor& x, const Tensor& f) {
  detail::require_rank(x, 3, "conv2d_same");
  detail::require_rank(f, 4, "conv2d_same");
  if (f.dim(2) != x.dim(2) || f.dim(0) % 2 == 0 || f.dim(1) % 2 == 0) {
    throw DimensionError("conv2d_same: input " + shape_str(x.shape()) + " incompatible with filter " +
                         shape_str(f.shape()));
  }
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t kh = f.dim(0), kw = f.dim(1), cout = f.dim(3);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);

  // Visits every (output row, input row, tap, valid column range) once.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t dy = 0; dy < kh; ++dy)
      for (std::size_t dx = 0; dx < kw; ++dx) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(dx) - pw;
        const std::size_t w0 = sx < 0 ? static_cast<std::size_t>(-sx) : 0;
        const std::size_t w1 = sx > 0 ? w - std::min<std::size_t>(w, static_cast<std::size_t>(sx)) : w;
        if (w0 >= w1) continue;
        for (std::size_t row = 0; row < h; ++row) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(row) + static_cast<std::ptrdiff_t>(dy) - ph;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(h)) continue;
          fn(row, static_cast<std::size_t>(src), dy * kw + dx, w0, w1, sx);
        }
      }
  };

  std::vector<double> out(h * w * cout, 0.0);
  const double* xv = x.data().data();
  const double* fv = f.data().data();
  for_each_tap([&](std::size_t row, std::size_t src, std::size_t tap, std::size_t w0, std::size_t w1,
                   std::ptrdiff_t sx) {
    const double* xin = xv + (src * w + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(w0) + sx)) * cin;
    kernels::gemm_nn(w1 - w0, cout, cin, xin, cin, fv + tap * cin * cout, cout, out.data() + (row * w + w0) * cout,
                     cout);
  });
  return detail::make_result("conv2d_same", {h, w, cout}, std::move(out), {x, f},
                             [=](detail::Node& self) {
                               const double* gy = self.grad.data();
                               const double* xv = self.inputs[0]->data.data();
                               const double* fv = self.inputs[1]->data.data();
                               double* gx = detail::input_grad(self, 0);
                               double* gf = detail::input_grad(self, 1);
                               for_each_tap([&](std::size_t row, std::size_t src, std::size_t tap, std::size_t w0,
                                                std::size_t w1, std::ptrdiff_t sx) {
                                 const std::size_t xoff =
                                     (src * w + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(w0) + sx)) * cin;
                                 const double* gyr = gy + (row * w + w0) * cout;
                                 if (gx) kernels::gemm_nt(w1 - w0, cin, cout, gyr, cout, fv + tap * cin * cout, cout,
                                                          gx + xoff, cin);
                                 if (gf) kernels::gemm_tn(cin, cout, w1 - w0, xv + xoff, cin, gyr, cout,
                                                          gf + tap * cin * cout, cout);
                               });
                             });
}

// 2×2 mean pooling with stride 2 over [H×W×C]; odd trailing rows/cols drop.
inline Tensor avg_pool2x2(const Tensor& x) {
  detail::require_rank(x, 3, "avg_pool2x2");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(oh * ow * c, 0.0);
  const auto in = x.data();
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double s = in[((2 * i) * w + 2 * j) * c + ch] + in[((2 * i) * w + 2 * j + 1) * c + ch] +
                         in[((2 * i + 1) * w + 2 * j) * c + ch] + in[((2 * i + 1) * w + 2 * j + 1) * c + ch];
        out[(i * ow + j) * c + ch] = 0.25 * s;
      }
  return detail::make_result("avg_pool2x2", {oh, ow, c}, std::move(out), {x}, [=](detail::Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double gv = 0.25 * self.grad[(i * ow + j) * c + ch];
          g[((2 * i) * w + 2 * j) * c + ch] += gv;
          g[((2 * i) * w + 2 * j + 1) * c + ch] += gv;
          g[((2 * i + 1) * w + 2 * j) * c + ch] += gv;
          g[((2 * i + 1) * w + 2 * j + 1) * c + ch] += gv;
        }
  });
}

// Inverted dropout driven by an explicit seed so runs are reproducible.
inline Tensor dropout(const Tensor& x, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ArgumentError("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = (static_cast<double>(rng() >> 11) * 0x1.0p-53 < keep) ? 1.0 / keep : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return detail::make_result("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

}  // namespace atgn
