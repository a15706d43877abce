#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "wenlex/tensor.hpp"

namespace wenlex {

inline Tensor sum(const Tensor& a);
inline Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor matmul(const Tensor& a, const Tensor& b);
inline Tensor transpose(const Tensor& a);
inline Tensor scale(const Tensor& a, double c);
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
inline Tensor reshape(const Tensor& a, Shape shape);
inline Tensor sum(const Tensor& a, std::size_t axis);

// ---------------------------------------------------------------------------
// Elementwise binary ops. Shapes must match, or one side must hold a single
// element which is broadcast.

namespace detail {

enum class BinKind { Add, Sub, Mul };

inline Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

inline Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t n = numel_of(shape);
  const bool sa = a.numel() == 1 && n != 1;
  const bool sb = b.numel() == 1 && n != 1;
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[sa ? 0 : i];
    const double y = bv[sb ? 0 : i];
    switch (kind) {
      case BinKind::Add: out[i] = x + y; break;
      case BinKind::Sub: out[i] = x - y; break;
      case BinKind::Mul: out[i] = x * y; break;
    }
  }
  auto bw = [a, b, kind, sa, sb, n](std::span<const double> g) {
    if (a.requires_grad()) {
      std::vector<double> ga(a.numel(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = kind == BinKind::Mul ? g[i] * b[sb ? 0 : i] : g[i];
        ga[sa ? 0 : i] += d;
      }
      accumulate(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(b.numel(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double d = g[i];
        if (kind == BinKind::Sub) d = -d;
        if (kind == BinKind::Mul) d = g[i] * a[sa ? 0 : i];
        gb[sb ? 0 : i] += d;
      }
      accumulate(b, gb);
    }
  };
  auto gbw = [a, b, kind, sa, sb](const Tensor& g, const std::vector<bool>& need) {
    std::vector<Tensor> r(2);
    if (need[0]) {
      Tensor ga = kind == BinKind::Mul ? mul(g, b) : g;
      r[0] = sa ? sum(ga) : ga;
    }
    if (need[1]) {
      Tensor gb = kind == BinKind::Mul ? mul(g, a) : (kind == BinKind::Sub ? scale(g, -1.0) : g);
      r[1] = sb ? sum(gb) : gb;
    }
    return r;
  };
  return make_result(name, std::move(shape), std::move(out), {a, b}, bw, gbw);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinKind::Add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinKind::Sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinKind::Mul, "mul"); }

inline Tensor add_scalar(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
  auto bw = [a, c](std::span<const double> g) {
    std::vector<double> ga(g.begin(), g.end());
    for (double& v : ga) v *= c;
    detail::accumulate(a, ga);
  };
  auto gbw = [c](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{scale(g, c)}; };
  return detail::make_result("scale", a.shape(), std::move(out), {a}, bw, gbw);
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.

namespace detail {

/// `deriv(x, y)` returns dy/dx given input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& a, const char* name, F f, D deriv) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  auto y = std::make_shared<std::vector<double>>(out);
  auto bw = [a, y, deriv](std::span<const double> g) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * deriv(a[i], (*y)[i]);
    accumulate(a, ga);
  };
  return make_result(name, a.shape(), std::move(out), {a}, bw);
}

/// Piecewise-linear activations: the local slope is constant almost
/// everywhere, so the vector-Jacobian product is a product with a constant
/// mask and stays differentiable.
inline Tensor piecewise_linear(const Tensor& a, double neg_slope, const char* name) {
  std::vector<double> out(a.numel());
  std::vector<double> slope(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    slope[i] = a[i] > 0.0 ? 1.0 : neg_slope;
    out[i] = slope[i] * a[i];
  }
  Tensor mask(a.shape(), slope);
  auto bw = [a, mask](std::span<const double> g) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * mask[i];
    accumulate(a, ga);
  };
  auto gbw = [mask](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, mask)}; };
  return make_result(name, a.shape(), std::move(out), {a}, bw, gbw);
}

}  // namespace detail

inline Tensor relu(const Tensor& a) { return detail::piecewise_linear(a, 0.0, "relu"); }
inline Tensor leaky_relu(const Tensor& a, double alpha = 0.2) {
  return detail::piecewise_linear(a, alpha, "leaky_relu");
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log1p(const Tensor& a) {
  for (double x : a.data()) {
    if (x <= -1.0) throw std::domain_error("log1p: argument must exceed -1");
  }
  return detail::unary(a, "log1p", [](double x) { return std::log1p(x); }, [](double x, double) { return 1.0 / (1.0 + x); });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  auto bw = [a](std::span<const double> g) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = 2.0 * a[i] * g[i];
    detail::accumulate(a, ga);
  };
  auto gbw = [a](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, scale(a, 2.0))}; };
  return detail::make_result("square", a.shape(), std::move(out), {a}, bw, gbw);
}

// ---------------------------------------------------------------------------
// Reductions. Axis reductions drop the reduced axis.

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  auto bw = [a](std::span<const double> g) { detail::accumulate(a, std::vector<double>(a.numel(), g[0])); };
  auto gbw = [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul(Tensor::full(a.shape(), 1.0), g)};
  };
  return detail::make_result("sum", {1}, {s}, {a}, bw, gbw);
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

namespace detail {

struct AxisSplit {
  std::size_t outer, extent, inner;
  Shape reduced;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis out of range for shape " + shape_str(s));
  AxisSplit r{1, s[axis], 1, {}};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.reduced.push_back(s[i]);
  if (r.reduced.empty()) r.reduced = {1};
  return r;
}

}  // namespace detail

inline Tensor sum(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "sum");
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += a[(o * sp.extent + k) * sp.inner + i];
  auto bw = [a, sp](std::span<const double> g) {
    std::vector<double> ga(a.numel());
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.extent; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.extent + k) * sp.inner + i] = g[o * sp.inner + i];
    detail::accumulate(a, ga);
  };
  return detail::make_result("sum_axis", sp.reduced, std::move(out), {a}, bw);
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw ShapeError("mean: axis out of range");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

/// Euclidean norm of all elements. The gradient at the origin is taken as 0.
inline Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  const double nrm = std::sqrt(s);
  auto bw = [a, nrm](std::span<const double> g) {
    std::vector<double> ga(a.numel(), 0.0);
    if (nrm > 0.0)
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[0] * a[i] / nrm;
    detail::accumulate(a, ga);
  };
  return detail::make_result("l2_norm", {1}, {nrm}, {a}, bw);
}

inline Tensor l2_norm(const Tensor& a, std::size_t axis) {
  const auto sp = detail::split_axis(a.shape(), axis, "l2_norm");
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double x = a[(o * sp.extent + k) * sp.inner + i];
        out[o * sp.inner + i] += x * x;
      }
  for (double& v : out) v = std::sqrt(v);
  auto norms = std::make_shared<std::vector<double>>(out);
  auto bw = [a, sp, norms](std::span<const double> g) {
    std::vector<double> ga(a.numel(), 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.extent; ++k)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const double nrm = (*norms)[o * sp.inner + i];
          const std::size_t idx = (o * sp.extent + k) * sp.inner + i;
          if (nrm > 0.0) ga[idx] = g[o * sp.inner + i] * a[idx] / nrm;
        }
    detail::accumulate(a, ga);
  };
  return detail::make_result("l2_norm_axis", sp.reduced, std::move(out), {a}, bw);
}

// ---------------------------------------------------------------------------
// Linear algebra and layout.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  auto bw = [a, b, m, k, n](std::span<const double> g) {
    if (a.requires_grad()) {
      std::vector<double> ga(m * k, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
          ga[i * k + p] = s;
        }
      detail::accumulate(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      detail::accumulate(b, gb);
    }
  };
  auto gbw = [a, b](const Tensor& g, const std::vector<bool>& need) {
    std::vector<Tensor> r(2);
    if (need[0]) r[0] = matmul(g, transpose(b));
    if (need[1]) r[1] = matmul(transpose(a), g);
    return r;
  };
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, bw, gbw);
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  auto bw = [a, m, n](std::span<const double> g) {
    std::vector<double> ga(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
    detail::accumulate(a, ga);
  };
  auto gbw = [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{transpose(g)}; };
  return detail::make_result("transpose", {n, m}, std::move(out), {a}, bw, gbw);
}

/// x[m x n] + bias[n] broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.numel() != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.vec());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  auto bw = [x, bias, m, n](std::span<const double> g) {
    detail::accumulate(x, g);
    if (bias.requires_grad()) {
      std::vector<double> gb(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      detail::accumulate(bias, gb);
    }
  };
  auto gbw = [bias](const Tensor& g, const std::vector<bool>& need) {
    std::vector<Tensor> r(2);
    if (need[0]) r[0] = g;
    if (need[1]) {
      r[1] = reshape(sum(g, 0), bias.shape());
    }
    return r;
  };
  return detail::make_result("add_bias", x.shape(), std::move(out), {x, bias}, bw, gbw);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto bw = [a](std::span<const double> g) { detail::accumulate(a, g); };
  auto gbw = [a](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{reshape(g, a.shape())}; };
  return detail::make_result("reshape", std::move(shape), a.vec(), {a}, bw, gbw);
}

/// Concatenates matrices along columns.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].dim(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + offsets[k] + j] = parts[k][i * w + j];
  }
  auto bw = [parts, offsets, m, total](std::span<const double> g) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!parts[k].requires_grad()) continue;
      const std::size_t w = parts[k].dim(1);
      std::vector<double> gp(m * w);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) gp[i * w + j] = g[i * total + offsets[k] + j];
      detail::accumulate(parts[k], gp);
    }
  };
  auto gbw = [parts, offsets](const Tensor& g, const std::vector<bool>& need) {
    std::vector<Tensor> r(parts.size());
    for (std::size_t k = 0; k < parts.size(); ++k)
      if (need[k]) r[k] = slice_cols(g, offsets[k], offsets[k] + parts[k].dim(1));
    return r;
  };
  return detail::make_result("concat_cols", {m, total}, std::move(out), parts, bw, gbw);
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2 || begin >= end || end > a.dim(1)) throw ShapeError("slice_cols: bad range");
  const std::size_t m = a.dim(0), n = a.dim(1), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[i * n + begin + j];
  auto bw = [a, m, n, w, begin](std::span<const double> g) {
    std::vector<double> ga(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] = g[i * w + j];
    detail::accumulate(a, ga);
  };
  return detail::make_result("slice_cols", {m, w}, std::move(out), {a}, bw);
}

/// Selects (possibly repeated) slices along the first axis.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t stride = a.numel() / a.dim(0);
  std::vector<double> out(rows.size() * stride);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(a.data().begin() + rows[r] * stride, stride, out.begin() + r * stride);
  }
  Shape shape = a.shape();
  shape[0] = rows.size();
  auto bw = [a, rows, stride](std::span<const double> g) {
    std::vector<double> ga(a.numel(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < stride; ++j) ga[rows[r] * stride + j] += g[r * stride + j];
    detail::accumulate(a, ga);
  };
  return detail::make_result("gather_rows", std::move(shape), std::move(out), {a}, bw);
}

/// Mean of the rows of x[n x f] grouped by `segment[i]` in [0, segments).
/// Every segment must be non-empty.
inline Tensor segment_mean(const Tensor& x, const std::vector<std::size_t>& segment, std::size_t segments) {
  if (x.rank() != 2 || segment.size() != x.dim(0)) throw ShapeError("segment_mean: one segment id per row required");
  const std::size_t f = x.dim(1);
  std::vector<double> counts(segments, 0.0);
  for (std::size_t s : segment) {
    if (s >= segments) throw ShapeError("segment_mean: segment id out of range");
    counts[s] += 1.0;
  }
  for (double c : counts)
    if (c == 0.0) throw ShapeError("segment_mean: empty segment");
  std::vector<double> out(segments * f, 0.0);
  for (std::size_t i = 0; i < segment.size(); ++i)
    for (std::size_t j = 0; j < f; ++j) out[segment[i] * f + j] += x[i * f + j] / counts[segment[i]];
  auto bw = [x, segment, counts, f](std::span<const double> g) {
    std::vector<double> gx(x.numel());
    for (std::size_t i = 0; i < segment.size(); ++i)
      for (std::size_t j = 0; j < f; ++j) gx[i * f + j] = g[segment[i] * f + j] / counts[segment[i]];
    detail::accumulate(x, gx);
  };
  return detail::make_result("segment_mean", {segments, f}, std::move(out), {x}, bw);
}

/// Log-softmax over the last axis.
inline Tensor log_softmax(const Tensor& a) {
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.numel() / c;
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * c;
    const double mx = *std::max_element(x, x + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[j] - lse;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  auto bw = [a, y, rows, c](std::span<const double> g) {
    std::vector<double> ga(a.numel());
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[r * c + j] = g[r * c + j] - std::exp((*y)[r * c + j]) * gs;
    }
    detail::accumulate(a, ga);
  };
  return detail::make_result("log_softmax", a.shape(), std::move(out), {a}, bw);
}

inline Tensor softmax(const Tensor& a) { return exp(log_softmax(a)); }

/// Squared Euclidean distances between the rows of x[m x d] and y[n x d].
inline Tensor pairwise_sq_dist(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
    throw ShapeError("pairwise_sq_dist: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const std::size_t m = x.dim(0), n = y.dim(0), d = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = x[i * d + k] - y[j * d + k];
        s += t * t;
      }
      out[i * n + j] = s;
    }
  auto bw = [x, y, m, n, d](std::span<const double> g) {
    std::vector<double> gx(x.requires_grad() ? m * d : 0, 0.0);
    std::vector<double> gy(y.requires_grad() ? n * d : 0, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = 2.0 * g[i * n + j];
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double t = gij * (x[i * d + k] - y[j * d + k]);
          if (!gx.empty()) gx[i * d + k] += t;
          if (!gy.empty()) gy[j * d + k] -= t;
        }
      }
    if (!gx.empty()) detail::accumulate(x, gx);
    if (!gy.empty()) detail::accumulate(y, gy);
  };
  return detail::make_result("pairwise_sq_dist", {m, n}, std::move(out), {x, y}, bw);
}

// ---------------------------------------------------------------------------
// Convolutions. Layout is NCHW; conv2d weights are [out, in, k, k] and
// conv_transpose2d weights are [in, out, k, k] so that the two share a kernel
// tensor when used as adjoints.

namespace detail {

struct ConvGeom {
  std::size_t batch, in_c, in_h, in_w, out_c, out_h, out_w, k, stride, pad;
};

/// out[n,o,i,j] += sum_{c,u,v} x[n,c,i*s-p+u, j*s-p+v] * w[o,c,u,v]
inline void conv_gather(const ConvGeom& g, const double* x, const double* w, double* out) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      double* op = out + (n * g.out_c + o) * g.out_h * g.out_w;
      for (std::size_t c = 0; c < g.in_c; ++c) {
        const double* xp = x + (n * g.in_c + c) * g.in_h * g.in_w;
        const double* wp = w + (o * g.in_c + c) * g.k * g.k;
        for (std::size_t u = 0; u < g.k; ++u)
          for (std::size_t v = 0; v < g.k; ++v) {
            const double wv = wp[u * g.k + v];
            for (std::size_t i = 0; i < g.out_h; ++i) {
              const long r = static_cast<long>(i * g.stride + u) - static_cast<long>(g.pad);
              if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
              const double* xrow = xp + r * g.in_w;
              double* orow = op + i * g.out_w;
              for (std::size_t j = 0; j < g.out_w; ++j) {
                const long col = static_cast<long>(j * g.stride + v) - static_cast<long>(g.pad);
                if (col < 0 || col >= static_cast<long>(g.in_w)) continue;
                orow[j] += wv * xrow[col];
              }
            }
          }
      }
    }
}

/// Adjoint of conv_gather in x: xg[n,c,i*s-p+u, j*s-p+v] += y[n,o,i,j] * w[o,c,u,v]
inline void conv_scatter(const ConvGeom& g, const double* y, const double* w, double* xg) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const double* yp = y + (n * g.out_c + o) * g.out_h * g.out_w;
      for (std::size_t c = 0; c < g.in_c; ++c) {
        double* xp = xg + (n * g.in_c + c) * g.in_h * g.in_w;
        const double* wp = w + (o * g.in_c + c) * g.k * g.k;
        for (std::size_t u = 0; u < g.k; ++u)
          for (std::size_t v = 0; v < g.k; ++v) {
            const double wv = wp[u * g.k + v];
            for (std::size_t i = 0; i < g.out_h; ++i) {
              const long r = static_cast<long>(i * g.stride + u) - static_cast<long>(g.pad);
              if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
              double* xrow = xp + r * g.in_w;
              const double* yrow = yp + i * g.out_w;
              for (std::size_t j = 0; j < g.out_w; ++j) {
                const long col = static_cast<long>(j * g.stride + v) - static_cast<long>(g.pad);
                if (col < 0 || col >= static_cast<long>(g.in_w)) continue;
                xrow[col] += wv * yrow[j];
              }
            }
          }
      }
    }
}

/// wg[o,c,u,v] += sum_{n,i,j} y[n,o,i,j] * x[n,c,i*s-p+u, j*s-p+v]
inline void conv_weight_grad(const ConvGeom& g, const double* x, const double* y, double* wg) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const double* yp = y + (n * g.out_c + o) * g.out_h * g.out_w;
      for (std::size_t c = 0; c < g.in_c; ++c) {
        const double* xp = x + (n * g.in_c + c) * g.in_h * g.in_w;
        double* wp = wg + (o * g.in_c + c) * g.k * g.k;
        for (std::size_t u = 0; u < g.k; ++u)
          for (std::size_t v = 0; v < g.k; ++v) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.out_h; ++i) {
              const long r = static_cast<long>(i * g.stride + u) - static_cast<long>(g.pad);
              if (r < 0 || r >= static_cast<long>(g.in_h)) continue;
              const double* xrow = xp + r * g.in_w;
              const double* yrow = yp + i * g.out_w;
              for (std::size_t j = 0; j < g.out_w; ++j) {
                const long col = static_cast<long>(j * g.stride + v) - static_cast<long>(g.pad);
                if (col < 0 || col >= static_cast<long>(g.in_w)) continue;
                s += yrow[j] * xrow[col];
              }
            }
            wp[u * g.k + v] += s;
          }
      }
    }
}

inline void add_channel_bias(std::vector<double>& out, const Tensor& bias, std::size_t batch, std::size_t ch,
                             std::size_t plane) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t p = 0; p < plane; ++p) out[(n * ch + c) * plane + p] += bias[c];
}

inline std::vector<double> channel_bias_grad(std::span<const double> g, std::size_t batch, std::size_t ch,
                                             std::size_t plane) {
  std::vector<double> gb(ch, 0.0);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t p = 0; p < plane; ++p) gb[c] += g[(n * ch + c) * plane + p];
  return gb;
}

}  // namespace detail

/// Cross-correlation. `bias` may be undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " + shape_str(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t k = w.dim(2);
  if (k > x.dim(2) + 2 * pad || k > x.dim(3) + 2 * pad) throw ShapeError("conv2d: kernel larger than padded input");
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), 0, 0, k, stride, pad};
  g.out_h = (g.in_h + 2 * pad - k) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - k) / stride + 1;
  std::vector<double> out(g.batch * g.out_c * g.out_h * g.out_w, 0.0);
  detail::conv_gather(g, x.data().data(), w.data().data(), out.data());
  if (bias.defined()) {
    if (bias.numel() != g.out_c) throw ShapeError("conv2d: bias length must equal output channels");
    detail::add_channel_bias(out, bias, g.batch, g.out_c, g.out_h * g.out_w);
  }
  auto bw = [x, w, bias, g](std::span<const double> gout) {
    if (x.requires_grad()) {
      std::vector<double> gx(x.numel(), 0.0);
      detail::conv_scatter(g, gout.data(), w.data().data(), gx.data());
      detail::accumulate(x, gx);
    }
    if (w.requires_grad()) {
      std::vector<double> gw(w.numel(), 0.0);
      detail::conv_weight_grad(g, x.data().data(), gout.data(), gw.data());
      detail::accumulate(w, gw);
    }
    if (bias.defined() && bias.requires_grad()) {
      detail::accumulate(bias, detail::channel_bias_grad(gout, g.batch, g.out_c, g.out_h * g.out_w));
    }
  };
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result("conv2d", {g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), inputs, bw);
}

/// Transposed convolution: the adjoint of conv2d with the same kernel,
/// stride and padding. Output extent is (h - 1) * s - 2p + k.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                               std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()));
  }
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const std::size_t k = w.dim(2);
  const long oh = (static_cast<long>(x.dim(2)) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) +
                  static_cast<long>(k);
  const long ow = (static_cast<long>(x.dim(3)) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(pad) +
                  static_cast<long>(k);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: non-positive output extent");
  // Geometry of the forward conv this op is the adjoint of: input = our output.
  detail::ConvGeom g{x.dim(0), w.dim(1), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow),
                     x.dim(1), x.dim(2), x.dim(3), k, stride, pad};
  std::vector<double> out(g.batch * g.in_c * g.in_h * g.in_w, 0.0);
  detail::conv_scatter(g, x.data().data(), w.data().data(), out.data());
  if (bias.defined()) {
    if (bias.numel() != g.in_c) throw ShapeError("conv_transpose2d: bias length must equal output channels");
    detail::add_channel_bias(out, bias, g.batch, g.in_c, g.in_h * g.in_w);
  }
  auto bw = [x, w, bias, g](std::span<const double> gout) {
    if (x.requires_grad()) {
      std::vector<double> gx(x.numel(), 0.0);
      detail::conv_gather(g, gout.data(), w.data().data(), gx.data());
      detail::accumulate(x, gx);
    }
    if (w.requires_grad()) {
      std::vector<double> gw(w.numel(), 0.0);
      detail::conv_weight_grad(g, gout.data(), x.data().data(), gw.data());
      detail::accumulate(w, gw);
    }
    if (bias.defined() && bias.requires_grad()) {
      detail::accumulate(bias, detail::channel_bias_grad(gout, g.batch, g.in_c, g.in_h * g.in_w));
    }
  };
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result("conv_transpose2d", {g.batch, g.in_c, g.in_h, g.in_w}, std::move(out), inputs, bw);
}

// ---------------------------------------------------------------------------
// Batch normalization over axis 1 of an [N, C] or [N, C, H, W] tensor.

enum class NormMode { Train, Eval };

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                         NormMode mode, double momentum = kBatchNormMomentum, double eps = kBatchNormEps) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batch_norm expects [N,C] or [N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c || stats.running_var.size() != c) {
    throw ShapeError("batch_norm: parameter length must equal channel count");
  }
  const double m = static_cast<double>(n * plane);
  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);
  if (mode == NormMode::Train) {
    if (n < 2) throw std::invalid_argument("batch_norm: train mode needs a batch of at least 2");
    std::vector<double> var(c, 0.0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) mu[ch] += x[(b * c + ch) * plane + p];
    for (double& v : mu) v /= m;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = x[(b * c + ch) * plane + p] - mu[ch];
          var[ch] += d * d;
        }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double biased = var[ch] / m;
      inv_std[ch] = 1.0 / std::sqrt(biased + eps);
      stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * mu[ch];
      stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * var[ch] / (m - 1.0);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + eps);
    }
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * c + ch) * plane + p;
        xhat[i] = (x[i] - mu[ch]) * inv_std[ch];
        out[i] = gamma[ch] * xhat[i] + beta[ch];
      }
  auto bw = [x, gamma, beta, xh = std::move(xhat), inv_std, n, c, plane, m, mode](std::span<const double> g) {
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = (b * c + ch) * plane + p;
          sum_g[ch] += g[i];
          sum_gx[ch] += g[i] * xh[i];
        }
    detail::accumulate(gamma, sum_gx);
    detail::accumulate(beta, sum_g);
    if (!x.requires_grad()) return;
    std::vector<double> gx(x.numel());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t i = (b * c + ch) * plane + p;
          if (mode == NormMode::Train) {
            gx[i] = gamma[ch] * inv_std[ch] * (g[i] - sum_g[ch] / m - xh[i] * sum_gx[ch] / m);
          } else {
            gx[i] = gamma[ch] * inv_std[ch] * g[i];
          }
        }
    detail::accumulate(x, gx);
  };
  return detail::make_result("batch_norm", x.shape(), std::move(out), {x, gamma, beta}, bw);
}

// ---------------------------------------------------------------------------

inline Tensor Tape::grad_of(const Tensor& out, const Tensor& input) {
  if (out.numel() != 1) throw ShapeError("grad_of requires a scalar output");
  Scope scope(*this);
  // Forward reachability from `input`; only these tensors need gradients.
  std::unordered_set<const TensorImpl*> depends{input.impl()};
  const std::size_t n0 = nodes_.size();
  for (std::size_t i = 0; i < n0; ++i) {
    for (const auto& in : nodes_[i].inputs) {
      if (depends.count(in.impl())) {
        depends.insert(nodes_[i].output.impl());
        break;
      }
    }
  }
  if (!depends.count(out.impl())) throw std::invalid_argument("grad_of: input is not on the tape path to the output");

  std::unordered_map<const TensorImpl*, Tensor> grads;
  grads[out.impl()] = Tensor::full(out.shape(), 1.0);
  for (std::size_t i = n0; i-- > 0;) {
    // Copy: graph backward appends to nodes_, which may reallocate.
    const TapeNode n = nodes_[i];
    auto it = grads.find(n.output.impl());
    if (it == grads.end() || !depends.count(n.output.impl())) continue;
    std::vector<bool> needed(n.inputs.size());
    bool any = false;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      needed[k] = depends.count(n.inputs[k].impl()) > 0;
      any = any || needed[k];
    }
    if (!any) continue;
    if (!n.backward_graph) throw std::logic_error("double backward is not supported through op '" + n.op + "'");
    const Tensor gout = it->second;
    auto gin = n.backward_graph(gout, needed);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!needed[k] || !gin[k].defined()) continue;
      auto& slot = grads[n.inputs[k].impl()];
      slot = slot.defined() ? add(slot, gin[k]) : gin[k];
    }
  }
  auto it = grads.find(input.impl());
  if (it == grads.end()) throw std::invalid_argument("grad_of: input is not on the tape path to the output");
  return it->second;
}

}  // namespace wenlex
