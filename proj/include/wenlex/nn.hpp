#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wenlex/ops.hpp"
#include "wenlex/rng.hpp"

namespace wenlex {

/// A named parameter. Tensors are handles, so copies alias the same storage.
struct NamedTensor {
  std::string name;
  Tensor value;
};

using ParamList = std::vector<NamedTensor>;

inline std::vector<Tensor> tensors_of(const ParamList& ps) {
  std::vector<Tensor> out;
  for (const auto& p : ps) out.push_back(p.value);
  return out;
}

inline void set_trainable(const ParamList& ps, bool on) {
  for (auto p : ps) {
    p.value.set_requires_grad(on);
    p.value.zero_grad();
  }
}

inline void zero_grads(const ParamList& ps) {
  for (auto p : ps) p.value.zero_grad();
}

namespace detail {

/// He-normal initialization.
inline Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::vector<double> v(numel_of(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& x : v) x = sd * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace detail

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : w(detail::he_normal({in, out}, in, rng)), b(Tensor::zeros({out}, true)) {}

  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, w), b); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

struct Conv2d {
  Tensor w;  // [out, in, k, k]
  Tensor b;
  std::size_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t pad_, Rng& rng)
      : w(detail::he_normal({out, in, k, k}, in * k * k, rng)), b(Tensor::zeros({out}, true)), stride(stride_), pad(pad_) {}

  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

struct ConvTranspose2d {
  Tensor w;  // [in, out, k, k]
  Tensor b;
  std::size_t stride = 2, pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t pad_, Rng& rng)
      : w(detail::he_normal({in, out, k, k}, in * k * k / (stride_ * stride_), rng)),
        b(Tensor::zeros({out}, true)),
        stride(stride_),
        pad(pad_) {}

  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, w, b, stride, pad); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

struct BatchNorm {
  Tensor gamma, beta;
  // Running statistics live in tensors so they can be checkpointed with the
  // parameters; they never take part in differentiation.
  Tensor running_mean, running_var;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t c)
      : gamma(Tensor::full({c}, 1.0, true)),
        beta(Tensor::zeros({c}, true)),
        running_mean(Tensor::zeros({c})),
        running_var(Tensor::full({c}, 1.0)) {}

  Tensor operator()(const Tensor& x, NormMode mode) const {
    BatchNormStats st{running_mean.vec(), running_var.vec()};
    Tensor y = batch_norm(x, gamma, beta, st, mode);
    if (mode == NormMode::Train) {
      Tensor rm = running_mean, rv = running_var;
      std::copy(st.running_mean.begin(), st.running_mean.end(), rm.mutable_data().begin());
      std::copy(st.running_var.begin(), st.running_var.end(), rv.mutable_data().begin());
    }
    return y;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
  void collect_buffers(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".running_mean", running_mean});
    out.push_back({prefix + ".running_var", running_var});
  }
};

/// Deep copy of a list of tensors into fresh storage.
inline ParamList clone_params(const ParamList& ps, bool requires_grad) {
  ParamList out;
  for (const auto& p : ps) out.push_back({p.name, Tensor(p.value.shape(), p.value.vec(), requires_grad)});
  return out;
}

/// Copies values (not handles) from src into dst; names and shapes must agree.
inline void copy_values(const ParamList& src, const ParamList& dst) {
  if (src.size() != dst.size()) throw ShapeError("copy_values: parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].value.shape() != dst[i].value.shape()) {
      throw ShapeError("copy_values: mismatch at " + src[i].name);
    }
    Tensor t = dst[i].value;
    std::copy(src[i].value.vec().begin(), src[i].value.vec().end(), t.mutable_data().begin());
  }
}

}  // namespace wenlex
