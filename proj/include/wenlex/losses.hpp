#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wenlex/codec.hpp"
#include "wenlex/models.hpp"
#include "wenlex/ops.hpp"
#include "wenlex/rng.hpp"

namespace wenlex {

// ---------------------------------------------------------------------------
// Ground-truth NLE database

struct DbEntry {
  std::vector<std::string> tokens;
  std::vector<double> embedding;
};

/// n ground-truth embeddings per diagnosis, with the sentences they came from.
struct NleDatabase {
  std::string grammar;
  std::vector<std::vector<DbEntry>> per_diagnosis;

  std::size_t size_per_diagnosis() const { return per_diagnosis.empty() ? 0 : per_diagnosis.front().size(); }

  /// Embeddings of one diagnosis stacked into an [n, d] tensor.
  Tensor matrix(std::size_t diagnosis) const {
    const auto& es = per_diagnosis.at(diagnosis);
    if (es.empty()) throw std::invalid_argument("database has no entries for diagnosis " + std::to_string(diagnosis));
    std::vector<double> v;
    for (const auto& e : es) v.insert(v.end(), e.embedding.begin(), e.embedding.end());
    return Tensor({es.size(), es.front().embedding.size()}, std::move(v));
  }
};

// ---------------------------------------------------------------------------
// MMD

struct MmdConfig {
  enum class Bandwidth { Median, Fixed };
  Bandwidth bandwidth = Bandwidth::Median;
  double sigma = 1.0;

  static MmdConfig fixed(double s) {
    if (!(s > 0.0)) throw std::invalid_argument("fixed MMD bandwidth must be positive");
    return {Bandwidth::Fixed, s};
  }
};

/// Median of all pairwise Euclidean distances in the pooled set; 1 if zero.
inline double median_bandwidth(const Tensor& x, const Tensor& y) {
  const std::size_t d = x.dim(1);
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < x.dim(0); ++i) rows.push_back(x.data().data() + i * d);
  for (std::size_t i = 0; i < y.dim(0); ++i) rows.push_back(y.data().data() + i * d);
  std::vector<double> dist;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      dist.push_back(std::sqrt(s));
    }
  if (dist.empty()) return 1.0;
  std::sort(dist.begin(), dist.end());
  const std::size_t n = dist.size();
  const double med = n % 2 ? dist[n / 2] : 0.5 * (dist[n / 2 - 1] + dist[n / 2]);
  return med > 0.0 ? med : 1.0;
}

/// Biased estimate with a Gaussian kernel k(a,b) = exp(-|a-b|^2 / (2 sigma^2)):
/// mean K(X,X) + mean K(Y,Y) - 2 mean K(X,Y), diagonal terms included.
inline Tensor mmd_squared(const Tensor& x, const Tensor& y, const MmdConfig& cfg = {}) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
    throw ShapeError("mmd_squared: sets must be [m,d] and [n,d], got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  const double sigma = cfg.bandwidth == MmdConfig::Bandwidth::Fixed ? cfg.sigma : median_bandwidth(x, y);
  const double g = -1.0 / (2.0 * sigma * sigma);
  auto k = [g](const Tensor& a, const Tensor& b) { return mean(wenlex::exp(scale(pairwise_sq_dist(a, b), g))); };
  return sub(add(k(x, x), k(y, y)), scale(k(x, y), 2.0));
}

/// Mean over the diagnoses present in `generated` of MMD^2 against the
/// database entries of that diagnosis.
inline Tensor plausibility_mmd(const std::map<std::size_t, Tensor>& generated, const NleDatabase& db,
                               const MmdConfig& cfg = {}) {
  if (generated.empty()) throw std::invalid_argument("plausibility_mmd: no generated embeddings");
  Tensor total;
  for (const auto& [d, e] : generated) {
    if (d >= db.per_diagnosis.size() || db.per_diagnosis[d].empty()) {
      throw std::invalid_argument("database has no entries for diagnosis " + std::to_string(d));
    }
    Tensor m = mmd_squared(e, db.matrix(d), cfg);
    total = total.defined() ? add(total, m) : m;
  }
  return scale(total, 1.0 / static_cast<double>(generated.size()));
}

// ---------------------------------------------------------------------------
// WGAN-GP

struct GpConfig {
  double lambda = 10.0;
};

namespace detail {

/// Critic copy whose parameters are excluded from differentiation.
template <typename C>
C frozen_critic(const C& critic) {
  if constexpr (requires { critic.frozen_clone(); }) {
    return critic.frozen_clone();
  } else {
    return critic;
  }
}

inline Tensor row_constant(const std::vector<double>& per_row, std::size_t cols) {
  std::vector<double> v(per_row.size() * cols);
  for (std::size_t i = 0; i < per_row.size(); ++i) std::fill_n(v.begin() + i * cols, cols, per_row[i]);
  return Tensor({per_row.size(), cols}, std::move(v));
}

}  // namespace detail

struct CriticLossParts {
  Tensor total;
  double wasserstein = 0.0;  // E[d(fake)] - E[d(real)]
  double penalty = 0.0;      // lambda * E[(|grad| - 1)^2]
};

/// E[d(fake)] - E[d(real)] + lambda E[(|grad_z d(z)| - 1)^2] at z = a e + (1-a) fake,
/// one a ~ U[0,1] per pair. Needs an active tape; the penalty is built with
/// graph gradients so it backpropagates into the critic parameters.
template <typename C>
CriticLossParts critic_loss(const C& critic, const Tensor& real, const Tensor& fake, const Tensor& diag,
                            const GpConfig& gp, Rng& rng) {
  if (real.shape() != fake.shape() || diag.dim(0) != real.dim(0)) {
    throw ShapeError("critic_loss: real " + shape_str(real.shape()) + ", fake " + shape_str(fake.shape()) +
                     " and conditioning " + shape_str(diag.shape()) + " must pair up");
  }
  Tape* tape = Tape::active();
  if (tape == nullptr) throw std::logic_error("critic_loss needs an active tape");
  const std::size_t b = real.dim(0), d = real.dim(1);
  const Tensor r = real.detach(), f = fake.detach(), c = diag.detach();
  Tensor w = sub(mean(critic(f, c)), mean(critic(r, c)));

  std::vector<double> alpha(b);
  for (double& a : alpha) a = rng.uniform();
  std::vector<double> mix(b * d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) mix[i * d + k] = alpha[i] * r[i * d + k] + (1.0 - alpha[i]) * f[i * d + k];
  Tensor z(Shape{b, d}, std::move(mix), true);
  Tensor grad = tape->grad_of(sum(critic(z, c)), z);
  Tensor pen = scale(mean(square(add_scalar(l2_norm(grad, 1), -1.0))), gp.lambda);
  CriticLossParts out{add(w, pen), w.item(), pen.item()};
  return out;
}

/// -E[d(fake)]; the critic's parameters are held fixed.
template <typename C>
Tensor generator_adv_loss(const C& critic, const Tensor& fake, const Tensor& diag) {
  if (fake.dim(0) == 0) throw ShapeError("generator_adv_loss: empty batch");
  const C frozen = detail::frozen_critic(critic);
  return scale(mean(frozen(fake, diag.detach())), -1.0);
}

// ---------------------------------------------------------------------------
// Faithfulness losses

/// Squared L2 distance between the tapped features of each original image and
/// the mean tapped features of its generated images, averaged over images.
/// `image_of` maps each generated image to its source; sources without any
/// generated image are skipped.
inline Tensor reconstruction_loss(const Classifier& frozen, const Tensor& originals, const Tensor& generated,
                                  const std::vector<std::size_t>& image_of, const std::string& tap) {
  check_tap(tap);
  if (generated.dim(0) != image_of.size() || image_of.empty()) {
    throw ShapeError("reconstruction_loss: one source index per generated image required");
  }
  std::vector<std::size_t> used;
  std::vector<std::size_t> compact(originals.dim(0), SIZE_MAX);
  for (std::size_t src : image_of) {
    if (src >= originals.dim(0)) throw ShapeError("reconstruction_loss: source index out of range");
    if (compact[src] == SIZE_MAX) {
      compact[src] = used.size();
      used.push_back(src);
    }
  }
  std::vector<std::size_t> seg;
  for (std::size_t src : image_of) seg.push_back(compact[src]);
  Tensor target;
  {
    Tape scratch;  // keep the constant branch off the caller's tape
    Tape::Scope scope(scratch);
    target = frozen.forward(gather_rows(originals.detach(), used), NormMode::Eval).taps.at(tap).detach();
  }
  Tensor feats = frozen.forward(generated, NormMode::Eval).taps.at(tap);
  Tensor avg = segment_mean(feats, seg, used.size());
  return scale(sum(square(sub(avg, target))), 1.0 / static_cast<double>(used.size()));
}

/// Cross-entropy of the frozen classifier on each generated image against the
/// classifier's own prediction for the source image, restricted to the
/// explained diagnosis and all evidence labels. Hard targets use the argmax
/// class; soft targets use the predicted distribution.
inline Tensor nle_classification_loss(const DomainSchema& s, const Tensor& log_probs,
                                      const std::vector<LabelVector>& predictions,
                                      const std::vector<std::size_t>& diagnosis, bool soft_targets = false) {
  const std::size_t r = predictions.size(), L = s.num_labels();
  if (diagnosis.size() != r || log_probs.dim(0) != r * L || log_probs.dim(1) != kClasses) {
    throw ShapeError("nle_classification_loss: expected log-probabilities [R*L,3] with one target per row");
  }
  std::vector<double> w(r * L * kClasses, 0.0);
  std::size_t terms = 0;
  for (std::size_t i = 0; i < r; ++i) {
    const auto& p = predictions[i];
    if (!present(p.states.at(diagnosis[i]))) {
      throw std::invalid_argument("nle_classification_loss: explained diagnosis is Negative in the prediction");
    }
    for (std::size_t l = 0; l < L; ++l) {
      if (s.is_diagnosis(l) && l != diagnosis[i]) continue;
      ++terms;
      for (std::size_t c = 0; c < kClasses; ++c) {
        const double t = soft_targets && !p.probs.empty() ? p.probs[l][c] : (static_cast<std::size_t>(p.states[l]) == c ? 1.0 : 0.0);
        w[(i * L + l) * kClasses + c] = t;
      }
    }
  }
  Tensor wt(log_probs.shape(), std::move(w));
  return scale(sum(mul(log_probs, wt)), -1.0 / static_cast<double>(terms));
}

/// Per (label, class) weights for the image classification loss.
using ClassWeights = std::vector<std::array<double, kClasses>>;

inline ClassWeights unit_class_weights(std::size_t num_labels) {
  return ClassWeights(num_labels, {1.0, 1.0, 1.0});
}

/// Inverse class frequency per label, normalized to mean 1 over all entries.
inline ClassWeights inverse_frequency_weights(const std::vector<LabelVector>& targets, std::size_t num_labels) {
  ClassWeights w(num_labels, {0.0, 0.0, 0.0});
  for (const auto& t : targets)
    for (std::size_t l = 0; l < num_labels; ++l) w[l][static_cast<std::size_t>(t.states[l])] += 1.0;
  double total = 0.0;
  for (auto& row : w)
    for (double& c : row) {
      c = static_cast<double>(targets.size()) / std::max(c, 1.0);
      total += c;
    }
  const double m = total / static_cast<double>(num_labels * kClasses);
  for (auto& row : w)
    for (double& c : row) c /= m;
  return w;
}

/// Weighted cross-entropy averaged over labels and images.
inline Tensor image_classification_loss(const Tensor& log_probs, const std::vector<LabelVector>& targets,
                                        const ClassWeights& weights) {
  const std::size_t b = targets.size(), L = weights.size();
  if (log_probs.dim(0) != b * L || log_probs.dim(1) != kClasses) {
    throw ShapeError("image_classification_loss: expected log-probabilities [B*L,3]");
  }
  std::vector<double> w(b * L * kClasses, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t l = 0; l < L; ++l) {
      const auto c = static_cast<std::size_t>(targets[i].states.at(l));
      if (!(weights[l][c] > 0.0)) throw std::invalid_argument("class weights must be positive");
      w[(i * L + l) * kClasses + c] = weights[l][c];
    }
  return scale(sum(mul(log_probs, Tensor(log_probs.shape(), std::move(w)))), -1.0 / static_cast<double>(b * L));
}

// ---------------------------------------------------------------------------
// Uncertainty weighting

enum class LossSlot : std::size_t { Plaus = 0, NleClf = 1, NleRecons = 2, ImgClf = 3 };
inline constexpr std::size_t kLossSlots = 4;

inline const char* slot_name(LossSlot s) {
  switch (s) {
    case LossSlot::Plaus: return "plaus";
    case LossSlot::NleClf: return "nle_clf";
    case LossSlot::NleRecons: return "nle_recons";
    case LossSlot::ImgClf: return "img_clf";
  }
  return "?";
}

/// sigma_i = exp(s_i), so sigma stays positive; s_i starts at 0 (sigma = 1).
struct UncertaintyWeights {
  std::array<Tensor, kLossSlots> log_sigma;

  UncertaintyWeights() {
    for (auto& t : log_sigma) t = Tensor::zeros({1}, true);
  }

  double sigma(LossSlot s) const { return std::exp(log_sigma[static_cast<std::size_t>(s)].item()); }

  ParamList params() const {
    ParamList p;
    for (std::size_t i = 0; i < kLossSlots; ++i) p.push_back({"sigma.log" + std::to_string(i + 1), log_sigma[i]});
    return p;
  }
};

using LossComponents = std::map<LossSlot, Tensor>;

/// sum_i L_i / (2 sigma_i^2) + log(1 + sigma_i^2) over the required slots.
inline Tensor combine_losses(const LossComponents& parts, const UncertaintyWeights& w,
                             const std::vector<LossSlot>& required) {
  if (required.empty()) throw std::invalid_argument("combine_losses: no loss components requested");
  Tensor total;
  for (LossSlot slot : required) {
    auto it = parts.find(slot);
    if (it == parts.end()) throw std::invalid_argument(std::string("combine_losses: missing component ") + slot_name(slot));
    const Tensor& s = w.log_sigma[static_cast<std::size_t>(slot)];
    Tensor inv_two_var = scale(wenlex::exp(scale(s, -2.0)), 0.5);
    Tensor term = add(mul(it->second, inv_two_var), log1p(wenlex::exp(scale(s, 2.0))));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Per-step values of every loss term; absent terms stay empty.
struct LossReport {
  std::array<std::optional<double>, kLossSlots> value;
  std::array<std::optional<double>, kLossSlots> sigma;
  double weighted_total = 0.0;
};

}  // namespace wenlex
