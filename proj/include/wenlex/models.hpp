#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "wenlex/domain.hpp"
#include "wenlex/nn.hpp"

namespace wenlex {

inline const std::vector<std::string>& tap_names() {
  static const std::vector<std::string> names = {"block1", "block2", "block3", "gap", "heads"};
  return names;
}

inline void check_tap(const std::string& tap) {
  for (const auto& n : tap_names())
    if (n == tap) return;
  throw std::invalid_argument("unknown feature tap '" + tap + "' (expected block1, block2, block3, gap or heads)");
}

struct ClassifierOutput {
  Tensor logits;     // [B, L*C]
  Tensor log_probs;  // [B*L, C]
  Tensor probs;      // [B, L*C]
  std::map<std::string, Tensor> taps;  // each flattened to [B, F]

  /// Per-image label vectors read from the probabilities.
  std::vector<LabelVector> predictions(std::size_t num_labels) const {
    const std::size_t b = probs.dim(0);
    std::vector<LabelVector> out;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::array<double, kClasses>> p(num_labels);
      for (std::size_t l = 0; l < num_labels; ++l)
        for (std::size_t c = 0; c < kClasses; ++c) p[l][c] = probs[(i * num_labels + l) * kClasses + c];
      out.push_back(LabelVector::from_probs(std::move(p)));
    }
    return out;
  }
};

/// The model being explained: three strided conv blocks, global average
/// pooling and a linear layer emitting C logits per label.
class Classifier {
 public:
  Classifier() = default;
  Classifier(const DomainSchema& s, std::uint64_t seed) : num_labels_(s.num_labels()), h_(s.height), w_(s.width) {
    Rng rng(derive_seed(seed, "classifier"));
    conv1_ = Conv2d(s.channels, 8, 3, 2, 1, rng);
    conv2_ = Conv2d(8, 16, 3, 2, 1, rng);
    conv3_ = Conv2d(16, 32, 3, 2, 1, rng);
    bn1_ = BatchNorm(8);
    bn2_ = BatchNorm(16);
    bn3_ = BatchNorm(32);
    head_ = Linear(32, num_labels_ * kClasses, rng);
  }

  std::size_t num_labels() const { return num_labels_; }

  ClassifierOutput forward(const Tensor& images, NormMode mode) const {
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != h_ || images.dim(3) != w_) {
      throw ShapeError("classifier: expected [B,1," + std::to_string(h_) + "," + std::to_string(w_) + "], got " +
                       shape_str(images.shape()));
    }
    const std::size_t b = images.dim(0);
    ClassifierOutput o;
    Tensor h1 = relu(bn1_(conv1_(images), mode));
    Tensor h2 = relu(bn2_(conv2_(h1), mode));
    Tensor h3 = relu(bn3_(conv3_(h2), mode));
    const std::size_t c3 = h3.dim(1), plane = h3.dim(2) * h3.dim(3);
    Tensor gap = mean(reshape(h3, {b, c3, plane}), 2);
    o.logits = head_(gap);
    o.log_probs = log_softmax(reshape(o.logits, {b * num_labels_, kClasses}));
    o.probs = reshape(exp(o.log_probs), {b, num_labels_ * kClasses});
    o.taps["block1"] = reshape(h1, {b, h1.numel() / b});
    o.taps["block2"] = reshape(h2, {b, h2.numel() / b});
    o.taps["block3"] = reshape(h3, {b, h3.numel() / b});
    o.taps["gap"] = gap;
    o.taps["heads"] = o.logits;
    return o;
  }

  ParamList params() const {
    ParamList p;
    conv1_.collect("mbe.conv1", p);
    bn1_.collect("mbe.bn1", p);
    conv2_.collect("mbe.conv2", p);
    bn2_.collect("mbe.bn2", p);
    conv3_.collect("mbe.conv3", p);
    bn3_.collect("mbe.bn3", p);
    head_.collect("mbe.head", p);
    return p;
  }

  ParamList buffers() const {
    ParamList p;
    bn1_.collect_buffers("mbe.bn1", p);
    bn2_.collect_buffers("mbe.bn2", p);
    bn3_.collect_buffers("mbe.bn3", p);
    return p;
  }

  /// Parameters followed by batch-norm buffers.
  ParamList state() const {
    auto p = params();
    auto b = buffers();
    p.insert(p.end(), b.begin(), b.end());
    return p;
  }

  /// Independent copy with gradients switched off.
  Classifier frozen_clone() const {
    Classifier c = *this;
    c.rebind(clone_params(state(), false));
    return c;
  }

 private:
  void rebind(const ParamList& fresh) {
    std::map<std::string, Tensor> by;
    for (const auto& p : fresh) by[p.name] = p.value;
    auto conv = [&](Conv2d& c, const std::string& n) {
      c.w = by.at(n + ".w");
      c.b = by.at(n + ".b");
    };
    auto bn = [&](BatchNorm& m, const std::string& n) {
      m.gamma = by.at(n + ".gamma");
      m.beta = by.at(n + ".beta");
      m.running_mean = by.at(n + ".running_mean");
      m.running_var = by.at(n + ".running_var");
    };
    conv(conv1_, "mbe.conv1");
    conv(conv2_, "mbe.conv2");
    conv(conv3_, "mbe.conv3");
    bn(bn1_, "mbe.bn1");
    bn(bn2_, "mbe.bn2");
    bn(bn3_, "mbe.bn3");
    head_.w = by.at("mbe.head.w");
    head_.b = by.at("mbe.head.b");
  }

  std::size_t num_labels_ = 0, h_ = 0, w_ = 0;
  Conv2d conv1_, conv2_, conv3_;
  BatchNorm bn1_, bn2_, bn3_;
  Linear head_;
};

/// Diagnoses whose predicted class is Uncertain or Positive, in schema order.
inline std::vector<std::size_t> explained_diagnoses(const DomainSchema& s, const LabelVector& prediction) {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < s.num_diagnoses(); ++d)
    if (present(prediction.states.at(d))) out.push_back(d);
  return out;
}

/// Conditioned NLE generator: [gap | prediction probabilities | diagnosis
/// embedding] -> embedding.
class Generator {
 public:
  Generator() = default;
  Generator(std::size_t feat, std::size_t pred, std::size_t dim, std::uint64_t seed) : dim_(dim) {
    Rng rng(derive_seed(seed, "generator"));
    l1_ = Linear(feat + pred + dim, 128, rng);
    l2_ = Linear(128, 128, rng);
    l3_ = Linear(128, dim, rng);
  }

  std::size_t dim() const { return dim_; }
  std::size_t input_dim() const { return l1_.w.dim(0); }

  Tensor forward(const Tensor& features, const Tensor& probs, const Tensor& diag_emb) const {
    Tensor x = concat_cols({features, probs, diag_emb});
    if (x.dim(1) != input_dim()) throw ShapeError("generator: conditioning width " + std::to_string(x.dim(1)));
    return l3_(leaky_relu(l2_(leaky_relu(l1_(x), 0.2)), 0.2));
  }

  ParamList params() const {
    ParamList p;
    l1_.collect("gen.l1", p);
    l2_.collect("gen.l2", p);
    l3_.collect("gen.l3", p);
    return p;
  }

 private:
  std::size_t dim_ = 0;
  Linear l1_, l2_, l3_;
};

/// Critic over [embedding | diagnosis embedding]: 2d -> d -> d/2 -> 1.
class Critic {
 public:
  Critic() = default;
  Critic(std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "critic"));
    l1_ = Linear(2 * dim, dim, rng);
    l2_ = Linear(dim, dim / 2, rng);
    l3_ = Linear(dim / 2, 1, rng);
  }

  /// Returns [B, 1].
  Tensor operator()(const Tensor& e, const Tensor& diag_emb) const {
    return l3_(leaky_relu(l2_(leaky_relu(l1_(concat_cols({e, diag_emb})), 0.2)), 0.2));
  }

  ParamList params() const {
    ParamList p;
    l1_.collect("critic.l1", p);
    l2_.collect("critic.l2", p);
    l3_.collect("critic.l3", p);
    return p;
  }

  Critic frozen_clone() const {
    Critic c = *this;
    const auto ps = clone_params(params(), false);
    c.l1_.w = ps[0].value;
    c.l1_.b = ps[1].value;
    c.l2_.w = ps[2].value;
    c.l2_.b = ps[3].value;
    c.l3_.w = ps[4].value;
    c.l3_.b = ps[5].value;
    return c;
  }

 private:
  Linear l1_, l2_, l3_;
};

/// Upsamples an embedding to an image: linear to 32x4x4, then three stride-2
/// transposed convolutions (32->16->8->1), batch norm and ReLU in between,
/// tanh at the end.
class TextToImage {
 public:
  TextToImage() = default;
  TextToImage(const DomainSchema& s, std::size_t dim, std::uint64_t seed) {
    if (s.height != 32 || s.width != 32 || s.channels != 1) throw DomainError("text-to-image expects 1x32x32 images");
    Rng rng(derive_seed(seed, "text_to_image"));
    fc_ = Linear(dim, 32 * 4 * 4, rng);
    up1_ = ConvTranspose2d(32, 16, 4, 2, 1, rng);
    up2_ = ConvTranspose2d(16, 8, 4, 2, 1, rng);
    up3_ = ConvTranspose2d(8, 1, 4, 2, 1, rng);
    bn1_ = BatchNorm(16);
    bn2_ = BatchNorm(8);
  }

  /// Batch statistics need two samples; a single embedding uses running stats.
  Tensor forward(const Tensor& e, NormMode mode) const {
    const std::size_t n = e.dim(0);
    if (n < 2) mode = NormMode::Eval;
    Tensor h = reshape(relu(fc_(e)), {n, 32, 4, 4});
    h = relu(bn1_(up1_(h), mode));
    h = relu(bn2_(up2_(h), mode));
    return wenlex::tanh(up3_(h));
  }

  ParamList params() const {
    ParamList p;
    fc_.collect("t2i.fc", p);
    up1_.collect("t2i.up1", p);
    bn1_.collect("t2i.bn1", p);
    up2_.collect("t2i.up2", p);
    bn2_.collect("t2i.bn2", p);
    up3_.collect("t2i.up3", p);
    return p;
  }

  ParamList buffers() const {
    ParamList p;
    bn1_.collect_buffers("t2i.bn1", p);
    bn2_.collect_buffers("t2i.bn2", p);
    return p;
  }

 private:
  Linear fc_;
  ConvTranspose2d up1_, up2_, up3_;
  BatchNorm bn1_, bn2_;
};

/// Snapshot of the classifier used by the faithfulness losses. In-model
/// training refreshes it every `period` steps; post-hoc training never does.
class FrozenCopy {
 public:
  FrozenCopy() = default;
  FrozenCopy(const Classifier& live, long period, bool post_hoc)
      : model_(live.frozen_clone()), period_(period), post_hoc_(post_hoc) {
    if (period_ <= 0) throw std::invalid_argument("frozen-copy period must be positive");
  }

  const Classifier& model() const { return model_; }
  long last_sync_step() const { return last_sync_; }

  /// Returns true when the copy was refreshed.
  bool sync(const Classifier& live, long step) {
    if (post_hoc_ || step % period_ != 0) return false;
    copy_values(live.state(), model_.state());
    last_sync_ = step;
    return true;
  }

 private:
  Classifier model_;
  long period_ = 1000;
  bool post_hoc_ = false;
  long last_sync_ = 0;
};

}  // namespace wenlex
