#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wenlex/checkpoint.hpp"
#include "wenlex/codec.hpp"
#include "wenlex/config.hpp"
#include "wenlex/dataset.hpp"
#include "wenlex/losses.hpp"
#include "wenlex/metrics.hpp"
#include "wenlex/models.hpp"
#include "wenlex/optim.hpp"

namespace wenlex {

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t a = 0; a < n; a += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(a),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, a + batch)));
  return out;
}

inline std::vector<LabelVector> targets_of(const std::vector<SynthImage>& v, const std::vector<std::size_t>& idx) {
  std::vector<LabelVector> t;
  for (std::size_t i : idx) t.push_back(v.at(i).target);
  return t;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

inline void check_loss(const Tensor& t, const char* what) {
  if (!std::isfinite(t.item())) throw NumericError(std::string("non-finite ") + what + " loss");
}

inline Checkpoint snapshot(const ParamList& ps) {
  Checkpoint ck;
  put_tensors(ck, ps);
  return ck;
}

}  // namespace detail

/// Evaluation-mode predictions and gap features for a whole split.
struct SplitOutputs {
  std::vector<LabelVector> predictions;
  std::vector<std::vector<double>> gap;
  std::vector<std::vector<double>> probs;
};

inline SplitOutputs classify_split(const Classifier& mbe, const DomainSchema& s, const std::vector<SynthImage>& images) {
  SplitOutputs o;
  constexpr std::size_t kChunk = 64;
  for (std::size_t a = 0; a < images.size(); a += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = a; i < std::min(images.size(), a + kChunk); ++i) idx.push_back(i);
    const auto out = mbe.forward(images_of(s, images, idx), NormMode::Eval);
    for (auto& p : out.predictions(s.num_labels())) o.predictions.push_back(std::move(p));
    const auto& g = out.taps.at("gap");
    const std::size_t f = g.dim(1), pc = out.probs.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      o.gap.emplace_back(g.vec().begin() + static_cast<std::ptrdiff_t>(r * f), g.vec().begin() + static_cast<std::ptrdiff_t>((r + 1) * f));
      o.probs.emplace_back(out.probs.vec().begin() + static_cast<std::ptrdiff_t>(r * pc),
                           out.probs.vec().begin() + static_cast<std::ptrdiff_t>((r + 1) * pc));
    }
  }
  return o;
}

// ---------------------------------------------------------------------------
// Classifier pretraining

struct PretrainResult {
  Classifier model;
  double val_loss = 0.0;
  std::optional<double> val_auc;
  int best_epoch = 0;
  std::string log_csv;
};

/// Class-weighted cross entropy; keeps the epoch with the lowest validation
/// loss.
inline PretrainResult pretrain_classifier(const PretrainConfig& cfg, const Dataset& data, ProgressFn progress = {}) {
  const auto& s = data.schema;
  if (data.train.empty() || data.val.empty()) throw std::invalid_argument("pretraining needs nonempty train and val splits");
  Classifier mbe(s, cfg.seed);
  const auto weights = inverse_frequency_weights(detail::targets_of(data.train, detail::all_indices(data.train.size())),
                                                 s.num_labels());
  const auto params = mbe.params();
  auto tensors = tensors_of(params);
  AdamWState opt;
  const long per_epoch = static_cast<long>((data.train.size() + cfg.batch - 1) / cfg.batch);
  const long total = per_epoch * cfg.epochs;
  const long warmup = std::min(cfg.warmup, total);
  const auto val_idx = detail::all_indices(data.val.size());
  const Tensor val_x = images_of(s, data.val, val_idx);
  const auto val_t = detail::targets_of(data.val, val_idx);

  PretrainResult r;
  std::ostringstream log;
  log << "epoch,step,train_loss,val_loss,val_auc\n";
  double best = std::numeric_limits<double>::infinity();
  Checkpoint best_state;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double train_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : detail::epoch_batches(data.train.size(), cfg.batch, cfg.seed, epoch)) {
      zero_grads(params);
      Tape tape;
      Tape::Scope scope(tape);
      const auto out = mbe.forward(images_of(s, data.train, batch), NormMode::Train);
      Tensor loss = image_classification_loss(out.log_probs, detail::targets_of(data.train, batch), weights);
      detail::check_loss(loss, "classification");
      tape.backward(loss);
      ++step;
      adamw_step(tensors, opt, lr_schedule(step, total, warmup, cfg.lr));
      train_sum += loss.item() * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const auto vo = mbe.forward(val_x, NormMode::Eval);
    const double vl = image_classification_loss(vo.log_probs, val_t, weights).item();
    const auto auc = macro_auc(s, vo.predictions(s.num_labels()), val_t).macro;
    log << epoch << ',' << step << ',' << format_metric(train_sum / static_cast<double>(seen)) << ','
        << format_metric(vl) << ',' << format_metric(auc) << '\n';
    if (progress) progress("pretrain epoch " + std::to_string(epoch) + " val_loss " + format_metric(vl) + " val_auc " + format_metric(auc));
    if (vl < best) {
      best = vl;
      best_state = detail::snapshot(mbe.state());
      r.best_epoch = epoch;
      r.val_auc = auc;
    }
  }
  get_tensors(best_state, mbe.state());
  r.model = mbe.frozen_clone();
  r.val_loss = best;
  r.log_csv = log.str();
  return r;
}

// ---------------------------------------------------------------------------
// Database

/// Ground-truth sentences of the train split (one per single-diagnosis
/// image, one compound sentence per multi-diagnosis image), filtered to those
/// naming exactly one diagnosis, then n sampled per diagnosis without
/// replacement.
inline NleDatabase build_database(const DomainSchema& s, const TextCodec& codec, const std::string& grammar_name,
                                  const std::vector<SynthImage>& train, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("database size must be positive");
  const Grammar& g = codec.grammar(codec.grammar_index(grammar_name));
  std::vector<std::vector<Tokens>> eligible(s.num_diagnoses());
  for (const auto& im : train) {
    std::vector<std::size_t> ds;
    for (std::size_t d = 0; d < s.num_diagnoses(); ++d)
      if (present(im.target.states[d])) ds.push_back(d);
    if (ds.empty()) continue;
    const Tokens tokens = ds.size() == 1 ? gt_sentence_for(s, g, im.target, ds[0], im.seed).tokens
                                         : compound_sentence_for(s, g, im.target, im.seed);
    const auto lab = oracle_label(s, g, tokens);
    std::size_t named = 0, which = 0;
    for (std::size_t d = 0; d < s.num_diagnoses(); ++d)
      if (present(lab.states[d])) {
        ++named;
        which = d;
      }
    if (named == 1) eligible[which].push_back(tokens);
  }
  NleDatabase db;
  db.grammar = grammar_name;
  db.per_diagnosis.resize(s.num_diagnoses());
  for (std::size_t d = 0; d < s.num_diagnoses(); ++d) {
    auto& pool = eligible[d];
    if (pool.size() < n) {
      throw std::invalid_argument("not enough single-diagnosis sentences for " + s.diagnoses[d].name + ": need " +
                                  std::to_string(n) + ", have " + std::to_string(pool.size()));
    }
    Rng rng(derive_seed(seed, "database", d));
    rng.shuffle(pool);
    for (std::size_t k = 0; k < n; ++k) db.per_diagnosis[d].push_back({pool[k], codec.embed(pool[k]).vector});
  }
  return db;
}

inline std::string database_to_json(const DomainSchema& s, const NleDatabase& db) {
  nlohmann::ordered_json j;
  j["grammar"] = db.grammar;
  j["n"] = db.size_per_diagnosis();
  j["entries"] = nlohmann::ordered_json::array();
  for (std::size_t d = 0; d < db.per_diagnosis.size(); ++d)
    for (const auto& e : db.per_diagnosis[d])
      j["entries"].push_back({{"diagnosis", s.diagnoses.at(d).name}, {"tokens", e.tokens}, {"embedding", e.embedding}});
  return j.dump(1) + "\n";
}

inline NleDatabase database_from_json(const DomainSchema& s, const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  NleDatabase db;
  db.grammar = j.at("grammar").get<std::string>();
  db.per_diagnosis.resize(s.num_diagnoses());
  for (const auto& e : j.at("entries")) {
    const auto name = e.at("diagnosis").get<std::string>();
    std::size_t d = 0;
    while (d < s.num_diagnoses() && s.diagnoses[d].name != name) ++d;
    if (d == s.num_diagnoses()) throw std::invalid_argument("database names unknown diagnosis '" + name + "'");
    db.per_diagnosis[d].push_back({e.at("tokens").get<Tokens>(), e.at("embedding").get<std::vector<double>>()});
  }
  return db;
}

// ---------------------------------------------------------------------------
// Explanation training

/// Everything a trained run consists of.
struct WenlexModel {
  Classifier classifier;
  Generator generator;
  TextToImage t2i;
  Critic critic;
  UncertaintyWeights weights;

  WenlexModel(const DomainSchema& s, std::size_t dim, std::uint64_t seed, const Classifier& mbe)
      : classifier(mbe),
        generator(32, s.num_labels() * kClasses, dim, derive_seed(seed, "gen")),
        t2i(s, dim, derive_seed(seed, "t2i")),
        critic(dim, derive_seed(seed, "critic")) {}

  ParamList state() const {
    ParamList p = classifier.state();
    for (const auto& list : {generator.params(), t2i.params(), t2i.buffers(), critic.params(), weights.params()})
      p.insert(p.end(), list.begin(), list.end());
    return p;
  }
};

struct LogRow {
  long step = 0;
  double lr = 0.0;
  std::array<std::optional<double>, kLossSlots> loss;
  std::array<double, kLossSlots> sigma{};
  double weighted_total = 0.0;
  double wall_ms = 0.0;
};

inline std::string log_to_csv(const std::vector<LogRow>& rows) {
  std::ostringstream ss;
  ss << "step,lr,plaus,nle_clf,nle_recons,img_clf,sigma1,sigma2,sigma3,sigma4,wall_ms\n";
  for (const auto& r : rows) {
    ss << r.step << ',' << format_metric(r.lr);
    for (const auto& v : r.loss) ss << ',' << format_metric(v);
    for (double v : r.sigma) ss << ',' << format_metric(v);
    ss << ',' << format_metric(r.wall_ms) << '\n';
  }
  return ss.str();
}

struct TrainResult {
  std::vector<LogRow> log;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  std::vector<long> sync_steps;
  long steps = 0;
  AdamWState main_opt, sigma_opt, critic_opt;
};

struct TrainOptions {
  bool record_wall_time = false;
  ProgressFn progress;
  /// Called after every optimizer step and frozen-copy sync.
  std::function<void(long step, const Classifier& live, const Classifier& frozen)> on_step;
};

namespace detail {

/// Loss terms for one batch. Records onto the active tape when there is one.
struct BatchLosses {
  LossComponents parts;
  std::vector<LossSlot> active;
  std::size_t rows = 0;
};

struct StepContext {
  const DomainSchema& s;
  const TextCodec& codec;
  const TrainConfig& cfg;
  const NleDatabase& db;
  const ClassWeights& weights;
  const std::vector<Tensor>& diag_embeddings;  // [1, dim] each
};

inline Tensor diag_rows(const StepContext& c, const std::vector<std::size_t>& ds) {
  std::vector<double> v;
  for (std::size_t d : ds) v.insert(v.end(), c.diag_embeddings[d].vec().begin(), c.diag_embeddings[d].vec().end());
  return Tensor({ds.size(), c.codec.dim()}, std::move(v));
}

inline BatchLosses batch_losses(const StepContext& c, WenlexModel& m, const Classifier& frozen, const Tensor& x,
                                const std::vector<LabelVector>& targets, bool training) {
  const bool in_model = c.cfg.mode == TrainMode::InModel;
  const auto out = m.classifier.forward(x, in_model && training ? NormMode::Train : NormMode::Eval);
  const auto preds = out.predictions(c.s.num_labels());
  std::vector<std::size_t> row_img, row_diag;
  std::vector<LabelVector> row_pred;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t d : explained_diagnoses(c.s, preds[i])) {
      if (d >= c.db.per_diagnosis.size() || c.db.per_diagnosis[d].empty()) {
        throw std::invalid_argument("database has no sentences for predicted diagnosis " + c.s.diagnoses[d].name);
      }
      row_img.push_back(i);
      row_diag.push_back(d);
      row_pred.push_back(preds[i]);
    }
  BatchLosses b;
  b.rows = row_img.size();
  if (in_model) {
    b.parts[LossSlot::ImgClf] = image_classification_loss(out.log_probs, targets, c.weights);
  }
  if (!row_img.empty()) {
    Tensor feats = gather_rows(out.taps.at("gap"), row_img);
    Tensor probs = gather_rows(out.probs, row_img);
    if (!in_model) {
      feats = feats.detach();
      probs = probs.detach();
    }
    const Tensor cond = diag_rows(c, row_diag);
    const Tensor e = m.generator.forward(feats, probs, cond);
    if (c.cfg.plaus == Plausibility::Mmd) {
      std::map<std::size_t, std::vector<std::size_t>> by;
      for (std::size_t r = 0; r < row_diag.size(); ++r) by[row_diag[r]].push_back(r);
      std::map<std::size_t, Tensor> groups;
      for (const auto& [d, rows] : by) groups[d] = gather_rows(e, rows);
      b.parts[LossSlot::Plaus] = plausibility_mmd(groups, c.db);
    } else {
      b.parts[LossSlot::Plaus] = generator_adv_loss(m.critic, e, cond);
    }
    if (c.cfg.recons || c.cfg.nle_clf) {
      const Tensor gen_img = m.t2i.forward(e, training ? NormMode::Train : NormMode::Eval);
      if (c.cfg.recons) {
        b.parts[LossSlot::NleRecons] = reconstruction_loss(frozen, x, gen_img, row_img, c.cfg.tap);
      }
      if (c.cfg.nle_clf) {
        const auto g_out = frozen.forward(gen_img, NormMode::Eval);
        b.parts[LossSlot::NleClf] = nle_classification_loss(c.s, g_out.log_probs, row_pred, row_diag, c.cfg.nle_clf_soft);
      }
    }
  }
  for (const auto& [slot, _] : b.parts) b.active.push_back(slot);
  return b;
}

/// Critic updates against database embeddings paired with the rows'
/// diagnoses.
inline void critic_updates(const StepContext& c, WenlexModel& m, const Tensor& x, AdamWState& opt, double lr, long step) {
  std::vector<std::size_t> row_img, row_diag;
  const auto out = m.classifier.forward(x, NormMode::Eval);
  const auto preds = out.predictions(c.s.num_labels());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t d : explained_diagnoses(c.s, preds[i])) {
      row_img.push_back(i);
      row_diag.push_back(d);
    }
  if (row_img.empty()) return;
  const Tensor cond = diag_rows(c, row_diag);
  const Tensor fake =
      m.generator.forward(gather_rows(out.taps.at("gap"), row_img).detach(), gather_rows(out.probs, row_img).detach(), cond)
          .detach();
  const auto params = m.critic.params();
  auto tensors = tensors_of(params);
  for (int k = 0; k < c.cfg.critic_ratio; ++k) {
    const std::uint64_t sub = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(c.cfg.critic_ratio) + static_cast<std::uint64_t>(k);
    Rng pick(derive_seed(c.cfg.seed, "critic_real", sub));
    std::vector<double> rv;
    for (std::size_t d : row_diag) {
      const auto& pool = c.db.per_diagnosis[d];
      const auto& emb = pool[pick.index(pool.size())].embedding;
      rv.insert(rv.end(), emb.begin(), emb.end());
    }
    const Tensor real({row_diag.size(), c.codec.dim()}, std::move(rv));
    zero_grads(params);
    Tape tape;
    Tape::Scope scope(tape);
    Rng alpha(derive_seed(c.cfg.seed, "critic_alpha", sub));
    const auto parts = critic_loss(m.critic, real, fake, cond, GpConfig{c.cfg.gp_lambda}, alpha);
    check_loss(parts.total, "critic");
    tape.backward(parts.total);
    adamw_step(tensors, opt, lr);
  }
}

}  // namespace detail

/// Trains the explainer (and, in in-model mode, the classifier) in place.
/// `model.classifier` must hold the pretrained classifier for post-hoc mode
/// and a freshly initialized one for in-model mode.
inline TrainResult train_wenlex(const TrainConfig& cfg, const Dataset& data, const TextCodec& codec, const NleDatabase& db,
                                WenlexModel& model, const TrainOptions& opts = {}) {
  const auto& s = data.schema;
  if (data.train.empty() || data.val.empty()) throw std::invalid_argument("training needs nonempty train and val splits");
  if (db.per_diagnosis.size() != s.num_diagnoses()) throw std::invalid_argument("database does not cover the schema's diagnoses");
  check_tap(cfg.tap);
  const bool in_model = cfg.mode == TrainMode::InModel;

  set_trainable(model.classifier.params(), in_model);
  FrozenCopy frozen(model.classifier, cfg.frozen_period, !in_model);

  ParamList trainable = model.generator.params();
  if (cfg.recons || cfg.nle_clf) {
    const auto t = model.t2i.params();
    trainable.insert(trainable.end(), t.begin(), t.end());
  }
  if (in_model) {
    const auto t = model.classifier.params();
    trainable.insert(trainable.end(), t.begin(), t.end());
  }
  auto main_tensors = tensors_of(trainable);
  auto sigma_tensors = tensors_of(model.weights.params());
  TrainResult r;
  AdamWState& main_opt = r.main_opt;
  AdamWState& sigma_opt = r.sigma_opt;
  AdamWState& critic_opt = r.critic_opt;
  AdamWConfig no_decay;
  no_decay.weight_decay = 0.0;

  std::vector<Tensor> diag_emb;
  for (std::size_t d = 0; d < s.num_diagnoses(); ++d) diag_emb.push_back(Tensor({1, codec.dim()}, codec.diagnosis_embedding(d).vector));
  const auto weights = inverse_frequency_weights(detail::targets_of(data.train, detail::all_indices(data.train.size())),
                                                 s.num_labels());
  const detail::StepContext ctx{s, codec, cfg, db, weights, diag_emb};

  const long per_epoch = static_cast<long>((data.train.size() + cfg.batch - 1) / cfg.batch);
  const long total = per_epoch * cfg.epochs;
  const long warmup = std::min(cfg.warmup, total);

  double best = std::numeric_limits<double>::infinity();
  Checkpoint best_state;
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& batch : detail::epoch_batches(data.train.size(), cfg.batch, cfg.seed, epoch)) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor x = images_of(s, data.train, batch);
      const double lr = lr_schedule(step + 1, total, warmup, cfg.lr);
      if (cfg.plaus == Plausibility::Adversarial) detail::critic_updates(ctx, model, x, critic_opt, lr, step);

      zero_grads(trainable);
      zero_grads(model.weights.params());
      Tape tape;
      Tape::Scope scope(tape);
      auto b = detail::batch_losses(ctx, model, frozen.model(), x, detail::targets_of(data.train, batch), true);
      ++step;
      LogRow row;
      row.step = step;
      row.lr = lr;
      for (std::size_t k = 0; k < kLossSlots; ++k) row.sigma[k] = model.weights.sigma(static_cast<LossSlot>(k));
      if (!b.active.empty()) {
        Tensor loss = combine_losses(b.parts, model.weights, b.active);
        detail::check_loss(loss, "combined");
        tape.backward(loss);
        adamw_step(main_tensors, main_opt, lr);
        adamw_step(sigma_tensors, sigma_opt, lr * cfg.sigma_lr / cfg.lr, no_decay);
        for (const auto& [slot, v] : b.parts) row.loss[static_cast<std::size_t>(slot)] = v.item();
        row.weighted_total = loss.item();
      }
      if (frozen.sync(model.classifier, step)) r.sync_steps.push_back(step);
      if (opts.on_step) opts.on_step(step, model.classifier, frozen.model());
      if (opts.record_wall_time) {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      r.log.push_back(row);
    }

    // Validation: same weighted combination with sigma at its current value.
    double val = 0.0;
    std::size_t counted = 0;
    for (std::size_t a = 0; a < data.val.size(); a += cfg.batch) {
      std::vector<std::size_t> idx;
      for (std::size_t i = a; i < std::min(data.val.size(), a + cfg.batch); ++i) idx.push_back(i);
      auto b = detail::batch_losses(ctx, model, frozen.model(), images_of(s, data.val, idx), detail::targets_of(data.val, idx), false);
      if (b.active.empty()) continue;
      val += combine_losses(b.parts, model.weights, b.active).item() * static_cast<double>(idx.size());
      counted += idx.size();
    }
    val = counted ? val / static_cast<double>(counted) : std::numeric_limits<double>::infinity();
    if (opts.progress) opts.progress("train epoch " + std::to_string(epoch) + " val_loss " + format_metric(val));
    if (val < best || best_state.empty()) {
      best = val;
      best_state = detail::snapshot(model.state());
      r.best_epoch = epoch;
    }
  }
  get_tensors(best_state, model.state());
  set_trainable(model.classifier.params(), false);
  r.best_val_loss = best;
  r.steps = step;
  return r;
}

// ---------------------------------------------------------------------------
// Generation

/// Generator output for (image, diagnosis) pairs of a classified split.
inline std::vector<std::vector<double>> generate_embeddings(const WenlexModel& m, const TextCodec& codec,
                                                            const SplitOutputs& so,
                                                            const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) return {};
  std::vector<double> f, p, c;
  for (const auto& [i, d] : pairs) {
    f.insert(f.end(), so.gap.at(i).begin(), so.gap.at(i).end());
    p.insert(p.end(), so.probs.at(i).begin(), so.probs.at(i).end());
    const auto e = codec.diagnosis_embedding(d).vector;
    c.insert(c.end(), e.begin(), e.end());
  }
  const std::size_t n = pairs.size();
  const Tensor out = m.generator.forward(Tensor({n, so.gap[0].size()}, std::move(f)), Tensor({n, so.probs[0].size()}, std::move(p)),
                                         Tensor({n, codec.dim()}, std::move(c)));
  std::vector<std::vector<double>> rows;
  const std::size_t d = out.dim(1);
  for (std::size_t r = 0; r < n; ++r)
    rows.emplace_back(out.vec().begin() + static_cast<std::ptrdiff_t>(r * d), out.vec().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
  return rows;
}

/// One explanation per image and explained diagnosis, in image order.
inline std::vector<Explanation> generate_explanations(const WenlexModel& m, const TextCodec& codec, const DomainSchema& s,
                                                      const std::vector<SynthImage>& images, const std::string& split,
                                                      const SplitOutputs& so) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t d : explained_diagnoses(s, so.predictions[i])) pairs.push_back({i, d});
  const auto emb = generate_embeddings(m, codec, so, pairs);
  std::vector<Explanation> xs;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, d] = pairs[k];
    xs.push_back({image_id(split, i), i, d, emb[k], codec.decode(emb[k]), so.predictions[i], images[i].target});
  }
  return xs;
}

inline std::vector<Explanation> generate_explanations(const WenlexModel& m, const TextCodec& codec, const DomainSchema& s,
                                                      const std::vector<SynthImage>& images, const std::string& split) {
  return generate_explanations(m, codec, s, images, split, classify_split(m.classifier, s, images));
}

}  // namespace wenlex
