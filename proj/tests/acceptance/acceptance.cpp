// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exits 0 once all criteria have run; pass --strict to exit 1 on any FAIL.
// --only 1,5 restricts the run to the listed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "wenlex/wenlex.hpp"

using namespace wenlex;
using wenlex::testing::max_grad_rel_error;
using wenlex::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double opt_or_nan(std::optional<double> v) { return v.value_or(std::nan("")); }

// ---------------------------------------------------------------------------
// Shared pipeline state, built lazily so criteria can reuse runs.

struct RunArtifacts {
  std::string pretrain_ckpt, run_ckpt, train_log, metrics;
};

struct PipelineRun {
  Config cfg;
  Dataset data;
  TextCodec codec;
  NleDatabase db;
  PretrainResult pre;
  std::optional<WenlexModel> model;
  TrainResult train;
  Evaluation eval;
  double pretrain_seconds = 0.0, total_seconds = 0.0;

  RunArtifacts artifacts() const {
    return {serialize_checkpoint(detail::snapshot(pre.model.state())), serialize_checkpoint(run_checkpoint(*model, train)),
            log_to_csv(train.log), metrics_csv("run", eval.report)};
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// synth -> pretrain -> database -> train -> evaluate on the test split.
std::unique_ptr<PipelineRun> run_pipeline(const Config& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  auto data = synthesize(default_schema(), cfg.data);
  auto codec = default_codec(data.schema, cfg.codec.dim, cfg.codec.seed);
  auto db = build_database(data.schema, codec, cfg.db.grammar, data.train, cfg.db.n, cfg.db.seed);
  auto pre = pretrain_classifier(cfg.pretrain, data);
  auto r = std::unique_ptr<PipelineRun>(
      new PipelineRun{cfg, std::move(data), std::move(codec), std::move(db), std::move(pre), {}, {}, {}, 0.0, 0.0});
  r->pretrain_seconds = seconds_since(t0);
  const Classifier mbe =
      cfg.train.mode == TrainMode::PostHoc ? r->pre.model : Classifier(r->data.schema, cfg.pretrain.seed);
  r->model.emplace(r->data.schema, r->codec.dim(), cfg.train.seed, mbe);
  r->train = train_wenlex(cfg.train, r->data, r->codec, r->db, *r->model);
  r->eval = evaluate(*r->model, r->codec, r->db, r->data, "test", cfg.eval);
  r->total_seconds = seconds_since(t0);
  return r;
}

const PipelineRun& default_run() {
  static const auto r = run_pipeline(Config{});
  return *r;
}

/// Post-hoc run that reuses the default run's data, codec and classifier.
struct Retrain {
  NleDatabase db;
  std::optional<WenlexModel> model;
  TrainResult train;
  std::vector<Explanation> explanations;
};

Retrain retrain(const PipelineRun& base, const TrainConfig& tc, const NleDatabase& db) {
  Retrain r{db, {}, {}, {}};
  r.model.emplace(base.data.schema, base.codec.dim(), tc.seed, base.pre.model);
  r.train = train_wenlex(tc, base.data, base.codec, r.db, *r.model);
  r.explanations = generate_explanations(*r.model, base.codec, base.data.schema, base.data.test, "test");
  return r;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
  Rng rng(101);
  using Inputs = std::vector<Tensor>;
  using F = std::function<Tensor(const Inputs&)>;
  struct Case {
    const char* name;
    F f;
    Inputs in;
  };
  auto rt = [&](Shape s, double sc = 1.0) { return random_tensor(std::move(s), rng, sc); };
  const auto w10 = random_tensor({4, 5}, rng, 1.0, false);
  auto weighted = [w10](const Tensor& y) { return sum(mul(y, w10)); };
  std::vector<Case> cases = {
      {"add", [&](const Inputs& x) { return weighted(add(x[0], x[1])); }, {rt({4, 5}), rt({4, 5})}},
      {"sub", [&](const Inputs& x) { return weighted(sub(x[0], x[1])); }, {rt({4, 5}), rt({4, 5})}},
      {"mul", [&](const Inputs& x) { return weighted(mul(x[0], x[1])); }, {rt({4, 5}), rt({4, 5})}},
      {"add_scalar", [&](const Inputs& x) { return weighted(add_scalar(x[0], 0.7)); }, {rt({4, 5})}},
      {"scale", [&](const Inputs& x) { return weighted(scale(x[0], -1.3)); }, {rt({4, 5})}},
      {"relu", [&](const Inputs& x) { return weighted(relu(x[0])); }, {rt({4, 5})}},
      {"leaky_relu", [&](const Inputs& x) { return weighted(leaky_relu(x[0], 0.2)); }, {rt({4, 5})}},
      {"tanh", [&](const Inputs& x) { return weighted(wenlex::tanh(x[0])); }, {rt({4, 5})}},
      {"sigmoid", [&](const Inputs& x) { return weighted(sigmoid(x[0])); }, {rt({4, 5})}},
      {"exp", [&](const Inputs& x) { return weighted(wenlex::exp(x[0])); }, {rt({4, 5}, 0.5)}},
      {"log1p", [&](const Inputs& x) { return weighted(log1p(square(x[0]))); }, {rt({4, 5})}},
      {"square", [&](const Inputs& x) { return weighted(square(x[0])); }, {rt({4, 5})}},
      {"sum", [&](const Inputs& x) { return square(sum(x[0])); }, {rt({4, 5})}},
      {"mean", [&](const Inputs& x) { return square(mean(x[0])); }, {rt({4, 5})}},
      {"sum_axis0", [&](const Inputs& x) { return sum(square(sum(x[0], 0))); }, {rt({4, 5})}},
      {"mean_axis1", [&](const Inputs& x) { return sum(square(mean(x[0], 1))); }, {rt({4, 5})}},
      {"l2_norm", [&](const Inputs& x) { return l2_norm(x[0]); }, {rt({4, 5})}},
      {"l2_norm_axis1", [&](const Inputs& x) { return sum(square(l2_norm(x[0], 1))); }, {rt({4, 5})}},
      {"matmul", [&](const Inputs& x) { return weighted(matmul(x[0], x[1])); }, {rt({4, 3}), rt({3, 5})}},
      {"transpose", [&](const Inputs& x) { return weighted(transpose(x[0])); }, {rt({5, 4})}},
      {"add_bias", [&](const Inputs& x) { return weighted(add_bias(x[0], x[1])); }, {rt({4, 5}), rt({5})}},
      {"reshape", [&](const Inputs& x) { return weighted(reshape(x[0], {4, 5})); }, {rt({2, 10})}},
      {"concat_cols", [&](const Inputs& x) { return weighted(concat_cols({x[0], x[1]})); }, {rt({4, 2}), rt({4, 3})}},
      {"slice_cols", [&](const Inputs& x) { return weighted(slice_cols(x[0], 1, 6)); }, {rt({4, 8})}},
      {"gather_rows", [&](const Inputs& x) { return weighted(gather_rows(x[0], {2, 0, 2, 1})); }, {rt({3, 5})}},
      {"segment_mean", [&](const Inputs& x) { return weighted(segment_mean(x[0], {0, 1, 1, 3, 2, 3, 0}, 4)); },
       {rt({7, 5})}},
      {"log_softmax", [&](const Inputs& x) { return weighted(log_softmax(x[0])); }, {rt({4, 5})}},
      {"softmax", [&](const Inputs& x) { return weighted(softmax(x[0])); }, {rt({4, 5})}},
      {"pairwise_sq_dist", [&](const Inputs& x) { return weighted(pairwise_sq_dist(x[0], x[1])); },
       {rt({4, 3}), rt({5, 3})}},
  };
  const auto wc = random_tensor({2, 3, 4, 4}, rng, 1.0, false);
  cases.push_back({"conv2d", [wc](const Inputs& x) { return sum(mul(conv2d(x[0], x[1], x[2], 2, 1), wc)); },
                   {rt({2, 2, 8, 8}), rt({3, 2, 3, 3}), rt({3})}});
  const auto wt = random_tensor({2, 2, 8, 8}, rng, 1.0, false);
  cases.push_back({"conv_transpose2d",
                   [wt](const Inputs& x) { return sum(mul(conv_transpose2d(x[0], x[1], x[2], 2, 1), wt)); },
                   {rt({2, 3, 4, 4}), rt({3, 2, 4, 4}), rt({2})}});
  const auto wb = random_tensor({4, 3, 2, 2}, rng, 1.0, false);
  for (NormMode mode : {NormMode::Train, NormMode::Eval}) {
    cases.push_back({mode == NormMode::Train ? "batch_norm_train" : "batch_norm_eval",
                     [wb, mode](const Inputs& x) {
                       BatchNormStats st{{0.1, -0.2, 0.3}, {1.5, 0.7, 1.1}};
                       return sum(mul(batch_norm(x[0], x[1], x[2], st, mode), wb));
                     },
                     {rt({4, 3, 2, 2}), rt({3}), rt({3})}});
  }

  double worst = 0.0;
  std::string worst_name, failed;
  for (auto& c : cases) {
    const double e = max_grad_rel_error(c.f, c.in);
    if (e > worst) worst = e, worst_name = c.name;
    if (!(e < 1e-4)) failed += std::string(failed.empty() ? "" : ",") + c.name;
  }
  return {failed.empty(), fmt("%zu ops, max rel err %.2e (%s)%s", cases.size(), worst, worst_name.c_str(),
                              failed.empty() ? "" : (" failing: " + failed).c_str())};
}

// ---------------------------------------------------------------------------
// 2. MMD oracle

Outcome mmd_oracle() {
  const double hand = mmd_squared(Tensor({1, 1}, {0.0}), Tensor({1, 1}, {2.0}), MmdConfig::fixed(1.0)).item();
  const double hand_err = std::abs(hand - (2.0 - 2.0 * std::exp(-2.0)));

  Rng rng(202);
  const auto x0 = random_tensor({16, 4}, rng, 1.0, false);
  const double self = std::abs(mmd_squared(x0, x0).item());

  std::vector<double> a(128), b(128);
  for (std::size_t i = 0; i < 64; ++i) {
    a[2 * i] = rng.normal(), a[2 * i + 1] = rng.normal();
    b[2 * i] = 4.0 + rng.normal(), b[2 * i + 1] = 4.0 + rng.normal();
  }
  Tensor x({64, 2}, a, true);
  const Tensor y({64, 2}, b);
  const double start = mmd_squared(x, y).item();
  AdamWState st;
  AdamWConfig oc;
  oc.weight_decay = 0.0;
  std::vector<Tensor> ps{x};
  for (int step = 0; step < 500; ++step) {
    x.zero_grad();
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(mmd_squared(x, y));
    adamw_step(ps, st, 0.05, oc);
  }
  const double reduction = 1.0 - mmd_squared(x, y).item() / start;
  return {hand_err <= 1e-9 && self <= 1e-12 && reduction >= 0.9,
          fmt("hand err %.1e, MMD2(X,X) %.1e, 2-Gaussian reduction %.1f%%", hand_err, self, 100.0 * reduction)};
}

// ---------------------------------------------------------------------------
// 3. WGAN-GP oracle

struct LinearCritic {
  Tensor w;
  Tensor operator()(const Tensor& z, const Tensor&) const { return matmul(z, w); }
};

Outcome gp_oracle() {
  Rng rng(303);
  const auto real = random_tensor({6, 4}, rng, 1.0, false), fake = random_tensor({6, 4}, rng, 1.0, false);
  const auto cond = random_tensor({6, 4}, rng, 1.0, false);
  double pen_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    auto w = random_tensor({4, 1}, rng, 0.5 + 0.1 * t, true);
    double nrm = 0.0;
    for (double v : w.vec()) nrm += v * v;
    nrm = std::sqrt(nrm);
    for (double lambda : {1.0, 10.0}) {
      Tape tape;
      Tape::Scope scope(tape);
      Rng alpha(t);
      const auto parts = critic_loss(LinearCritic{w}, real, fake, cond, GpConfig{lambda}, alpha);
      pen_err = std::max(pen_err, std::abs(parts.penalty - lambda * (nrm - 1.0) * (nrm - 1.0)));
    }
  }

  Critic critic(6, 9);
  const auto r2 = random_tensor({4, 6}, rng, 1.0, false), f2 = random_tensor({4, 6}, rng, 1.0, false);
  const auto c2 = random_tensor({4, 6}, rng, 1.0, false);
  auto loss = [&] {
    Rng alpha(5);
    return critic_loss(critic, r2, f2, c2, GpConfig{10.0}, alpha).total;
  };
  const auto params = critic.params();
  zero_grads(params);
  {
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(loss());
  }
  double worst = 0.0;
  const double h = 1e-5;
  for (auto p : params) {
    const std::vector<double> g(p.value.grad().begin(), p.value.grad().end());
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value[i];
      auto at = [&](double v) {
        p.value.mutable_data()[i] = v;
        Tape t;
        Tape::Scope s(t);
        return loss().item();
      };
      const double num = (at(orig + h) - at(orig - h)) / (2 * h);
      p.value.mutable_data()[i] = orig;
      worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-3}));
    }
  }
  return {pen_err <= 1e-9 && worst < 1e-3,
          fmt("linear-critic penalty err %.1e, double-backward FD rel err %.2e", pen_err, worst)};
}

// ---------------------------------------------------------------------------
// 4. Uncertainty weighting oracle

Outcome weighting_oracle() {
  Rng rng(404);
  const std::vector<LossSlot> slots = {LossSlot::Plaus, LossSlot::NleClf, LossSlot::NleRecons, LossSlot::ImgClf};
  double total_err = 0.0, grad_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 1 + static_cast<std::size_t>(t % 4);
    LossComponents parts;
    std::vector<LossSlot> used(slots.begin(), slots.begin() + static_cast<long>(k));
    double half = 0.0;
    for (auto s : used) {
      const double v = 5.0 * rng.uniform();
      parts[s] = Tensor::scalar(v);
      half += 0.5 * v;
    }
    UncertaintyWeights unit;
    total_err = std::max(total_err,
                         std::abs(combine_losses(parts, unit, used).item() - (half + k * std::numbers::ln2)));

    UncertaintyWeights w;
    for (auto s : used) w.log_sigma[static_cast<std::size_t>(s)].mutable_data()[0] = rng.normal();
    {
      Tape tape;
      Tape::Scope scope(tape);
      tape.backward(combine_losses(parts, w, used));
    }
    for (auto s : used) {
      const double ls = w.log_sigma[static_cast<std::size_t>(s)][0], L = parts[s].item();
      const double analytic = -L * std::exp(-2.0 * ls) + 2.0 * std::exp(2.0 * ls) / (1.0 + std::exp(2.0 * ls));
      grad_err = std::max(grad_err, std::abs(w.log_sigma[static_cast<std::size_t>(s)].grad()[0] - analytic));
    }
  }
  return {total_err <= 1e-12 && grad_err <= 1e-9,
          fmt("unit-sigma total err %.1e, log-sigma gradient err %.1e", total_err, grad_err)};
}

// ---------------------------------------------------------------------------
// 5. Codec exactness

Outcome codec_exactness() {
  const auto s = default_schema();
  const auto codec = default_codec(s);
  std::string detail;
  bool pass = true;
  for (const auto& g : codec.grammars()) {
    std::size_t ok = 0, n = 0;
    for (const auto& sent : enumerate_grammar(g)) {
      ++n;
      ok += codec.decode(codec.embed(sent.tokens).vector).tokens == sent.tokens;
    }
    pass = pass && ok == n && n > 0;
    detail += fmt("%s%s %zu/%zu", detail.empty() ? "" : ", ", g.name.c_str(), ok, n);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 6. Classifier pretraining

Outcome pretraining() {
  const auto& r = default_run();
  const auto& test = r.data.test;
  const auto so = classify_split(r.pre.model, r.data.schema, test);
  std::vector<LabelVector> targets;
  for (const auto& im : test) targets.push_back(im.target);
  const auto auc = macro_auc(r.data.schema, so.predictions, targets).macro;

  Rng rng(606);
  std::size_t exact = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<double> sc(n);
    std::vector<int> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = std::round(10.0 * rng.uniform()) / 10.0;
      lab[i] = rng.uniform() < 0.4;
    }
    lab[0] = 1, lab[1] = 0;
    double wins = 0.0, pos = 0.0, neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pos += lab[i] == 1;
      neg += lab[i] == 0;
      for (std::size_t j = 0; j < n; ++j)
        if (lab[i] == 1 && lab[j] == 0) wins += sc[i] > sc[j] ? 1.0 : sc[i] == sc[j] ? 0.5 : 0.0;
    }
    const auto a = binary_auc(sc, lab);
    exact += a && *a == wins / (pos * neg);
  }
  return {auc && *auc >= 0.9 && r.pre.best_epoch <= 5 && exact == 100,
          fmt("test macro AUC %.4f after %d epochs (best %d), brute-force matches %zu/100", opt_or_nan(auc),
              r.cfg.pretrain.epochs, r.pre.best_epoch, exact)};
}

// ---------------------------------------------------------------------------
// 7. End-to-end post-hoc MMD run

Outcome end_to_end() {
  const auto& r = default_run();
  const auto& m = r.eval.report;
  const auto constant = constant_explanations(r.codec, r.db, r.eval.explanations);
  const auto const_sb = self_bleu(group_by_diagnosis(constant));
  const double clev = opt_or_nan(m.clev_macro_f1), flip = opt_or_nan(m.flip_pct),
               flip_rand = opt_or_nan(m.flip_pct_random), sb = opt_or_nan(m.self_bleu),
               csb = 100.0 * const_sb.value_or(std::nan("")), yi = opt_or_nan(m.y_given_img),
               yin = opt_or_nan(m.y_given_img_nle);
  const bool a = clev >= 0.80, b = flip - flip_rand >= 20.0, c = sb < csb, d = yin >= yi - 2.0;
  return {a && b && c && d,
          fmt("(a) CLEV %.3f %s; (b) flip %.1f vs random %.1f %s; (c) Self-BLEU %.2f vs constant %.2f %s; "
              "(d) y|(img,NLE) %.1f vs y|img %.1f %s; %d epochs",
              clev, a ? "ok" : "low", flip, flip_rand, b ? "ok" : "low", sb, csb, c ? "ok" : "high", yin, yi,
              d ? "ok" : "low", r.cfg.train.epochs)};
}

// ---------------------------------------------------------------------------
// 8. Reconstruction toggle lowers Self-BLEU

Outcome recons_trend() {
  double mmd_sum = 0.0, rec_sum = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::unique_ptr<PipelineRun> own;
    const PipelineRun* base = &default_run();
    if (seed != 1) {
      Config cfg;
      set_all_seeds(cfg, seed);
      own = run_pipeline(cfg);
      base = own.get();
    }
    auto tc = base->cfg.train;
    tc.recons = true;
    const auto rec = retrain(*base, tc, base->db);
    const double m = opt_or_nan(base->eval.report.self_bleu);
    const double r = 100.0 * self_bleu(group_by_diagnosis(rec.explanations)).value_or(std::nan(""));
    mmd_sum += m;
    rec_sum += r;
    per_seed += fmt("%sseed %llu %.2f->%.2f", per_seed.empty() ? "" : ", ", static_cast<unsigned long long>(seed), m, r);
  }
  return {rec_sum / 3.0 < mmd_sum / 3.0,
          fmt("mean Self-BLEU MMD-only %.2f vs +recons %.2f (%s)", mmd_sum / 3.0, rec_sum / 3.0, per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 9. Mode contract

double l2_distance(const Classifier& a, const Classifier& b) {
  const auto pa = a.params(), pb = b.params();
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].value.numel(); ++k) {
      const double d = pa[i].value[k] - pb[i].value[k];
      s += d * d;
    }
  return std::sqrt(s);
}

Outcome mode_contract() {
  const auto& r = default_run();
  const bool post_hoc_same = params_hash(r.model->classifier.state()) == params_hash(r.pre.model.state()) &&
                             r.train.sync_steps.empty();

  Config cfg;
  cfg.train.mode = TrainMode::InModel;
  WenlexModel m(r.data.schema, r.codec.dim(), cfg.train.seed, Classifier(r.data.schema, cfg.pretrain.seed));
  const auto before = params_hash(m.classifier.state());
  const long period = cfg.train.frozen_period;
  bool equal_at_sync = true, apart_elsewhere = true;
  TrainOptions opts;
  opts.on_step = [&](long step, const Classifier& live, const Classifier& frozen) {
    const double d = l2_distance(live, frozen);
    if (step % period == 0) equal_at_sync = equal_at_sync && d == 0.0;
    else if (step > period) apart_elsewhere = apart_elsewhere && d > 0.0;
  };
  const auto tr = train_wenlex(cfg.train, r.data, r.codec, r.db, m, opts);
  std::vector<long> expected;
  for (long s = period; s <= tr.steps; s += period) expected.push_back(s);
  const bool changed = params_hash(m.classifier.state()) != before;
  std::string syncs;
  for (long s : tr.sync_steps) syncs += (syncs.empty() ? "" : ",") + std::to_string(s);
  return {post_hoc_same && changed && tr.sync_steps == expected && !expected.empty() && equal_at_sync &&
              apart_elsewhere,
          fmt("post-hoc hash %s; in-model hash %s, %ld steps, syncs at {%s} with period %ld, frozen copy %s",
              post_hoc_same ? "unchanged" : "CHANGED", changed ? "changed" : "UNCHANGED", tr.steps, syncs.c_str(),
              period, equal_at_sync && apart_elsewhere ? "matches only at syncs" : "drifts off schedule")};
}

// ---------------------------------------------------------------------------
// 10. Database swap

Outcome database_swap() {
  const auto& r = default_run();
  const auto layman_db = build_database(r.data.schema, r.codec, "layman", r.data.train, r.cfg.db.n, r.cfg.db.seed);
  const auto lay = retrain(r, r.cfg.train, layman_db);
  const auto vocab = r.codec.grammar(r.codec.grammar_index("layman")).vocabulary();
  const std::set<std::string> lay_vocab(vocab.begin(), vocab.end());
  std::size_t hit = 0, total = 0;
  std::vector<Tokens> lay_sents, med_sents;
  for (const auto& x : lay.explanations) {
    for (const auto& t : x.sentence.tokens) hit += lay_vocab.count(t), ++total;
    lay_sents.push_back(x.sentence.tokens);
  }
  for (const auto& x : r.eval.explanations) med_sents.push_back(x.sentence.tokens);
  const double share = total ? 100.0 * static_cast<double>(hit) / static_cast<double>(total) : 0.0;
  const double g_lay = readability_grade(lay_sents), g_med = readability_grade(med_sents);
  return {share >= 95.0 && g_lay < g_med,
          fmt("layman tokens %.1f%% of %zu, readability layman %.2f vs medical %.2f", share, total, g_lay, g_med)};
}

// ---------------------------------------------------------------------------
// 11. Determinism

Outcome determinism() {
  const auto a = default_run().artifacts();
  const auto again = run_pipeline(Config{});
  const auto b = again->artifacts();
  const bool p = a.pretrain_ckpt == b.pretrain_ckpt, c = a.run_ckpt == b.run_ckpt, l = a.train_log == b.train_log,
             m = a.metrics == b.metrics;
  auto mark = [](bool ok) { return ok ? "identical" : "DIFFERS"; };
  return {p && c && l && m, fmt("classifier ckpt %s, run ckpt %s, train log %s, metrics %s", mark(p), mark(c),
                                mark(l), mark(m))};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0 means no stated budget
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string id; std::getline(ss, id, ',');) only.insert(std::stoi(id));
    } else {
      std::cerr << "usage: wenlex_acceptance [--strict] [--only 1,2,...]\n";
      return 2;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient suite", 120, gradient_suite},
      {2, "MMD oracle", 60, mmd_oracle},
      {3, "WGAN-GP oracle", 60, gp_oracle},
      {4, "uncertainty weighting oracle", 1, weighting_oracle},
      {5, "codec exactness", 10, codec_exactness},
      {6, "classifier pretraining", 300, pretraining},
      {7, "end-to-end post-hoc MMD", 900, end_to_end},
      {8, "reconstruction lowers Self-BLEU", 0, recons_trend},
      {9, "mode contract", 0, mode_contract},
      {10, "database swap", 900, database_swap},
      {11, "determinism", 0, determinism},
  };

  int failures = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    double elapsed = seconds_since(t0);
    if (c.id == 6) elapsed = default_run().pretrain_seconds;
    if (c.id == 7) elapsed = default_run().total_seconds;
    const bool in_budget = c.budget_s <= 0 || elapsed < c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::string timing = fmt("%.1fs", elapsed);
    if (c.budget_s > 0) timing += fmt(" of %.0fs budget", c.budget_s);
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " (" << timing
              << ")" << std::endl;
  }
  std::cout << ran - failures << "/" << ran << " criteria passed"
            << std::endl;
  return strict && failures > 0 ? 1 : 0;
}
