#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wenlex/checkpoint.hpp"
#include "wenlex/config.hpp"
#include "wenlex/dataset.hpp"
#include "wenlex/metrics.hpp"
#include "wenlex/trainer.hpp"

namespace wenlex {

/// Per-diagnosis tokens of a fixed, input-independent sentence; the
/// constant-explanation baseline.
inline std::vector<Explanation> constant_explanations(const TextCodec& codec, const NleDatabase& db,
                                                      std::vector<Explanation> xs) {
  for (auto& x : xs) {
    const auto& e = db.per_diagnosis.at(x.diagnosis).front();
    x.embedding = e.embedding;
    x.sentence = codec.decode(e.embedding);
  }
  return xs;
}

struct Evaluation {
  MetricsReport report;
  std::vector<Explanation> explanations;
};

/// Full metric suite on one split for a given explanation set.
inline Evaluation evaluate(const WenlexModel& m, const TextCodec& codec, const NleDatabase& db, const Dataset& data,
                           const std::string& split, const EvalConfig& cfg, std::vector<Explanation> explanations) {
  const auto& s = data.schema;
  const auto& images = data.split(split);
  const auto so = classify_split(m.classifier, s, images);
  Evaluation ev;
  ev.explanations = std::move(explanations);
  const auto& xs = ev.explanations;
  auto& r = ev.report;

  r.nle_count_total = xs.size();
  for (const auto& x : xs) r.nle_count_correct += correctly_classified(s, x);
  r.clev_macro_f1 = clev_score(s, codec, xs);

  const double fill = mean_pixel(data.train);
  const auto del = deletion_metric(s, codec, m.classifier, xs, images, fill);
  r.flip_pct = del.flip_pct;
  r.delta_p = del.delta_p;
  r.ungroundable = del.ungroundable;
  const auto base = deletion_metric(s, codec, m.classifier, xs, images, fill, cfg.seed);
  r.flip_pct_random = base.flip_pct;
  r.delta_p_random = base.delta_p;

  const auto sim = simulatability(s, codec, xs, images);
  r.y_given_img = sim.y_given_img;
  r.y_given_nle = sim.y_given_nle;
  r.y_given_img_nle = sim.y_given_img_nle;

  if (auto sb = self_bleu(group_by_diagnosis(xs))) r.self_bleu = 100.0 * *sb;

  std::vector<std::vector<std::size_t>> explained;
  for (const auto& p : so.predictions) explained.push_back(explained_diagnoses(s, p));
  r.retrieval_distance = retrieval_attack(so.gap, explained,
                                          [&](std::size_t i, std::size_t d) {
                                            return generate_embeddings(m, codec, so, {{i, d}}).front();
                                          },
                                          cfg.k)
                             .mean_distance;

  r.cxbs = cxbs(s, codec, codec.grammar(codec.grammar_index(db.grammar)), xs, images);

  std::vector<LabelVector> targets;
  for (const auto& im : images) targets.push_back(im.target);
  r.auc = macro_auc(s, so.predictions, targets).macro;

  if (!xs.empty()) {
    std::vector<Tokens> gen;
    for (const auto& x : xs) gen.push_back(x.sentence.tokens);
    r.readability_gen = readability_grade(gen);
  }
  std::vector<Tokens> dbs;
  for (const auto& es : db.per_diagnosis)
    for (const auto& e : es) dbs.push_back(e.tokens);
  if (!dbs.empty()) r.readability_db = readability_grade(dbs);
  return ev;
}

inline Evaluation evaluate(const WenlexModel& m, const TextCodec& codec, const NleDatabase& db, const Dataset& data,
                           const std::string& split, const EvalConfig& cfg) {
  return evaluate(m, codec, db, data, split, cfg, generate_explanations(m, codec, data.schema, data.split(split), split));
}

inline std::string explanations_to_jsonl(const DomainSchema& s, const TextCodec& codec, const std::vector<Explanation>& xs) {
  std::string out;
  for (const auto& x : xs) {
    nlohmann::ordered_json j;
    j["image"] = x.image_id;
    j["diagnosis"] = s.diagnoses.at(x.diagnosis).name;
    j["sentence"] = x.sentence.text();
    j["grammar"] = codec.grammar(x.sentence.grammar).name;
    j["prediction"] = nlohmann::ordered_json::array();
    for (auto st : x.prediction.states) j["prediction"].push_back(state_name(st));
    j["embedding"] = x.embedding;
    out += j.dump() + "\n";
  }
  return out;
}

/// Reads a generation dump back. Sentences are re-decoded from the stored
/// embeddings; predictions and targets come from the split itself.
inline std::vector<Explanation> explanations_from_jsonl(const DomainSchema& s, const TextCodec& codec,
                                                        const std::vector<SynthImage>& images, const std::string& split,
                                                        const SplitOutputs& so, const std::string& text) {
  std::vector<Explanation> xs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Explanation x;
    x.image_id = j.at("image").get<std::string>();
    const auto dash = x.image_id.rfind('-');
    if (dash == std::string::npos || x.image_id.substr(0, dash) != split) {
      throw std::invalid_argument("explanation for '" + x.image_id + "' does not belong to split " + split);
    }
    x.image = std::stoul(x.image_id.substr(dash + 1));
    if (x.image >= images.size()) throw std::invalid_argument("explanation refers to missing image " + x.image_id);
    const auto name = j.at("diagnosis").get<std::string>();
    while (x.diagnosis < s.num_diagnoses() && s.diagnoses[x.diagnosis].name != name) ++x.diagnosis;
    if (x.diagnosis == s.num_diagnoses()) throw std::invalid_argument("unknown diagnosis '" + name + "'");
    x.embedding = j.at("embedding").get<std::vector<double>>();
    x.sentence = codec.decode(x.embedding);
    x.prediction = so.predictions.at(x.image);
    x.target = images[x.image].target;
    xs.push_back(std::move(x));
  }
  return xs;
}

inline std::string metrics_csv(const std::string& run, const MetricsReport& r) {
  std::string out = "run";
  for (const auto& c : MetricsReport::columns()) out += "," + c;
  out += "\n" + run;
  for (const auto& v : r.values()) out += "," + format_metric(v);
  return out + "\n";
}

// ---------------------------------------------------------------------------
// Run checkpoints

/// Selected weights plus the optimizer state and step count at the end of
/// training.
inline Checkpoint run_checkpoint(const WenlexModel& m, const TrainResult& r) {
  Checkpoint ck;
  put_tensors(ck, m.state());
  put_optimizer(ck, "opt.main", r.main_opt);
  put_optimizer(ck, "opt.sigma", r.sigma_opt);
  put_optimizer(ck, "opt.critic", r.critic_opt);
  ck["train.step"] = {{1}, {static_cast<double>(r.steps)}};
  ck["train.best_epoch"] = {{1}, {static_cast<double>(r.best_epoch)}};
  return ck;
}

inline WenlexModel load_run_model(const Checkpoint& ck, const DomainSchema& s, const Config& cfg) {
  WenlexModel m(s, cfg.codec.dim, cfg.train.seed, Classifier(s, cfg.pretrain.seed));
  get_tensors(ck, m.state());
  set_trainable(m.classifier.params(), false);
  return m;
}

}  // namespace wenlex
