#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "wenlex/codec.hpp"
#include "wenlex/models.hpp"

namespace wenlex {

/// One generated explanation: a (image, diagnosis) pair with its latent
/// embedding, decoded sentence and the classifier's prediction for the image.
struct Explanation {
  std::string image_id;
  std::size_t image = 0;
  std::size_t diagnosis = 0;
  std::vector<double> embedding;
  GrammarSentence sentence;
  LabelVector prediction;
  LabelVector target;
};

/// True when the explained diagnosis and every evidence label are predicted
/// with their ground-truth class.
inline bool correctly_classified(const DomainSchema& s, const Explanation& x) {
  if (x.prediction.states.at(x.diagnosis) != x.target.states.at(x.diagnosis)) return false;
  for (std::size_t e = 0; e < s.num_evidence(); ++e) {
    const std::size_t l = s.evidence_label(e);
    if (x.prediction.states[l] != x.target.states[l]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// AUC

/// Exact ROC AUC via the rank-sum statistic; tied scores share their average
/// rank. nullopt when only one class is present.
inline std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("binary_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        pos_rank_sum += avg_rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

struct AucResult {
  std::optional<double> macro;
  std::vector<std::string> excluded;  // "<label>:<binarization>" with a single class
};

/// Per diagnosis label: P(Positive) vs target==Positive and
/// P(Uncertain)+P(Positive) vs target!=Negative; macro average over all
/// non-degenerate pairs.
inline AucResult macro_auc(const DomainSchema& s, const std::vector<LabelVector>& predictions,
                           const std::vector<LabelVector>& targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("macro_auc: one prediction per target required");
  AucResult r;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t d = 0; d < s.num_diagnoses(); ++d) {
    for (int kind = 0; kind < 2; ++kind) {
      std::vector<double> sc;
      std::vector<int> lab;
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& p = predictions[i];
        if (p.probs.empty()) throw std::invalid_argument("macro_auc: predictions need class probabilities");
        sc.push_back(kind == 0 ? p.probs[d][2] : p.probs[d][1] + p.probs[d][2]);
        const LabelState t = targets[i].states.at(d);
        lab.push_back(kind == 0 ? t == LabelState::Positive : present(t));
      }
      if (auto a = binary_auc(sc, lab)) {
        sum += *a;
        ++count;
      } else {
        r.excluded.push_back(s.diagnoses[d].name + (kind == 0 ? ":positive" : ":present"));
      }
    }
  }
  if (count) r.macro = sum / static_cast<double>(count);
  return r;
}

// ---------------------------------------------------------------------------
// Clinical evidence agreement

struct EvidenceConfusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  /// 1 when neither side ever marks the label present.
  double f1() const {
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
};

inline double macro_f1(const std::vector<EvidenceConfusion>& cs) {
  if (cs.empty()) throw std::invalid_argument("macro_f1: no labels");
  double s = 0.0;
  for (const auto& c : cs) s += c.f1();
  return s / static_cast<double>(cs.size());
}

/// Evidence read from each decoded sentence against the classifier's
/// predicted evidence, non-Negative vs Negative.
inline std::vector<EvidenceConfusion> clev_confusions(const DomainSchema& s, const TextCodec& codec,
                                                      const std::vector<Explanation>& xs) {
  std::vector<EvidenceConfusion> cs(s.num_evidence());
  for (const auto& x : xs) {
    const auto read = oracle_label(s, codec.grammar(x.sentence.grammar), x.sentence.tokens);
    for (std::size_t e = 0; e < s.num_evidence(); ++e) {
      const std::size_t l = s.evidence_label(e);
      const bool said = present(read.states[l]), pred = present(x.prediction.states.at(l));
      auto& c = cs[e];
      if (said && pred) ++c.tp;
      else if (said) ++c.fp;
      else if (pred) ++c.fn;
      else ++c.tn;
    }
  }
  return cs;
}

inline std::optional<double> clev_score(const DomainSchema& s, const TextCodec& codec, const std::vector<Explanation>& xs) {
  if (xs.empty()) return std::nullopt;
  return macro_f1(clev_confusions(s, codec, xs));
}

// ---------------------------------------------------------------------------
// Deletion

struct DeletionResult {
  std::optional<double> flip_pct;
  std::optional<double> delta_p;
  std::size_t ungroundable = 0;
  std::size_t evaluated = 0;
};

/// Occludes the quadrant each sentence points to with `fill` and re-runs the
/// classifier. With `random_seed` set, the quadrant is drawn uniformly
/// instead (the random-location baseline).
inline DeletionResult deletion_metric(const DomainSchema& s, const TextCodec& codec, const Classifier& mbe,
                                      const std::vector<Explanation>& xs, const std::vector<SynthImage>& images,
                                      double fill, std::optional<std::uint64_t> random_seed = std::nullopt) {
  DeletionResult r;
  r.evaluated = xs.size();
  if (xs.empty()) return r;
  std::optional<Rng> rng;
  if (random_seed) rng.emplace(derive_seed(*random_seed, "deletion_baseline"));
  std::vector<std::size_t> grounded;
  std::vector<double> masked_px;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::optional<QuadrantMask> m;
    if (rng) {
      m = quadrant_mask(s, static_cast<Quadrant>(rng->index(kQuadrants)));
    } else {
      m = ground_sentence(s, codec.grammar(xs[i].sentence.grammar), xs[i].sentence.tokens);
    }
    if (!m) {
      ++r.ungroundable;
      continue;
    }
    auto px = images.at(xs[i].image).pixels;
    for (std::size_t k = 0; k < px.size(); ++k)
      if (m->mask[k]) px[k] = fill;
    masked_px.insert(masked_px.end(), px.begin(), px.end());
    grounded.push_back(i);
  }
  double flips = 0.0, dp = 0.0;
  constexpr std::size_t kChunk = 64;
  const std::size_t np = s.num_pixels();
  for (std::size_t a = 0; a < grounded.size(); a += kChunk) {
    const std::size_t b = std::min(grounded.size(), a + kChunk);
    Tensor batch({b - a, s.channels, s.height, s.width},
                 std::vector<double>(masked_px.begin() + static_cast<std::ptrdiff_t>(a * np),
                                     masked_px.begin() + static_cast<std::ptrdiff_t>(b * np)));
    const auto after = mbe.forward(batch, NormMode::Eval).predictions(s.num_labels());
    for (std::size_t k = a; k < b; ++k) {
      const auto& x = xs[grounded[k]];
      const auto& p2 = after[k - a];
      if (p2.states[x.diagnosis] != x.prediction.states.at(x.diagnosis)) flips += 1.0;
      dp += std::abs(x.prediction.presence(x.diagnosis) - p2.presence(x.diagnosis));
    }
  }
  const double n = static_cast<double>(xs.size());
  r.flip_pct = 100.0 * flips / n;
  r.delta_p = dp / n;
  return r;
}

// ---------------------------------------------------------------------------
// Simulatability

struct SimulatabilityResult {
  std::optional<double> y_given_img, y_given_nle, y_given_img_nle;  // percent
};

inline SimulatabilityResult simulatability(const DomainSchema& s, const TextCodec& codec,
                                           const std::vector<Explanation>& xs, const std::vector<SynthImage>& images) {
  SimulatabilityResult r;
  if (xs.empty()) return r;
  double img = 0, nle = 0, both = 0;
  for (const auto& x : xs) {
    const auto& g = codec.grammar(x.sentence.grammar);
    const auto* px = &images.at(x.image).pixels;
    const LabelState want = x.prediction.states.at(x.diagnosis);
    img += proxy_read(s, g, nullptr, px, ReadMode::ImageOnly).states[x.diagnosis] == want;
    nle += proxy_read(s, g, &x.sentence.tokens, nullptr, ReadMode::TextOnly).states[x.diagnosis] == want;
    both += proxy_read(s, g, &x.sentence.tokens, px, ReadMode::ImageAndText).states[x.diagnosis] == want;
  }
  const double n = static_cast<double>(xs.size());
  r.y_given_img = 100.0 * img / n;
  r.y_given_nle = 100.0 * nle / n;
  r.y_given_img_nle = 100.0 * both / n;
  return r;
}

// ---------------------------------------------------------------------------
// BLEU / Self-BLEU

using Tokens = std::vector<std::string>;

namespace detail {

inline std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return c;
}

}  // namespace detail

/// Sentence BLEU-4 against multiple references. A zero clipped precision is
/// replaced by 1 / (2 * candidate n-gram count).
inline double bleu4(const Tokens& cand, const std::vector<Tokens>& refs) {
  if (cand.empty() || refs.empty()) throw std::invalid_argument("bleu4: empty candidate or reference set");
  double log_p = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cc = detail::ngram_counts(cand, n);
    std::size_t total = 0, clipped = 0;
    std::map<Tokens, std::size_t> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, k] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], k);
    for (const auto& [g, k] : cc) {
      total += k;
      auto it = max_ref.find(g);
      clipped += std::min(k, it == max_ref.end() ? std::size_t{0} : it->second);
    }
    const double denom = static_cast<double>(std::max<std::size_t>(total, 1));
    const double p = clipped ? static_cast<double>(clipped) / denom : 1.0 / (2.0 * denom);
    log_p += 0.25 * std::log(p);
  }
  const double c = static_cast<double>(cand.size());
  double r = 0.0, best = std::numeric_limits<double>::infinity();
  for (const auto& ref : refs) {
    const double len = static_cast<double>(ref.size()), d = std::abs(len - c);
    if (d < best || (d == best && len < r)) {
      best = d;
      r = len;
    }
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_p);
}

/// Macro average over groups of each sentence's BLEU-4 against the rest of
/// its group. Groups of one are skipped; nullopt when every group is.
inline std::optional<double> self_bleu(const std::map<std::size_t, std::vector<Tokens>>& groups) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& [_, g] : groups) {
    if (g.size() < 2) continue;
    double gs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::vector<Tokens> refs;
      for (std::size_t j = 0; j < g.size(); ++j)
        if (j != i) refs.push_back(g[j]);
      gs += bleu4(g[i], refs);
    }
    sum += gs / static_cast<double>(g.size());
    ++used;
  }
  if (!used) return std::nullopt;
  return sum / static_cast<double>(used);
}

inline std::map<std::size_t, std::vector<Tokens>> group_by_diagnosis(const std::vector<Explanation>& xs) {
  std::map<std::size_t, std::vector<Tokens>> g;
  for (const auto& x : xs) g[x.diagnosis].push_back(x.sentence.tokens);
  return g;
}

// ---------------------------------------------------------------------------
// Retrieval attack

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return aa == bb ? 1.0 : 0.0;
  return ab / std::sqrt(aa * bb);
}

struct RetrievalResult {
  std::optional<double> mean_distance;
  std::size_t queries = 0;
  std::size_t skipped = 0;
};

using NleFn = std::function<std::vector<double>(std::size_t image, std::size_t diagnosis)>;

/// For each query image: take its k nearest images by cosine similarity of
/// `features`, explain the query's first explained diagnosis on each of them
/// and average the pairwise cosine distance of those embeddings.
inline RetrievalResult retrieval_attack(const std::vector<std::vector<double>>& features,
                                        const std::vector<std::vector<std::size_t>>& explained, const NleFn& nle,
                                        std::size_t k) {
  if (features.size() != explained.size()) throw std::invalid_argument("retrieval_attack: size mismatch");
  RetrievalResult r;
  double total = 0.0;
  std::size_t used = 0;
  const std::size_t n = features.size();
  for (std::size_t q = 0; q < n; ++q) {
    if (explained[q].empty()) continue;
    ++r.queries;
    const std::size_t d = explained[q].front();
    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t j = 0; j < n; ++j)
      if (j != q) sims.push_back({-cosine_similarity(features[q], features[j]), j});
    const std::size_t take = std::min(k, sims.size());
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(take), sims.end());
    std::vector<std::vector<double>> es;
    for (std::size_t t = 0; t < take; ++t) {
      const std::size_t j = sims[t].second;
      if (std::find(explained[j].begin(), explained[j].end(), d) != explained[j].end()) es.push_back(nle(j, d));
    }
    if (es.size() < 2) {
      ++r.skipped;
      continue;
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < es.size(); ++a)
      for (std::size_t b = a + 1; b < es.size(); ++b) {
        sum += 1.0 - cosine_similarity(es[a], es[b]);
        ++pairs;
      }
    total += sum / static_cast<double>(pairs);
    ++used;
  }
  if (used) r.mean_distance = total / static_cast<double>(used);
  return r;
}

// ---------------------------------------------------------------------------
// Embedding-based sentence similarity

/// Greedy token matching F1 over the codec's token vectors.
inline double token_match_f1(const TextCodec& codec, const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) throw std::invalid_argument("token_match_f1: empty sentence");
  std::vector<std::vector<double>> sim(cand.size(), std::vector<double>(ref.size()));
  for (std::size_t i = 0; i < cand.size(); ++i)
    for (std::size_t j = 0; j < ref.size(); ++j)
      sim[i][j] = cosine_similarity(codec.token_vector(cand[i]), codec.token_vector(ref[j]));
  double p = 0.0, r = 0.0;
  for (std::size_t i = 0; i < cand.size(); ++i) p += *std::max_element(sim[i].begin(), sim[i].end());
  for (std::size_t j = 0; j < ref.size(); ++j) {
    double m = -1.0;
    for (std::size_t i = 0; i < cand.size(); ++i) m = std::max(m, sim[i][j]);
    r += m;
  }
  p /= static_cast<double>(cand.size());
  r /= static_cast<double>(ref.size());
  if (p + r <= 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

/// Mean token-match F1 against the ground-truth sentence, over correctly
/// classified explanations only.
inline std::optional<double> cxbs(const DomainSchema& s, const TextCodec& codec, const Grammar& reference_grammar,
                                  const std::vector<Explanation>& xs, const std::vector<SynthImage>& images) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (!correctly_classified(s, x)) continue;
    const auto& im = images.at(x.image);
    const auto ref = gt_sentence_for(s, reference_grammar, im.target, x.diagnosis, im.seed);
    sum += token_match_f1(codec, x.sentence.tokens, ref.tokens);
    ++n;
  }
  if (!n) return std::nullopt;
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Readability

/// Vowel groups (a, e, i, o, u, y), at least one per word.
inline std::size_t count_syllables(const std::string& word) {
  std::size_t n = 0;
  bool prev = false;
  for (char ch : word) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const bool v = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
    if (v && !prev) ++n;
    prev = v;
  }
  return std::max<std::size_t>(n, 1);
}

/// Flesch-Kincaid grade of a single sentence.
inline double fk_grade(const Tokens& sentence) {
  if (sentence.empty()) throw std::invalid_argument("fk_grade: empty sentence");
  std::size_t syl = 0;
  for (const auto& w : sentence) syl += count_syllables(w);
  const double words = static_cast<double>(sentence.size());
  return 0.39 * words + 11.8 * static_cast<double>(syl) / words - 15.59;
}

inline double readability_grade(const std::vector<Tokens>& sentences) {
  if (sentences.empty()) throw std::invalid_argument("readability_grade: no sentences");
  double s = 0.0;
  for (const auto& t : sentences) s += fk_grade(t);
  return s / static_cast<double>(sentences.size());
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  std::optional<double> clev_macro_f1, flip_pct, delta_p, y_given_img, y_given_nle, y_given_img_nle, self_bleu,
      retrieval_distance, cxbs, auc, readability_gen, readability_db;
  std::size_t nle_count_total = 0, nle_count_correct = 0;
  std::optional<double> flip_pct_random, delta_p_random;
  std::size_t ungroundable = 0;

  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> c = {
        "clev_macro_f1", "flip_pct",        "delta_p",         "y_given_img",    "y_given_nle",
        "y_given_img_nle", "self_bleu",     "retrieval_distance", "cxbs",        "auc",
        "readability_gen", "readability_db", "nle_count_total", "nle_count_correct", "flip_pct_random",
        "delta_p_random", "ungroundable"};
    return c;
  }

  /// Values in column order; absent metrics are nullopt.
  std::vector<std::optional<double>> values() const {
    return {clev_macro_f1,  flip_pct,       delta_p,   y_given_img, y_given_nle,     y_given_img_nle,
            self_bleu,      retrieval_distance, cxbs,  auc,         readability_gen, readability_db,
            static_cast<double>(nle_count_total), static_cast<double>(nle_count_correct), flip_pct_random,
            delta_p_random, static_cast<double>(ungroundable)};
  }
};

inline std::string format_metric(std::optional<double> v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return buf;
}

}  // namespace wenlex
