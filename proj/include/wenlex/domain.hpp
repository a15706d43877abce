#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "wenlex/rng.hpp"
#include "wenlex/tensor.hpp"

namespace wenlex {

inline constexpr std::size_t kClasses = 3;

enum class LabelState : std::uint8_t { Negative = 0, Uncertain = 1, Positive = 2 };

inline bool present(LabelState s) { return s != LabelState::Negative; }

inline const char* state_name(LabelState s) {
  switch (s) {
    case LabelState::Negative: return "negative";
    case LabelState::Uncertain: return "uncertain";
    case LabelState::Positive: return "positive";
  }
  return "?";
}

enum class Primitive { Disk, Square, Cross, Ring, Dot };

/// Image quadrants, numbered Q1..Q4 in reading order.
enum class Quadrant : std::uint8_t { UpperLeft = 0, UpperRight = 1, LowerLeft = 2, LowerRight = 3 };
inline constexpr std::size_t kQuadrants = 4;

struct LabelRule {
  std::string name;
  Primitive primitive;
  Quadrant quadrant;
};

class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Label layout and rendering rules. Labels are indexed diagnoses first,
/// then evidence.
struct DomainSchema {
  std::vector<LabelRule> diagnoses;
  std::vector<LabelRule> evidence;
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  double noise_sigma = 0.05;
  double uncertain_intensity = 0.25;
  double positive_intensity = 0.75;

  std::size_t num_diagnoses() const { return diagnoses.size(); }
  std::size_t num_evidence() const { return evidence.size(); }
  std::size_t num_labels() const { return diagnoses.size() + evidence.size(); }
  std::size_t num_pixels() const { return channels * height * width; }
  std::size_t evidence_label(std::size_t e) const { return diagnoses.size() + e; }
  bool is_diagnosis(std::size_t label) const { return label < diagnoses.size(); }

  const LabelRule& rule(std::size_t label) const {
    return label < diagnoses.size() ? diagnoses.at(label) : evidence.at(label - diagnoses.size());
  }

  double intensity(LabelState s) const {
    switch (s) {
      case LabelState::Negative: return 0.0;
      case LabelState::Uncertain: return uncertain_intensity;
      case LabelState::Positive: return positive_intensity;
    }
    return 0.0;
  }

  void validate() const {
    if (num_labels() < 2) throw DomainError("schema needs at least two labels");
    if (diagnoses.empty()) throw DomainError("schema needs at least one diagnosis label");
    if (evidence.empty()) throw DomainError("schema needs at least one evidence label");
    if (channels != 1 || height < 8 || width < 8 || height % 2 || width % 2) {
      throw DomainError("schema images must be single-channel with even extents >= 8");
    }
    for (std::size_t a = 0; a < num_labels(); ++a)
      for (std::size_t b = a + 1; b < num_labels(); ++b) {
        if (rule(a).name == rule(b).name) throw DomainError("duplicate label name " + rule(a).name);
        if (rule(a).primitive == rule(b).primitive && rule(a).quadrant == rule(b).quadrant) {
          throw DomainError("labels " + rule(a).name + " and " + rule(b).name + " share a shape and quadrant");
        }
      }
  }
};

inline DomainSchema default_schema() {
  DomainSchema s;
  s.diagnoses = {{"atelectasis", Primitive::Disk, Quadrant::UpperLeft},
                 {"edema", Primitive::Square, Quadrant::UpperRight},
                 {"pneumonia", Primitive::Cross, Quadrant::LowerLeft}};
  s.evidence = {{"opacity", Primitive::Ring, Quadrant::LowerRight}, {"effusion", Primitive::Dot, Quadrant::LowerRight}};
  return s;
}

/// Per-label categorical state, optionally with the class distribution it
/// was read from.
struct LabelVector {
  std::vector<LabelState> states;
  std::vector<std::array<double, kClasses>> probs;

  static LabelVector from_probs(std::vector<std::array<double, kClasses>> p) {
    LabelVector v;
    for (const auto& t : p) {
      const auto it = std::max_element(t.begin(), t.end());
      v.states.push_back(static_cast<LabelState>(it - t.begin()));
    }
    v.probs = std::move(p);
    return v;
  }

  bool valid(std::size_t num_labels) const {
    if (states.size() != num_labels) return false;
    if (probs.empty()) return true;
    if (probs.size() != num_labels) return false;
    for (const auto& t : probs) {
      double s = 0.0;
      for (double p : t) {
        if (p < 0.0 || p > 1.0) return false;
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) return false;
    }
    return true;
  }

  /// P(Uncertain) + P(Positive); falls back to the hard state.
  double presence(std::size_t label) const {
    if (!probs.empty()) return probs[label][1] + probs[label][2];
    return present(states[label]) ? 1.0 : 0.0;
  }

  bool operator==(const LabelVector& o) const { return states == o.states; }
};

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline bool in_primitive(Primitive p, double dy, double dx, double q) {
  const double r = std::sqrt(dy * dy + dx * dx);
  switch (p) {
    case Primitive::Disk: return r <= 0.32 * q;
    case Primitive::Square: return std::abs(dy) <= 0.29 * q && std::abs(dx) <= 0.29 * q;
    case Primitive::Cross:
      return (std::abs(dy) <= 0.1 * q && std::abs(dx) <= 0.38 * q) || (std::abs(dx) <= 0.1 * q && std::abs(dy) <= 0.38 * q);
    case Primitive::Ring: return r >= 0.28 * q && r <= 0.41 * q;
    case Primitive::Dot: return r <= 0.16 * q;
  }
  return false;
}

}  // namespace detail

inline std::vector<std::uint8_t> quadrant_pixels(const DomainSchema& s, Quadrant q) {
  std::vector<std::uint8_t> m(s.height * s.width, 0);
  const std::size_t qi = static_cast<std::size_t>(q);
  const std::size_t y0 = (qi / 2) * s.height / 2, x0 = (qi % 2) * s.width / 2;
  for (std::size_t y = y0; y < y0 + s.height / 2; ++y)
    for (std::size_t x = x0; x < x0 + s.width / 2; ++x) m[y * s.width + x] = 1;
  return m;
}

/// Pixels covered by a label's primitive.
inline std::vector<std::uint8_t> footprint(const DomainSchema& s, std::size_t label) {
  const LabelRule& r = s.rule(label);
  const std::size_t qi = static_cast<std::size_t>(r.quadrant);
  const double qh = static_cast<double>(s.height) / 2.0, qw = static_cast<double>(s.width) / 2.0;
  const double cy = (qi / 2) * qh + (qh - 1.0) / 2.0, cx = (qi % 2) * qw + (qw - 1.0) / 2.0;
  std::vector<std::uint8_t> m(s.height * s.width, 0);
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      m[y * s.width + x] = detail::in_primitive(r.primitive, y - cy, x - cx, std::min(qh, qw)) ? 1 : 0;
  return m;
}

struct SynthImage {
  std::vector<double> pixels;  // c*h*w in [-1, 1]
  LabelVector target;
  std::uint64_t seed = 0;
};

/// Draws each non-Negative label's primitive over Gaussian background noise.
inline SynthImage render_image(const DomainSchema& s, const LabelVector& target, std::uint64_t seed) {
  if (!target.valid(s.num_labels())) throw DomainError("target does not fit the schema");
  Rng rng(derive_seed(seed, "render"));
  std::vector<double> px(s.num_pixels());
  for (double& v : px) v = s.noise_sigma * rng.normal();
  for (std::size_t l = 0; l < s.num_labels(); ++l) {
    const double a = s.intensity(target.states[l]);
    if (a == 0.0) continue;
    const auto fp = footprint(s, l);
    for (std::size_t i = 0; i < px.size(); ++i)
      if (fp[i]) px[i] += a;
  }
  for (double& v : px) v = std::clamp(v, -1.0, 1.0);
  return {std::move(px), target, seed};
}

/// Stacks images into an [n, c, h, w] tensor.
inline Tensor image_batch(const DomainSchema& s, const std::vector<const SynthImage*>& images) {
  std::vector<double> v;
  v.reserve(images.size() * s.num_pixels());
  for (const auto* im : images) v.insert(v.end(), im->pixels.begin(), im->pixels.end());
  return Tensor({images.size(), s.channels, s.height, s.width}, std::move(v));
}

/// Per-label class probabilities used to draw targets.
using LabelPrior = std::vector<std::array<double, kClasses>>;

inline LabelPrior uniform_prior(const DomainSchema& s) {
  return LabelPrior(s.num_labels(), {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
}

inline void validate_prior(const DomainSchema& s, const LabelPrior& prior) {
  if (prior.size() != s.num_labels()) throw DomainError("prior must have one distribution per label");
  for (const auto& p : prior) {
    double t = 0.0;
    for (double v : p) {
      if (v < 0.0) throw DomainError("prior probabilities must be nonnegative");
      t += v;
    }
    if (std::abs(t - 1.0) > 1e-9) throw DomainError("prior distributions must sum to 1");
  }
  bool diag = false, ev = false;
  for (std::size_t l = 0; l < s.num_labels(); ++l) {
    const bool nonneg = prior[l][1] + prior[l][2] > 0.0;
    (s.is_diagnosis(l) ? diag : ev) = (s.is_diagnosis(l) ? diag : ev) || nonneg;
  }
  if (!diag) throw DomainError("prior gives no mass to any present diagnosis");
  if (!ev) throw DomainError("prior cannot produce an image with evidence");
}

namespace detail {

inline LabelState draw_state(Rng& rng, const std::array<double, kClasses>& p) {
  const double u = rng.uniform();
  if (u < p[0]) return LabelState::Negative;
  if (u < p[0] + p[1]) return LabelState::Uncertain;
  return LabelState::Positive;
}

}  // namespace detail

/// Draws targets i.i.d. from the prior; evidence labels are redrawn until at
/// least one is present.
inline std::vector<SynthImage> sample_dataset(const DomainSchema& s, std::size_t n, const LabelPrior& prior,
                                              std::uint64_t seed) {
  if (n == 0) throw DomainError("dataset must contain at least one image");
  validate_prior(s, prior);
  std::vector<SynthImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t img_seed = derive_seed(seed, "image", i);
    Rng rng(derive_seed(img_seed, "target"));
    LabelVector t;
    t.states.resize(s.num_labels());
    for (std::size_t d = 0; d < s.num_diagnoses(); ++d) t.states[d] = detail::draw_state(rng, prior[d]);
    bool any = false;
    while (!any) {
      for (std::size_t e = 0; e < s.num_evidence(); ++e) {
        const std::size_t l = s.evidence_label(e);
        t.states[l] = detail::draw_state(rng, prior[l]);
        any = any || present(t.states[l]);
      }
    }
    out.push_back(render_image(s, t, img_seed));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explanation grammar

/// Vocabulary and fixed template
/// "<severity> <evidence> [<joiner> <evidence>] <pre-location...> <vertical> <horizontal> <pre-diagnosis...> <diagnosis>".
struct Grammar {
  std::string name;
  std::array<std::string, 2> hedges;
  std::array<std::string, 2> assertives;
  std::vector<std::string> evidence_nouns;
  std::string evidence_joiner;
  std::vector<std::string> pre_location;
  std::array<std::string, 2> vertical;    // upper, lower
  std::array<std::string, 2> horizontal;  // left, right
  std::vector<std::string> pre_diagnosis;
  std::vector<std::string> diagnosis_nouns;
  std::string diagnosis_joiner;  // only used by compound report sentences

  std::vector<std::string> vocabulary() const {
    std::vector<std::string> v{hedges.begin(), hedges.end()};
    v.insert(v.end(), assertives.begin(), assertives.end());
    v.insert(v.end(), evidence_nouns.begin(), evidence_nouns.end());
    v.push_back(evidence_joiner);
    v.insert(v.end(), pre_location.begin(), pre_location.end());
    v.insert(v.end(), vertical.begin(), vertical.end());
    v.insert(v.end(), horizontal.begin(), horizontal.end());
    v.insert(v.end(), pre_diagnosis.begin(), pre_diagnosis.end());
    v.insert(v.end(), diagnosis_nouns.begin(), diagnosis_nouns.end());
    v.push_back(diagnosis_joiner);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  }
};

inline Grammar medical_grammar(const DomainSchema& s) {
  Grammar g;
  g.name = "medical";
  g.hedges = {"possible", "questionable"};
  g.assertives = {"definite", "extensive"};
  for (const auto& r : s.evidence) g.evidence_nouns.push_back(r.name);
  g.evidence_joiner = "and";
  g.pre_location = {"in", "the"};
  g.vertical = {"upper", "lower"};
  g.horizontal = {"left", "right"};
  g.pre_diagnosis = {"suggesting"};
  for (const auto& r : s.diagnoses) g.diagnosis_nouns.push_back(r.name);
  g.diagnosis_joiner = "or";
  return g;
}

/// Same semantics as the medical grammar with a disjoint plain-language
/// vocabulary. Only defined for the labels of the default schema.
inline Grammar layman_grammar(const DomainSchema& s) {
  static const std::map<std::string, std::string> plain = {
      {"atelectasis", "collapse"}, {"edema", "swelling"}, {"pneumonia", "infection"},
      {"opacity", "cloud"},        {"effusion", "fluid"},
  };
  Grammar g;
  g.name = "layman";
  g.hedges = {"maybe", "perhaps"};
  g.assertives = {"clear", "big"};
  auto word = [&](const std::string& n) {
    auto it = plain.find(n);
    if (it == plain.end()) throw DomainError("no plain-language word for label " + n);
    return it->second;
  };
  for (const auto& r : s.evidence) g.evidence_nouns.push_back(word(r.name));
  g.evidence_joiner = "plus";
  g.pre_location = {"at"};
  g.vertical = {"top", "bottom"};
  g.horizontal = {"lefthand", "righthand"};
  g.pre_diagnosis = {"means"};
  for (const auto& r : s.diagnoses) g.diagnosis_nouns.push_back(word(r.name));
  g.diagnosis_joiner = "either";
  return g;
}

inline Grammar grammar_by_name(const DomainSchema& s, const std::string& name) {
  if (name == "medical") return medical_grammar(s);
  if (name == "layman") return layman_grammar(s);
  throw DomainError("unknown grammar '" + name + "' (expected medical or layman)");
}

/// A sentence of the grammar with the semantics it was built from.
struct GrammarSentence {
  std::vector<std::string> tokens;
  std::size_t diagnosis = 0;
  unsigned evidence_mask = 0;  // bit e set when evidence label e is mentioned
  Quadrant location = Quadrant::UpperLeft;
  bool hedged = false;
  std::size_t grammar = 0;  // index into the inventory it was decoded from

  std::string text() const {
    std::string t;
    for (std::size_t i = 0; i < tokens.size(); ++i) t += (i ? " " : "") + tokens[i];
    return t;
  }
};

/// severity_word: 0-1 hedges, 2-3 assertives.
inline GrammarSentence build_sentence(const Grammar& g, std::size_t diagnosis, unsigned evidence_mask, Quadrant loc,
                                      std::size_t severity_word) {
  if (diagnosis >= g.diagnosis_nouns.size()) throw DomainError("diagnosis index out of range");
  if (evidence_mask == 0 || evidence_mask >= (1u << g.evidence_nouns.size())) throw DomainError("bad evidence mask");
  GrammarSentence s;
  s.diagnosis = diagnosis;
  s.evidence_mask = evidence_mask;
  s.location = loc;
  s.hedged = severity_word < 2;
  s.tokens.push_back(s.hedged ? g.hedges[severity_word] : g.assertives[severity_word - 2]);
  bool first = true;
  for (std::size_t e = 0; e < g.evidence_nouns.size(); ++e) {
    if (!(evidence_mask & (1u << e))) continue;
    if (!first) s.tokens.push_back(g.evidence_joiner);
    s.tokens.push_back(g.evidence_nouns[e]);
    first = false;
  }
  s.tokens.insert(s.tokens.end(), g.pre_location.begin(), g.pre_location.end());
  const auto qi = static_cast<std::size_t>(loc);
  s.tokens.push_back(g.vertical[qi / 2]);
  s.tokens.push_back(g.horizontal[qi % 2]);
  s.tokens.insert(s.tokens.end(), g.pre_diagnosis.begin(), g.pre_diagnosis.end());
  s.tokens.push_back(g.diagnosis_nouns[diagnosis]);
  return s;
}

/// Every sentence of the grammar in its fixed order: diagnosis, then
/// location Q1..Q4, then evidence mask ascending, then severity word
/// (hedges before assertives).
inline std::vector<GrammarSentence> enumerate_grammar(const Grammar& g) {
  std::vector<GrammarSentence> out;
  const unsigned masks = 1u << g.evidence_nouns.size();
  for (std::size_t d = 0; d < g.diagnosis_nouns.size(); ++d)
    for (std::size_t q = 0; q < kQuadrants; ++q)
      for (unsigned m = 1; m < masks; ++m)
        for (std::size_t w = 0; w < 4; ++w) out.push_back(build_sentence(g, d, m, static_cast<Quadrant>(q), w));
  return out;
}

namespace detail {

inline unsigned present_evidence_mask(const DomainSchema& s, const LabelVector& t) {
  unsigned m = 0;
  for (std::size_t e = 0; e < s.num_evidence(); ++e)
    if (present(t.states[s.evidence_label(e)])) m |= 1u << e;
  return m;
}

}  // namespace detail

/// Ground-truth explanation of one present diagnosis: mentions every present
/// evidence label, locates the diagnosis' quadrant, and hedges iff the
/// diagnosis is Uncertain. The style seed picks between synonymous
/// severity words.
inline GrammarSentence gt_sentence_for(const DomainSchema& s, const Grammar& g, const LabelVector& target,
                                       std::size_t diagnosis, std::uint64_t style_seed) {
  if (diagnosis >= s.num_diagnoses()) throw DomainError("unknown diagnosis index");
  const LabelState st = target.states.at(diagnosis);
  if (!present(st)) throw DomainError("cannot explain a Negative diagnosis");
  const unsigned mask = detail::present_evidence_mask(s, target);
  if (mask == 0) throw DomainError("target has no present evidence label");
  Rng rng(derive_seed(style_seed, "style", diagnosis));
  const std::size_t pick = rng.index(2);
  return build_sentence(g, diagnosis, mask, s.diagnoses[diagnosis].quadrant,
                        st == LabelState::Uncertain ? pick : 2 + pick);
}

/// Report-style sentence naming several diagnoses at once
/// ("... suggesting atelectasis or edema"). Not part of the enumerable
/// grammar; used to populate the candidate pool the database filters.
inline std::vector<std::string> compound_sentence_for(const DomainSchema& s, const Grammar& g,
                                                      const LabelVector& target, std::uint64_t style_seed) {
  std::vector<std::size_t> ds;
  for (std::size_t d = 0; d < s.num_diagnoses(); ++d)
    if (present(target.states[d])) ds.push_back(d);
  if (ds.size() < 2) throw DomainError("compound sentences need two present diagnoses");
  auto tokens = gt_sentence_for(s, g, target, ds[0], style_seed).tokens;
  for (std::size_t k = 1; k < ds.size(); ++k) {
    tokens.push_back(g.diagnosis_joiner);
    tokens.push_back(g.diagnosis_nouns[ds[k]]);
  }
  return tokens;
}

/// Keyword labeler. Mentioned labels are Uncertain when any hedge occurs
/// and Positive otherwise; unmentioned labels are Negative.
inline LabelVector oracle_label(const DomainSchema& s, const Grammar& g, const std::vector<std::string>& tokens) {
  LabelVector v;
  v.states.assign(s.num_labels(), LabelState::Negative);
  bool hedge = false;
  std::vector<bool> mentioned(s.num_labels(), false);
  for (const auto& t : tokens) {
    if (t == g.hedges[0] || t == g.hedges[1]) hedge = true;
    for (std::size_t d = 0; d < g.diagnosis_nouns.size(); ++d)
      if (t == g.diagnosis_nouns[d]) mentioned[d] = true;
    for (std::size_t e = 0; e < g.evidence_nouns.size(); ++e)
      if (t == g.evidence_nouns[e]) mentioned[s.evidence_label(e)] = true;
  }
  for (std::size_t l = 0; l < s.num_labels(); ++l)
    if (mentioned[l]) v.states[l] = hedge ? LabelState::Uncertain : LabelState::Positive;
  return v;
}

struct QuadrantMask {
  Quadrant quadrant;
  std::vector<std::uint8_t> mask;  // h*w, 1 = occluded
};

inline QuadrantMask quadrant_mask(const DomainSchema& s, Quadrant q) { return {q, quadrant_pixels(s, q)}; }

/// Reads the location phrase; nullopt when the sentence cannot be grounded.
inline std::optional<QuadrantMask> ground_sentence(const DomainSchema& s, const Grammar& g,
                                                   const std::vector<std::string>& tokens) {
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    for (std::size_t v = 0; v < 2; ++v) {
      if (tokens[i] != g.vertical[v]) continue;
      for (std::size_t h = 0; h < 2; ++h)
        if (tokens[i + 1] == g.horizontal[h]) return quadrant_mask(s, static_cast<Quadrant>(v * 2 + h));
    }
  }
  return std::nullopt;
}

/// Mean pixel value over a label's primitive footprint.
inline double label_intensity(const DomainSchema& s, const std::vector<double>& pixels, std::size_t label) {
  const auto fp = footprint(s, label);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < fp.size(); ++i)
    if (fp[i]) {
      sum += pixels[i];
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

enum class ReadMode { TextOnly, ImageAndText, ImageOnly };

inline constexpr double kDefaultReadThreshold = 0.3;

/// Rule-based stand-in for a human reader answering "is this label present?".
inline LabelVector proxy_read(const DomainSchema& s, const Grammar& g, const std::vector<std::string>* tokens,
                              const std::vector<double>* pixels, ReadMode mode,
                              double threshold = kDefaultReadThreshold) {
  if (mode != ReadMode::ImageOnly && tokens == nullptr) throw DomainError("proxy_read: text mode needs a sentence");
  if (mode != ReadMode::TextOnly && pixels == nullptr) throw DomainError("proxy_read: image mode needs an image");
  if (mode == ReadMode::TextOnly) return oracle_label(s, g, *tokens);
  LabelVector v;
  v.states.assign(s.num_labels(), LabelState::Negative);
  if (mode == ReadMode::ImageOnly) {
    for (std::size_t l = 0; l < s.num_labels(); ++l) {
      const double a = label_intensity(s, *pixels, l);
      if (a > threshold) {
        v.states[l] = LabelState::Positive;
      } else if (a > threshold / 2.0) {
        v.states[l] = LabelState::Uncertain;
      }
    }
    return v;
  }
  const LabelVector text = oracle_label(s, g, *tokens);
  for (std::size_t l = 0; l < s.num_labels(); ++l) {
    if (!present(text.states[l])) continue;
    const double need = text.states[l] == LabelState::Positive ? threshold : threshold / 2.0;
    if (label_intensity(s, *pixels, l) > need) v.states[l] = text.states[l];
  }
  return v;
}

}  // namespace wenlex
