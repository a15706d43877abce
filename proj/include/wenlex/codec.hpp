#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "wenlex/domain.hpp"
#include "wenlex/rng.hpp"

namespace wenlex {

inline constexpr std::size_t kDefaultEmbeddingDim = 64;

enum class Provenance { GroundTruth, Generated, Interpolated };

struct NleEmbedding {
  std::vector<double> vector;
  Provenance provenance = Provenance::GroundTruth;
};

/// Frozen sentence encoder with exact nearest-neighbour decoding over the
/// finite inventory of every registered grammar. Immutable once built.
class TextCodec {
 public:
  TextCodec(const DomainSchema& schema, std::vector<Grammar> grammars, std::size_t dim = kDefaultEmbeddingDim,
            std::uint64_t seed = 0)
      : schema_(schema), grammars_(std::move(grammars)), dim_(dim), seed_(seed) {
    if (dim_ == 0) throw std::invalid_argument("codec dimension must be positive");
    if (grammars_.empty()) throw std::invalid_argument("codec needs at least one grammar");
    for (const auto& r : schema_.diagnoses) add_token(r.name);
    for (const auto& r : schema_.evidence) add_token(r.name);
    for (std::size_t gi = 0; gi < grammars_.size(); ++gi) {
      for (const auto& w : grammars_[gi].vocabulary()) add_token(w);
      for (auto s : enumerate_grammar(grammars_[gi])) {
        s.grammar = gi;
        inventory_embeddings_.push_back(embed(s.tokens).vector);
        inventory_.push_back(std::move(s));
      }
    }
  }

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const DomainSchema& schema() const { return schema_; }
  const std::vector<Grammar>& grammars() const { return grammars_; }
  const Grammar& grammar(std::size_t i) const { return grammars_.at(i); }
  std::size_t grammar_index(const std::string& name) const {
    for (std::size_t i = 0; i < grammars_.size(); ++i)
      if (grammars_[i].name == name) return i;
    throw DomainError("codec has no grammar named '" + name + "'");
  }

  /// Enumeration order: grammars in registration order, each in its own
  /// fixed order (see enumerate_grammar).
  const std::vector<GrammarSentence>& inventory() const { return inventory_; }

  bool knows(const std::string& token) const { return table_.count(token) != 0; }

  const std::vector<double>& token_vector(const std::string& token) const {
    auto it = table_.find(token);
    if (it == table_.end()) throw DomainError("token '" + token + "' is not in the codec vocabulary");
    return it->second;
  }

  /// sum_i (1 + i/10) * E[token_i]
  NleEmbedding embed(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw DomainError("cannot embed an empty sentence");
    std::vector<double> v(dim_, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& e = token_vector(tokens[i]);
      const double w = 1.0 + static_cast<double>(i) / 10.0;
      for (std::size_t k = 0; k < dim_; ++k) v[k] += w * e[k];
    }
    return {std::move(v), Provenance::GroundTruth};
  }

  /// Nearest inventory sentence in Euclidean distance; first in enumeration
  /// order on ties.
  GrammarSentence decode(const std::vector<double>& e) const { return inventory_[nearest(e)]; }

  std::size_t nearest(const std::vector<double>& e) const {
    if (e.size() != dim_) throw DomainError("embedding dimension does not match the codec");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inventory_embeddings_.size(); ++i) {
      double d = 0.0;
      const auto& r = inventory_embeddings_[i];
      for (std::size_t k = 0; k < dim_; ++k) d += (e[k] - r[k]) * (e[k] - r[k]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  const std::vector<double>& inventory_embedding(std::size_t i) const { return inventory_embeddings_.at(i); }

  NleEmbedding diagnosis_embedding(std::size_t diagnosis) const {
    if (diagnosis >= schema_.num_diagnoses()) throw DomainError("unknown diagnosis index");
    return embed({schema_.diagnoses[diagnosis].name});
  }

 private:
  void add_token(const std::string& t) {
    if (table_.count(t)) return;
    Rng rng(derive_seed(seed_, t));
    std::vector<double> v(dim_);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (double& x : v) x = sd * rng.normal();
    table_.emplace(t, std::move(v));
  }

  DomainSchema schema_;
  std::vector<Grammar> grammars_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::map<std::string, std::vector<double>> table_;
  std::vector<GrammarSentence> inventory_;
  std::vector<std::vector<double>> inventory_embeddings_;
};

/// Codec over the medical and layman grammars, in that order.
inline TextCodec default_codec(const DomainSchema& s, std::size_t dim = kDefaultEmbeddingDim, std::uint64_t seed = 0) {
  return TextCodec(s, {medical_grammar(s), layman_grammar(s)}, dim, seed);
}

}  // namespace wenlex
