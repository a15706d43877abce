#pragma once

#include <cstdint>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include <toml.hpp>

#include "wenlex/codec.hpp"
#include "wenlex/models.hpp"

namespace wenlex {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TrainMode { PostHoc, InModel };
enum class Plausibility { Mmd, Adversarial };

inline std::string mode_name(TrainMode m) { return m == TrainMode::PostHoc ? "post-hoc" : "in-model"; }
inline std::string plaus_name(Plausibility p) { return p == Plausibility::Mmd ? "mmd" : "adv"; }

inline TrainMode parse_mode(const std::string& v) {
  if (v == "post-hoc" || v == "post_hoc") return TrainMode::PostHoc;
  if (v == "in-model" || v == "in_model") return TrainMode::InModel;
  throw ConfigError("mode must be post-hoc or in-model, got '" + v + "'");
}

inline Plausibility parse_plaus(const std::string& v) {
  if (v == "mmd") return Plausibility::Mmd;
  if (v == "adv" || v == "adversarial") return Plausibility::Adversarial;
  throw ConfigError("plausibility must be mmd or adv, got '" + v + "'");
}

inline bool parse_switch(const std::string& v) {
  if (v == "on" || v == "true") return true;
  if (v == "off" || v == "false") return false;
  throw ConfigError("expected on or off, got '" + v + "'");
}

struct DataConfig {
  std::size_t train = 800;
  std::size_t val = 200;
  std::size_t test = 200;
  std::uint64_t seed = 1;
};

struct CodecConfig {
  std::size_t dim = kDefaultEmbeddingDim;
  std::uint64_t seed = 0;
};

struct PretrainConfig {
  int epochs = 5;
  std::size_t batch = 16;
  double lr = 2e-3;
  long warmup = 50;
  std::uint64_t seed = 1;
};

struct DbConfig {
  std::size_t n = 5;
  std::string grammar = "medical";
  std::uint64_t seed = 1;
};

struct TrainConfig {
  TrainMode mode = TrainMode::PostHoc;
  Plausibility plaus = Plausibility::Mmd;
  bool recons = false;
  bool nle_clf = false;
  bool nle_clf_soft = false;  // soft targets for the NLE classification loss
  int epochs = 30;
  std::size_t batch = 16;
  double lr = 5e-4;
  double sigma_lr = 1e-2;
  long warmup = 100;
  int critic_ratio = 5;
  long frozen_period = 1000;
  std::string tap = "block2";
  double gp_lambda = 10.0;
  std::uint64_t seed = 1;
};

struct EvalConfig {
  std::size_t k = 10;
  std::uint64_t seed = 1;
};

struct Config {
  DataConfig data;
  CodecConfig codec;
  PretrainConfig pretrain;
  DbConfig db;
  TrainConfig train;
  EvalConfig eval;

  void validate() const {
    if (data.train == 0 || data.val == 0 || data.test == 0) throw ConfigError("data: every split needs at least one image");
    if (codec.dim < 2) throw ConfigError("codec.dim must be at least 2");
    if (pretrain.epochs <= 0 || train.epochs <= 0) throw ConfigError("epochs must be positive");
    if (pretrain.batch == 0 || train.batch == 0) throw ConfigError("batch size must be positive");
    if (pretrain.lr <= 0 || train.lr <= 0 || train.sigma_lr <= 0) throw ConfigError("learning rates must be positive");
    if (pretrain.warmup < 0 || train.warmup < 0) throw ConfigError("warmup must be nonnegative");
    if (db.n == 0) throw ConfigError("db.n must be positive");
    if (db.grammar != "medical" && db.grammar != "layman") throw ConfigError("db.grammar must be medical or layman");
    if (train.critic_ratio <= 0) throw ConfigError("train.critic_ratio must be positive");
    if (train.frozen_period <= 0) throw ConfigError("train.frozen_period must be positive");
    if (train.gp_lambda < 0) throw ConfigError("train.gp_lambda must be nonnegative");
    if (eval.k == 0) throw ConfigError("eval.k must be positive");
    try {
      check_tap(train.tap);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

template <typename T>
void read_key(const toml::table& t, const char* section, const char* key, T& dst) {
  const auto node = t[section][key];
  if (!node) return;
  if constexpr (std::is_same_v<T, std::string>) {
    auto v = node.template value<std::string>();
    if (!v) throw ConfigError(std::string(section) + "." + key + " must be a string");
    dst = *v;
  } else if constexpr (std::is_same_v<T, bool>) {
    auto v = node.template value<bool>();
    if (!v) throw ConfigError(std::string(section) + "." + key + " must be a boolean");
    dst = *v;
  } else if constexpr (std::is_floating_point_v<T>) {
    auto v = node.template value<double>();
    if (!v) throw ConfigError(std::string(section) + "." + key + " must be a number");
    dst = *v;
  } else {
    auto v = node.template value<std::int64_t>();
    if (!v) throw ConfigError(std::string(section) + "." + key + " must be an integer");
    if (*v < 0) throw ConfigError(std::string(section) + "." + key + " must be nonnegative");
    dst = static_cast<T>(*v);
  }
}

inline void check_known_keys(const toml::table& t) {
  static const std::map<std::string, std::vector<std::string>> known = {
      {"data", {"train", "val", "test", "seed"}},
      {"codec", {"dim", "seed"}},
      {"pretrain", {"epochs", "batch", "lr", "warmup", "seed"}},
      {"db", {"n", "grammar", "seed"}},
      {"train",
       {"mode", "plaus", "recons", "nle_clf", "nle_clf_soft", "epochs", "batch", "lr", "sigma_lr", "warmup", "critic_ratio", "frozen_period", "tap",
        "gp_lambda", "seed"}},
      {"eval", {"k", "seed"}}};
  for (const auto& [section, node] : t) {
    const std::string sec(section.str());
    auto it = known.find(sec);
    if (it == known.end()) throw ConfigError("unknown config section [" + sec + "]");
    if (!node.is_table()) throw ConfigError("[" + sec + "] must be a table");
    for (const auto& [key, _] : *node.as_table()) {
      const std::string k(key.str());
      if (std::find(it->second.begin(), it->second.end(), k) == it->second.end()) {
        throw ConfigError("unknown config key " + sec + "." + k);
      }
    }
  }
}

}  // namespace detail

/// Overlays a TOML document onto `base`. Absent keys keep their value.
inline Config parse_config(const std::string& text, Config base = {}) {
  toml::table t;
  try {
    t = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + std::string(e.description()));
  }
  detail::check_known_keys(t);
  Config& c = base;
  detail::read_key(t, "data", "train", c.data.train);
  detail::read_key(t, "data", "val", c.data.val);
  detail::read_key(t, "data", "test", c.data.test);
  detail::read_key(t, "data", "seed", c.data.seed);
  detail::read_key(t, "codec", "dim", c.codec.dim);
  detail::read_key(t, "codec", "seed", c.codec.seed);
  detail::read_key(t, "pretrain", "epochs", c.pretrain.epochs);
  detail::read_key(t, "pretrain", "batch", c.pretrain.batch);
  detail::read_key(t, "pretrain", "lr", c.pretrain.lr);
  detail::read_key(t, "pretrain", "warmup", c.pretrain.warmup);
  detail::read_key(t, "pretrain", "seed", c.pretrain.seed);
  detail::read_key(t, "db", "n", c.db.n);
  detail::read_key(t, "db", "grammar", c.db.grammar);
  detail::read_key(t, "db", "seed", c.db.seed);
  std::string mode = mode_name(c.train.mode), plaus = plaus_name(c.train.plaus);
  detail::read_key(t, "train", "mode", mode);
  detail::read_key(t, "train", "plaus", plaus);
  c.train.mode = parse_mode(mode);
  c.train.plaus = parse_plaus(plaus);
  detail::read_key(t, "train", "recons", c.train.recons);
  detail::read_key(t, "train", "nle_clf", c.train.nle_clf);
  detail::read_key(t, "train", "nle_clf_soft", c.train.nle_clf_soft);
  detail::read_key(t, "train", "epochs", c.train.epochs);
  detail::read_key(t, "train", "batch", c.train.batch);
  detail::read_key(t, "train", "lr", c.train.lr);
  detail::read_key(t, "train", "sigma_lr", c.train.sigma_lr);
  detail::read_key(t, "train", "warmup", c.train.warmup);
  detail::read_key(t, "train", "critic_ratio", c.train.critic_ratio);
  detail::read_key(t, "train", "frozen_period", c.train.frozen_period);
  detail::read_key(t, "train", "tap", c.train.tap);
  detail::read_key(t, "train", "gp_lambda", c.train.gp_lambda);
  detail::read_key(t, "train", "seed", c.train.seed);
  detail::read_key(t, "eval", "k", c.eval.k);
  detail::read_key(t, "eval", "seed", c.eval.seed);
  c.validate();
  return c;
}

inline Config load_config(const std::filesystem::path& p, Config base = {}) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot read config file " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

/// Every field, in a fixed order. Loading the result reproduces the config.
inline std::string config_to_toml(const Config& c) {
  toml::table t{
      {"data", toml::table{{"train", static_cast<std::int64_t>(c.data.train)},
                           {"val", static_cast<std::int64_t>(c.data.val)},
                           {"test", static_cast<std::int64_t>(c.data.test)},
                           {"seed", static_cast<std::int64_t>(c.data.seed)}}},
      {"codec", toml::table{{"dim", static_cast<std::int64_t>(c.codec.dim)}, {"seed", static_cast<std::int64_t>(c.codec.seed)}}},
      {"pretrain", toml::table{{"epochs", c.pretrain.epochs},
                               {"batch", static_cast<std::int64_t>(c.pretrain.batch)},
                               {"lr", c.pretrain.lr},
                               {"warmup", static_cast<std::int64_t>(c.pretrain.warmup)},
                               {"seed", static_cast<std::int64_t>(c.pretrain.seed)}}},
      {"db", toml::table{{"n", static_cast<std::int64_t>(c.db.n)}, {"grammar", c.db.grammar}, {"seed", static_cast<std::int64_t>(c.db.seed)}}},
      {"train", toml::table{{"mode", mode_name(c.train.mode)},
                            {"plaus", plaus_name(c.train.plaus)},
                            {"recons", c.train.recons},
                            {"nle_clf", c.train.nle_clf},
                            {"nle_clf_soft", c.train.nle_clf_soft},
                            {"epochs", c.train.epochs},
                            {"batch", static_cast<std::int64_t>(c.train.batch)},
                            {"lr", c.train.lr},
                            {"sigma_lr", c.train.sigma_lr},
                            {"warmup", static_cast<std::int64_t>(c.train.warmup)},
                            {"critic_ratio", c.train.critic_ratio},
                            {"frozen_period", static_cast<std::int64_t>(c.train.frozen_period)},
                            {"tap", c.train.tap},
                            {"gp_lambda", c.train.gp_lambda},
                            {"seed", static_cast<std::int64_t>(c.train.seed)}}},
      {"eval", toml::table{{"k", static_cast<std::int64_t>(c.eval.k)}, {"seed", static_cast<std::int64_t>(c.eval.seed)}}}};
  std::ostringstream ss;
  ss << toml::toml_formatter(t, toml::toml_formatter::default_flags & ~toml::format_flags::indentation);
  ss << '\n';
  return ss.str();
}

/// Sets every seed in the config; used for the global seed flag and
/// WENLEX_SEED.
inline void set_all_seeds(Config& c, std::uint64_t seed) {
  c.data.seed = seed;
  c.pretrain.seed = seed;
  c.db.seed = seed;
  c.train.seed = seed;
  c.eval.seed = seed;
}

}  // namespace wenlex
