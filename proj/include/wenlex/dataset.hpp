#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wenlex/checkpoint.hpp"
#include "wenlex/config.hpp"
#include "wenlex/domain.hpp"

namespace wenlex {

struct Dataset {
  DomainSchema schema;
  std::vector<SynthImage> train, val, test;

  const std::vector<SynthImage>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
  }
};

/// Draws train+val+test images in one stream and cuts it in that order.
inline Dataset synthesize(const DomainSchema& s, const DataConfig& cfg) {
  s.validate();
  auto all = sample_dataset(s, cfg.train + cfg.val + cfg.test, uniform_prior(s), cfg.seed);
  Dataset d;
  d.schema = s;
  d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.train));
  d.val.assign(all.begin() + static_cast<std::ptrdiff_t>(cfg.train),
               all.begin() + static_cast<std::ptrdiff_t>(cfg.train + cfg.val));
  d.test.assign(all.begin() + static_cast<std::ptrdiff_t>(cfg.train + cfg.val), all.end());
  return d;
}

inline std::vector<const SynthImage*> pointers(const std::vector<SynthImage>& v) {
  std::vector<const SynthImage*> p;
  p.reserve(v.size());
  for (const auto& im : v) p.push_back(&im);
  return p;
}

inline Tensor images_of(const DomainSchema& s, const std::vector<SynthImage>& v, const std::vector<std::size_t>& idx) {
  std::vector<const SynthImage*> p;
  p.reserve(idx.size());
  for (std::size_t i : idx) p.push_back(&v.at(i));
  return image_batch(s, p);
}

/// Mean pixel over a split; the occlusion fill value.
inline double mean_pixel(const std::vector<SynthImage>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& im : v) {
    for (double p : im.pixels) sum += p;
    n += im.pixels.size();
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline std::string image_id(const std::string& split, std::size_t i) {
  std::ostringstream ss;
  ss << split << '-' << std::setw(5) << std::setfill('0') << i;
  return ss.str();
}

// ---------------------------------------------------------------------------
// Serialization. Images are stored as (seed, target) and re-rendered.

inline nlohmann::ordered_json schema_to_json(const DomainSchema& s) {
  auto rule = [](const LabelRule& r) {
    return nlohmann::ordered_json{{"name", r.name},
                                  {"primitive", static_cast<int>(r.primitive)},
                                  {"quadrant", static_cast<int>(r.quadrant)}};
  };
  nlohmann::ordered_json j;
  j["diagnoses"] = nlohmann::ordered_json::array();
  for (const auto& r : s.diagnoses) j["diagnoses"].push_back(rule(r));
  j["evidence"] = nlohmann::ordered_json::array();
  for (const auto& r : s.evidence) j["evidence"].push_back(rule(r));
  j["channels"] = s.channels;
  j["height"] = s.height;
  j["width"] = s.width;
  j["noise_sigma"] = s.noise_sigma;
  j["uncertain_intensity"] = s.uncertain_intensity;
  j["positive_intensity"] = s.positive_intensity;
  return j;
}

inline DomainSchema schema_from_json(const nlohmann::json& j) {
  DomainSchema s;
  auto rule = [](const nlohmann::json& r) {
    return LabelRule{r.at("name").get<std::string>(), static_cast<Primitive>(r.at("primitive").get<int>()),
                     static_cast<Quadrant>(r.at("quadrant").get<int>())};
  };
  for (const auto& r : j.at("diagnoses")) s.diagnoses.push_back(rule(r));
  for (const auto& r : j.at("evidence")) s.evidence.push_back(rule(r));
  s.channels = j.at("channels").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.uncertain_intensity = j.at("uncertain_intensity").get<double>();
  s.positive_intensity = j.at("positive_intensity").get<double>();
  s.validate();
  return s;
}

inline LabelState parse_state(const std::string& v) {
  for (auto st : {LabelState::Negative, LabelState::Uncertain, LabelState::Positive})
    if (v == state_name(st)) return st;
  throw std::invalid_argument("unknown label state '" + v + "'");
}

inline std::string split_to_jsonl(const std::string& split, const std::vector<SynthImage>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = image_id(split, i);
    j["seed"] = v[i].seed;
    j["split"] = split;
    j["target"] = nlohmann::ordered_json::array();
    for (auto st : v[i].target.states) j["target"].push_back(state_name(st));
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<SynthImage> split_from_jsonl(const DomainSchema& s, const std::string& text) {
  std::vector<SynthImage> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    LabelVector t;
    for (const auto& v : j.at("target")) t.states.push_back(parse_state(v.get<std::string>()));
    out.push_back(render_image(s, t, j.at("seed").get<std::uint64_t>()));
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  write_file(dir / "schema.json", schema_to_json(d.schema).dump(2) + "\n");
  write_file(dir / "train.jsonl", split_to_jsonl("train", d.train));
  write_file(dir / "val.jsonl", split_to_jsonl("val", d.val));
  write_file(dir / "test.jsonl", split_to_jsonl("test", d.test));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.schema = schema_from_json(nlohmann::json::parse(read_file(dir / "schema.json")));
  d.train = split_from_jsonl(d.schema, read_file(dir / "train.jsonl"));
  d.val = split_from_jsonl(d.schema, read_file(dir / "val.jsonl"));
  d.test = split_from_jsonl(d.schema, read_file(dir / "test.jsonl"));
  return d;
}

}  // namespace wenlex
