// wenlex: command-line driver for data synthesis, training, evaluation and
// ablations. Exit codes: 0 ok, 2 config/usage error, 3 missing artifact,
// 4 numeric failure, 1 anything else.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wenlex/wenlex.hpp"

namespace fs = std::filesystem;
using namespace wenlex;
using json = nlohmann::ordered_json;

namespace {

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t parse_seed(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw ConfigError(what + " must be a nonnegative integer, got '" + v + "'");
  }
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

/// Options shared by every subcommand.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

/// Built-in defaults, then WENLEX_SEED, then the config file, then --seed.
/// Subcommand flags are applied on top by the caller.
Config base_config(const Common& c) {
  Config cfg;
  if (const char* env = std::getenv("WENLEX_SEED"); env && *env) set_all_seeds(cfg, parse_seed(env, "WENLEX_SEED"));
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  if (c.seed) set_all_seeds(cfg, *c.seed);
  return cfg;
}

fs::path require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw MissingArtifact("missing " + p.string() + "; produce it with `wenlex " + producer + "`");
  return p;
}

fs::path prepare_out(const std::string& out) {
  const fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + out);
  return dir;
}

/// Writes manifest.json and the resolved config before any compute.
class Manifest {
 public:
  Manifest(const fs::path& dir, const std::string& command, const Common& c, const Config& cfg,
           const std::vector<std::string>& argv)
      : path_(dir / "manifest.json") {
    const auto toml = config_to_toml(cfg);
    write_file(dir / "config.toml", toml);
    j_["command"] = command;
    j_["args"] = argv;
    j_["config_path"] = c.config;
    j_["config_hash"] = sha256_hex(toml);
    j_["out_dir"] = fs::absolute(dir).string();
    j_["started_at"] = utc_now();
    flush();
  }

  void set(const std::string& k, json v) {
    j_[k] = std::move(v);
    flush();
  }

  void finish() { set("finished_at", utc_now()); }

 private:
  void flush() const { write_file(path_, j_.dump(2) + "\n"); }
  fs::path path_;
  json j_;
};

fs::path db_file(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= "database.json";
  return require(p, "build-db");
}

Dataset open_dataset(const std::string& dir) {
  for (const char* f : {"schema.json", "train.jsonl", "val.jsonl", "test.jsonl"}) require(fs::path(dir) / f, "synth-data");
  return load_dataset(dir);
}

NleDatabase open_database(const DomainSchema& s, const TextCodec& codec, const std::string& arg) {
  auto db = database_from_json(s, read_file(db_file(arg)));
  for (const auto& es : db.per_diagnosis)
    for (const auto& e : es)
      if (e.embedding.size() != codec.dim()) throw ConfigError("database embeddings do not match codec.dim");
  return db;
}

Classifier open_classifier(const DomainSchema& s, const Config& cfg, const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= "classifier.ckpt";
  require(p, "pretrain");
  Classifier c(s, cfg.pretrain.seed);
  get_tensors(load_checkpoint(p), c.state());
  return c.frozen_clone();
}

struct RunFiles {
  Config cfg;
  WenlexModel model;
  NleDatabase db;
};

RunFiles open_run(const DomainSchema& s, const std::string& dir) {
  const fs::path d(dir);
  for (const char* f : {"config.toml", "run.ckpt", "database.json"}) require(d / f, "train");
  Config cfg = load_config(d / "config.toml");
  const auto codec = default_codec(s, cfg.codec.dim, cfg.codec.seed);
  auto model = load_run_model(load_checkpoint(d / "run.ckpt"), s, cfg);
  return {cfg, std::move(model), open_database(s, codec, (d / "database.json").string())};
}

/// Training plus artifacts; shared by `train` and `ablate`.
TrainResult train_into(const fs::path& out, const Config& cfg, const Dataset& data, const TextCodec& codec,
                       const NleDatabase& db, const Classifier& mbe, bool wall_time) {
  WenlexModel m(data.schema, codec.dim(), cfg.train.seed, mbe);
  TrainOptions opts;
  opts.record_wall_time = wall_time;
  opts.progress = [](const std::string& s) { log(s); };
  const auto r = train_wenlex(cfg.train, data, codec, db, m, opts);
  save_checkpoint(out / "run.ckpt", run_checkpoint(m, r));
  write_file(out / "train_log.csv", log_to_csv(r.log));
  write_file(out / "database.json", database_to_json(data.schema, db));
  json summary;
  summary["checkpoint"] = "run.ckpt";
  summary["log"] = "train_log.csv";
  summary["config"] = "config.toml";
  summary["selection"] = "lowest validation loss";
  summary["best_val_loss"] = r.best_val_loss;
  summary["best_epoch"] = r.best_epoch;
  summary["steps"] = r.steps;
  summary["frozen_copy_syncs"] = r.sync_steps;
  write_file(out / "summary.json", summary.dump(2) + "\n");
  return r;
}

MetricsReport evaluate_into(const fs::path& out, const std::string& name, const RunFiles& run, const Dataset& data,
                            const std::string& split, const std::optional<std::string>& dump) {
  const auto codec = default_codec(data.schema, run.cfg.codec.dim, run.cfg.codec.seed);
  Evaluation ev;
  if (dump) {
    fs::path p(*dump);
    if (fs::is_directory(p)) p /= "explanations.jsonl";
    require(p, "generate");
    const auto so = classify_split(run.model.classifier, data.schema, data.split(split));
    auto xs = explanations_from_jsonl(data.schema, codec, data.split(split), split, so, read_file(p));
    ev = evaluate(run.model, codec, run.db, data, split, run.cfg.eval, std::move(xs));
  } else {
    ev = evaluate(run.model, codec, run.db, data, split, run.cfg.eval);
  }
  write_file(out / "metrics.csv", metrics_csv(name, ev.report));
  write_file(out / "metrics.txt", render_table(parse_metrics_csv(metrics_csv(name, ev.report)), MetricsReport::columns()));
  return ev.report;
}

std::string run_name(const std::string& dir) {
  auto p = fs::path(dir);
  if (!p.has_filename()) p = p.parent_path();
  return p.filename().string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wenlex: weakly supervised explanation generation on a synthetic X-ray domain"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "wenlex 0.1.0");
  std::vector<std::string> args(argv, argv + argc);

  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required = true) {
    sub->add_option("--config", common.config, "TOML config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Global seed; overrides every seed in the config");
    auto* o = sub->add_option("--out", common.out, "Output directory");
    if (out_required) o->required();
  };

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Render the synthetic dataset");
  add_common(synth);

  // pretrain
  std::string data_dir;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the classifier");
  add_common(pretrain);
  pretrain->add_option("--data", data_dir, "Dataset directory from synth-data")->required();

  // build-db
  std::optional<std::size_t> db_n;
  std::optional<std::string> db_grammar;
  auto* build_db = app.add_subcommand("build-db", "Sample the per-diagnosis sentence database");
  add_common(build_db);
  build_db->add_option("--data", data_dir, "Dataset directory")->required();
  build_db->add_option("--n", db_n, "Sentences per diagnosis");
  build_db->add_option("--grammar", db_grammar, "medical or layman")->check(CLI::IsMember({"medical", "layman"}));

  // train
  std::string db_arg, clf_arg;
  std::optional<std::string> mode, plaus, recons, nle_clf, tap;
  std::optional<int> epochs;
  bool wall_time = false;
  auto* train = app.add_subcommand("train", "Train the explanation generator");
  add_common(train);
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--db", db_arg, "Database file or build-db directory")->required();
  train->add_option("--classifier", clf_arg, "Pretrained classifier (required for post-hoc)");
  train->add_option("--mode", mode)->check(CLI::IsMember({"post-hoc", "in-model"}));
  train->add_option("--plaus", plaus)->check(CLI::IsMember({"mmd", "adv"}));
  train->add_option("--recons", recons)->check(CLI::IsMember({"on", "off"}));
  train->add_option("--nle-clf", nle_clf)->check(CLI::IsMember({"on", "off"}));
  train->add_option("--tap", tap)->check(CLI::IsMember({"block1", "block2", "block3", "gap", "heads"}));
  train->add_option("--epochs", epochs);
  train->add_flag("--wall-time", wall_time, "Record per-step wall time in the log (breaks byte-identical logs)");

  // generate
  std::string run_dir, split = "test";
  auto* generate = app.add_subcommand("generate", "Generate explanations for a split");
  add_common(generate);
  generate->add_option("--run", run_dir, "Run directory from train")->required();
  generate->add_option("--data", data_dir, "Dataset directory")->required();
  generate->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));

  // evaluate
  std::optional<std::string> gen_dump, name;
  auto* eval = app.add_subcommand("evaluate", "Compute the metric suite");
  add_common(eval);
  eval->add_option("--run", run_dir, "Run directory from train")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--gen", gen_dump, "Generation dump (file or generate directory); generated on the fly when absent");
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--name", name, "Run name in the report (default: run directory name)");

  // ablate
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid and aggregate over seeds");
  add_common(ablate);
  ablate->add_option("--axis", axis)->required()->check(CLI::IsMember({"db_size", "tap"}));
  ablate->add_option("--values", values)->required()->delimiter(',');
  ablate->add_option("--seeds", seeds)->delimiter(',');
  ablate->add_option("--data", data_dir, "Dataset directory")->required();
  ablate->add_option("--classifier", clf_arg, "Pretrained classifier")->required();

  // report
  std::vector<std::string> runs;
  auto* report = app.add_subcommand("report", "Compare evaluated runs");
  add_common(report);
  report->add_option("--runs", runs, "metrics.csv files or evaluate directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Config cfg = base_config(common);
    if (db_n) cfg.db.n = *db_n;
    if (db_grammar) cfg.db.grammar = *db_grammar;
    if (mode) cfg.train.mode = parse_mode(*mode);
    if (plaus) cfg.train.plaus = parse_plaus(*plaus);
    if (recons) cfg.train.recons = parse_switch(*recons);
    if (nle_clf) cfg.train.nle_clf = parse_switch(*nle_clf);
    if (tap) cfg.train.tap = *tap;
    if (epochs) cfg.train.epochs = *epochs;
    cfg.validate();

    const std::string command = app.get_subcommands().front()->get_name();
    const fs::path out = prepare_out(common.out);
    Manifest manifest(out, command, common, cfg, args);
    auto progress = [](const std::string& s) { log(s); };

    if (synth->parsed()) {
      const auto d = synthesize(default_schema(), cfg.data);
      save_dataset(out, d);
      log("wrote " + std::to_string(d.train.size()) + "/" + std::to_string(d.val.size()) + "/" +
          std::to_string(d.test.size()) + " train/val/test images to " + out.string());
    } else if (pretrain->parsed()) {
      const auto data = open_dataset(data_dir);
      const auto r = pretrain_classifier(cfg.pretrain, data, progress);
      save_checkpoint(out / "classifier.ckpt", detail::snapshot(r.model.state()));
      write_file(out / "pretrain_log.csv", r.log_csv);
      json s;
      s["checkpoint"] = "classifier.ckpt";
      s["best_epoch"] = r.best_epoch;
      s["val_loss"] = r.val_loss;
      s["val_auc"] = r.val_auc ? json(*r.val_auc) : json(nullptr);
      s["params_sha256"] = params_hash(r.model.state());
      write_file(out / "summary.json", s.dump(2) + "\n");
      log("val macro AUC " + format_metric(r.val_auc));
    } else if (build_db->parsed()) {
      const auto data = open_dataset(data_dir);
      const auto codec = default_codec(data.schema, cfg.codec.dim, cfg.codec.seed);
      const auto db = build_database(data.schema, codec, cfg.db.grammar, data.train, cfg.db.n, cfg.db.seed);
      write_file(out / "database.json", database_to_json(data.schema, db));
      log("wrote " + std::to_string(cfg.db.n) + " " + cfg.db.grammar + " sentences per diagnosis");
    } else if (train->parsed()) {
      const auto data = open_dataset(data_dir);
      const auto codec = default_codec(data.schema, cfg.codec.dim, cfg.codec.seed);
      const auto db = open_database(data.schema, codec, db_arg);
      Classifier mbe;
      if (cfg.train.mode == TrainMode::PostHoc) {
        if (clf_arg.empty()) throw MissingArtifact("post-hoc training needs --classifier; produce it with `wenlex pretrain`");
        mbe = open_classifier(data.schema, cfg, clf_arg);
      } else {
        mbe = Classifier(data.schema, cfg.pretrain.seed);
      }
      const auto r = train_into(out, cfg, data, codec, db, mbe, wall_time);
      log("best epoch " + std::to_string(r.best_epoch) + " val loss " + format_metric(r.best_val_loss));
    } else if (generate->parsed()) {
      const auto data = open_dataset(data_dir);
      const auto run = open_run(data.schema, run_dir);
      const auto codec = default_codec(data.schema, run.cfg.codec.dim, run.cfg.codec.seed);
      const auto xs = generate_explanations(run.model, codec, data.schema, data.split(split), split);
      write_file(out / "explanations.jsonl", explanations_to_jsonl(data.schema, codec, xs));
      log("wrote " + std::to_string(xs.size()) + " explanations");
    } else if (eval->parsed()) {
      const auto data = open_dataset(data_dir);
      const auto run = open_run(data.schema, run_dir);
      const auto r = evaluate_into(out, name.value_or(run_name(run_dir)), run, data, split, gen_dump);
      std::cout << read_file(out / "metrics.txt");
    } else if (ablate->parsed()) {
      const auto data = open_dataset(data_dir);
      const auto codec = default_codec(data.schema, cfg.codec.dim, cfg.codec.seed);
      const auto mbe = open_classifier(data.schema, cfg, clf_arg);
      std::vector<Aggregate> rows;
      const auto& cols = MetricsReport::columns();
      auto write_aggregate = [&](const std::string& file) { write_file(out / file, aggregate_csv(axis, rows, cols)); };
      try {
        for (const auto& v : values) {
          std::vector<RunMetrics> members;
          for (auto seed : seeds) {
            Config mc = cfg;
            mc.db.seed = mc.train.seed = mc.eval.seed = seed;
            if (axis == "db_size") mc.db.n = static_cast<std::size_t>(parse_seed(v, "db_size value"));
            else mc.train.tap = v;
            mc.validate();
            const fs::path member = prepare_out((out / (axis + "-" + v) / ("seed-" + std::to_string(seed))).string());
            write_file(member / "config.toml", config_to_toml(mc));
            log("[" + axis + "=" + v + " seed " + std::to_string(seed) + "]");
            const auto db = build_database(data.schema, codec, mc.db.grammar, data.train, mc.db.n, mc.db.seed);
            train_into(member, mc, data, codec, db, mbe, false);
            const auto run = open_run(data.schema, member.string());
            const auto rep = evaluate_into(member, axis + "=" + v + "/seed-" + std::to_string(seed), run, data, "test", std::nullopt);
            members.push_back(parse_metrics_csv(metrics_csv("m", rep)).front());
          }
          rows.push_back(aggregate_runs(v, members, cols));
        }
      } catch (...) {
        if (!rows.empty()) write_aggregate("aggregate.partial.csv");
        throw;
      }
      write_aggregate("aggregate.csv");
      std::cout << read_file(out / "aggregate.csv");
    } else if (report->parsed()) {
      std::vector<RunMetrics> all;
      for (const auto& r : runs) {
        fs::path p(r);
        if (fs::is_directory(p)) p /= "metrics.csv";
        require(p, "evaluate");
        for (auto& m : parse_metrics_csv(read_file(p))) all.push_back(std::move(m));
      }
      if (all.empty()) throw std::invalid_argument("no evaluated runs to report");
      const auto table = render_table(all, MetricsReport::columns());
      write_file(out / "table.txt", table);
      std::string merged = "run";
      for (const auto& c : MetricsReport::columns()) merged += "," + c;
      merged += "\n";
      for (const auto& m : all) {
        merged += m.name;
        for (const auto& c : MetricsReport::columns()) merged += "," + format_metric(m.get(c));
        merged += "\n";
      }
      write_file(out / "metrics.csv", merged);
      for (const auto& fam : metric_families()) write_file(out / (fam.name + ".svg"), render_svg(fam, all));
      std::cout << table;
    }
    manifest.finish();
    return 0;
  } catch (const ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    log(std::string("error: ") + e.what());
    return 3;
  } catch (const NumericError& e) {
    log(std::string("numeric failure: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
}
