#include "protoalign/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <regex>
#include <sstream>

#include <CLI11.hpp>

#include "protoalign/ablation.hpp"
#include "protoalign/config.hpp"
#include "protoalign/data.hpp"
#include "protoalign/engine.hpp"
#include "protoalign/rundir.hpp"

namespace protoalign {

namespace fs = std::filesystem;

namespace {

/// Errors caused by the invocation itself rather than by the run.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string key_listing() {
  std::ostringstream s;
  s << "\nConfig keys (override with key=value):\n";
  for (const auto& [key, value] : flatten_config(to_json(TrainConfig{}))) s << "  " << key << " = " << value.dump() << '\n';
  return s.str();
}

struct ConfigArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;

  void attach(CLI::App* app, bool with_file = true) {
    if (with_file) app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Run seed (applied after overrides)");
    app->add_option("overrides", overrides, "Config overrides as dotted.key=value");
    app->footer(key_listing());
  }

  /// Defaults, then the config file, then overrides, then --seed.
  TrainConfig resolve(nlohmann::json doc = to_json(TrainConfig{})) const {
    try {
      if (!config_path.empty()) {
        for (const auto& [key, value] : flatten_config(read_json(config_path))) apply_override(doc, key + "=" + value.dump());
      }
      for (const auto& o : overrides) apply_override(doc, o);
      if (seed) doc["seed"] = *seed;
      return config_from_json(doc);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
};

/// Checkpoint file named explicitly, or the latest one in the run directory.
fs::path find_checkpoint(const fs::path& run_dir, const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  static const std::regex pattern(R"(checkpoint_(\d+)\.json)");
  fs::path best;
  long long best_iter = -1;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern) && std::stoll(m[1]) > best_iter) {
      best_iter = std::stoll(m[1]);
      best = entry.path();
    }
  }
  if (best.empty()) throw std::runtime_error("no checkpoint_*.json in " + run_dir.string());
  return best;
}

struct RunArgs {
  std::string run_dir;
  std::string checkpoint;
  std::string out;
  ConfigArgs config;

  void attach(CLI::App* app) {
    app->add_option("--run", run_dir, "Run directory written by train")->required()->check(CLI::ExistingDirectory);
    app->add_option("--checkpoint", checkpoint, "Checkpoint file (default: latest in the run directory)")
        ->check(CLI::ExistingFile);
    app->add_option("--out", out, "Output file");
    config.attach(app, false);
  }

  TrainConfig resolve() const { return config.resolve(read_json(fs::path(run_dir) / "config.json")); }
  fs::path output(const std::string& fallback) const { return out.empty() ? fs::path(run_dir) / fallback : fs::path(out); }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

int cmd_gen_data(const ConfigArgs& args, const std::string& out, std::ostream& err) {
  const TrainConfig c = args.resolve();
  const DomainPair data = make_data(c);
  fs::create_directories(out);
  save_features_csv(data.source, fs::path(out) / "source.csv");
  save_features_csv(data.target, fs::path(out) / "target.csv");
  write_json(fs::path(out) / "config.json", to_json(c));
  err << "wrote " << data.source.size() << " source and " << data.target.size() << " target rows to " << out << '\n';
  return kExitOk;
}

int cmd_train(const ConfigArgs& args, const std::string& out, std::ostream& err) {
  const TrainConfig c = args.resolve();
  const RunResult run = train_to_directory(c, make_data(c), out);
  const RunSummary& s = run.summary;
  if (s.diverged) {
    err << "training diverged (" << s.divergence << "); last good state in "
        << (fs::path(out) / "checkpoint_last_good.json").string() << '\n';
    return kExitFailure;
  }
  err << std::fixed << std::setprecision(4) << "iterations " << s.iterations_run
      << (s.early_stopped ? " (early stop)" : "") << ", source " << s.source_accuracy;
  if (s.target_c) err << ", target C " << s.target_c->accuracy;
  if (s.target_gc) err << ", target G_C " << s.target_gc->accuracy;
  if (s.a_distance) err << ", d_A " << *s.a_distance;
  err << '\n';
  return kExitOk;
}

int cmd_eval(const RunArgs& args, std::ostream& err) {
  const TrainConfig c = args.resolve();
  const fs::path ckpt_path = find_checkpoint(args.run_dir, args.checkpoint);
  const Checkpoint ckpt = checkpoint_from_json(read_json(ckpt_path));
  const DomainPair data = make_data(c);
  const EvalOptions opt{c.eval_batch, SeedPlan::from(c.seed).eval, c.keep_self_scores};
  nlohmann::json j{{"checkpoint", ckpt_path.filename().string()},
                   {"iteration", ckpt.iteration},
                   {"reported_classifier", to_string(c.reported_classifier())},
                   {"source_accuracy", evaluate(ckpt.params, data.source, Classifier::Source, opt).accuracy}};
  if (data.target.labeled()) {
    j["target_C"] = to_json(evaluate(ckpt.params, data.target, Classifier::Source, opt));
    j["target_G_C"] = to_json(evaluate(ckpt.params, data.target, Classifier::Graph, opt));
    err << "target C " << j["target_C"]["accuracy"] << ", target G_C " << j["target_G_C"]["accuracy"] << '\n';
  }
  write_json(args.output("eval.json"), j);
  return kExitOk;
}

int cmd_a_distance(const RunArgs& args, const std::string& features, std::ostream& err) {
  const TrainConfig c = args.resolve();
  const DomainPair data = make_data(c);
  nlohmann::json j{{"features", features}};
  double d = 0.0;
  const std::uint64_t seed = SeedPlan::from(c.seed).probe;
  if (features == "input") {
    d = a_distance(data.source.x, data.target.x, seed);
  } else {
    const fs::path ckpt_path = find_checkpoint(args.run_dir, args.checkpoint);
    const Checkpoint ckpt = checkpoint_from_json(read_json(ckpt_path));
    j["checkpoint"] = ckpt_path.filename().string();
    d = a_distance(extract(ckpt.params, data.source.x), extract(ckpt.params, data.target.x), seed);
  }
  j["a_distance"] = d;
  write_json(args.output("a_distance.json"), j);
  err << "d_A " << d << '\n';
  return kExitOk;
}

int cmd_export(const RunArgs& args, std::ostream& err) {
  const TrainConfig c = args.resolve();
  const Checkpoint ckpt = checkpoint_from_json(read_json(find_checkpoint(args.run_dir, args.checkpoint)));
  const DomainPair data = make_data(c);
  const EvalOptions opt{c.eval_batch, SeedPlan::from(c.seed).eval, c.keep_self_scores};
  std::ostringstream csv;
  csv << std::setprecision(17) << "domain,index,label,pred_C,pred_G_C";
  for (std::size_t j = 0; j < ckpt.params.dims.feat_dim; ++j) csv << ",e" << j;
  csv << '\n';
  for (const Dataset* d : {&data.source, &data.target}) {
    const Tensor f = extract(ckpt.params, d->x);
    const auto pc = predict(ckpt.params, d->x, Classifier::Source, opt);
    const auto pg = predict(ckpt.params, d->x, Classifier::Graph, opt);
    for (std::size_t i = 0; i < d->size(); ++i) {
      csv << (d->domain == Domain::Source ? "source" : "target") << ',' << i << ',';
      if (d->labeled()) csv << (*d->y)[i];
      csv << ',' << pc[i] << ',' << pg[i];
      for (std::size_t j = 0; j < f.cols(); ++j) csv << ',' << f.at(i, j);
      csv << '\n';
    }
  }
  const fs::path path = args.output("embeddings.csv");
  write_text(path, csv.str());
  err << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const ConfigArgs& args, const std::string& preset, std::size_t seeds, std::size_t threads,
               const std::string& out, std::ostream& err) {
  const TrainConfig base = args.resolve();
  std::vector<AblationRow> rows;
  try {
    rows = preset_rows(preset);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<AblationResult> results;
  try {
    results = run_ablation(base, nullptr, rows, AblationOptions{seeds, threads});
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(out);
  write_json(fs::path(out) / "config.json", to_json(base));
  write_text(fs::path(out) / "ablation_table.csv", ablation_csv(results));
  std::ostringstream runs;
  for (const AblationResult& r : results)
    for (std::size_t s = 0; s < r.runs.size(); ++s) {
      nlohmann::json j = to_json(r.runs[s]);
      j.erase("wall_seconds");
      runs << nlohmann::json{{"row", r.row.name}, {"seed", base.seed + s}, {"summary", j}}.dump() << '\n';
    }
  write_text(fs::path(out) / "ablation_runs.jsonl", runs.str());
  for (const AblationResult& r : results) {
    err << std::fixed << std::setprecision(2) << std::setw(34) << std::left << r.row.name << std::right << ' '
        << 100.0 * r.accuracy.mean << " +- " << 100.0 * r.accuracy.std << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototype-aligned domain adaptation with graph-aggregated features"};
  app.require_subcommand(1);

  std::string out_dir;
  ConfigArgs gen_args, train_args, ablate_args;
  RunArgs eval_args, dist_args, export_args;
  std::string preset = "loss-subsets";
  std::size_t seeds = 10;
  std::size_t threads = 1;
  std::string features = "extractor";

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the configured dataset as source.csv and target.csv");
  gen_args.attach(gen);
  gen->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* tr = app.add_subcommand("train", "Train one run and write its run directory");
  train_args.attach(tr);
  tr->add_option("--out", out_dir, "Run directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint with both classifiers");
  eval_args.attach(ev);

  CLI::App* ab = app.add_subcommand("ablate", "Run an ablation preset over several seeds");
  ablate_args.attach(ab);
  ab->add_option("--rows", preset, "Row preset: loss-subsets or alignment")->capture_default_str();
  ab->add_option("--seeds", seeds, "Seeds per row")->capture_default_str()->check(CLI::PositiveNumber);
  ab->add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  ab->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* ad = app.add_subcommand("a-distance", "A-distance between domains for a checkpoint or raw inputs");
  dist_args.attach(ad);
  ad->add_option("--features", features, "extractor or input")
      ->capture_default_str()
      ->check(CLI::IsMember({"extractor", "input"}));

  CLI::App* ex = app.add_subcommand("export-embeddings", "Write extractor features and predictions as CSV");
  export_args.attach(ex);

  std::vector<std::string> argv_storage{"protoalign"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    // Shows the selected subcommand's help when there is one.
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_gen_data(gen_args, out_dir, err);
    if (app.got_subcommand(tr)) return cmd_train(train_args, out_dir, err);
    if (app.got_subcommand(ev)) return cmd_eval(eval_args, err);
    if (app.got_subcommand(ab)) return cmd_ablate(ablate_args, preset, seeds, threads, out_dir, err);
    if (app.got_subcommand(ad)) return cmd_a_distance(dist_args, features, err);
    if (app.got_subcommand(ex)) return cmd_export(export_args, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace protoalign
