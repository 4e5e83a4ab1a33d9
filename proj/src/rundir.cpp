#include "protoalign/rundir.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace protoalign {

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

std::string checkpoint_name(std::size_t iteration) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_%06zu.json", iteration);
  return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out = open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

RunResult train_to_directory(const TrainConfig& config, const DomainPair& data, const std::filesystem::path& dir) {
  config.validate();
  std::filesystem::create_directories(dir);
  write_json(dir / "config.json", to_json(config));

  std::ofstream metrics = open_for_write(dir / "metrics.jsonl");
  std::ofstream graph_log;
  if (config.debug_graph) graph_log = open_for_write(dir / "graph_debug.jsonl");

  TrainObserver observer;
  observer.on_iteration = [&](const IterationRecord& r) { metrics << to_json(r).dump() << '\n'; };
  observer.on_checkpoint = [&](std::size_t it, const ModelParams& p, const PrototypeBank& b) {
    write_json(dir / checkpoint_name(it), checkpoint_to_json(p, b, it));
  };
  observer.on_divergence = [&](std::size_t it, const ModelParams& p, const PrototypeBank& b) {
    write_json(dir / "checkpoint_last_good.json", checkpoint_to_json(p, b, it));
  };
  if (config.debug_graph) {
    observer.on_graph = [&](std::size_t it, const nlohmann::json& g) {
      nlohmann::json line = g;
      line["iteration"] = it;
      graph_log << line.dump() << '\n';
    };
  }

  RunResult run = train(config, data, observer);
  metrics.close();
  if (!metrics) throw std::runtime_error("failed writing metrics.jsonl");
  write_json(dir / "summary.json", to_json(run.summary));
  return run;
}

}  // namespace protoalign
