#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoalign/config.hpp"
#include "protoalign/data.hpp"
#include "protoalign/graph.hpp"
#include "protoalign/losses.hpp"
#include "protoalign/net.hpp"
#include "protoalign/prototypes.hpp"

namespace protoalign {

/// Independent random streams of one run, all derived from the config seed.
struct SeedPlan {
  std::uint64_t data;
  std::uint64_t init;
  std::uint64_t sampler;
  std::uint64_t eval;
  std::uint64_t probe;

  static SeedPlan from(std::uint64_t seed);
};

/// Generated or loaded domain pair for a config.
DomainPair make_data(const TrainConfig& config);

struct IterationRecord {
  std::size_t iteration = 0;
  LossBreakdown losses;
  double delta = 0.0;
  double lr = 0.0;
  double progress = 0.0;
  std::size_t trusted_targets = 0;
  bool bce_empty = false;
  bool align_skipped = false;
};

nlohmann::json to_json(const IterationRecord& r);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

nlohmann::json to_json(const EvalResult& r);

struct EvalOptions {
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  bool keep_self_scores = false;
};

/// Accuracy and confusion counts of classifier C, or of G_C applied to seeded
/// target-only batches aggregated through predicted affinities. Needs labels.
EvalResult evaluate(const ModelParams& params, const Dataset& data, Classifier which, const EvalOptions& options);

/// Class predictions for every row of `x`, in row order.
std::vector<Label> predict(const ModelParams& params, const Tensor& x, Classifier which, const EvalOptions& options);

/// F(x) for every row.
Tensor extract(const ModelParams& params, const Tensor& x);

/// 2 (1 - 2 eps).
double a_distance_from_error(double error);

/// Trains a logistic domain probe on half of each domain (standardized
/// features) and returns 2 (1 - 2 eps) for the held-out error eps. Throws with
/// fewer than four samples in either domain.
double a_distance(const Tensor& source_features, const Tensor& target_features, std::uint64_t seed);

struct RunSummary {
  std::size_t iterations_run = 0;
  bool early_stopped = false;
  bool diverged = false;
  std::string divergence;
  Classifier reported = Classifier::Source;
  double source_accuracy = 0.0;           // classifier C on the source set
  std::optional<EvalResult> target_c;     // needs target labels
  std::optional<EvalResult> target_gc;
  std::optional<double> a_distance;
  double wall_seconds = 0.0;

  /// Accuracy of the reported classifier on the target set.
  double target_accuracy() const;
};

nlohmann::json to_json(const RunSummary& s);

struct RunResult {
  ModelParams params;
  PrototypeBank bank;
  ThresholdState threshold;
  std::vector<IterationRecord> records;
  RunSummary summary;
};

/// Callbacks fired during training. All are optional.
struct TrainObserver {
  std::function<void(const IterationRecord&)> on_iteration;
  /// Fired every `checkpoint_every` iterations and once after the final one.
  std::function<void(std::size_t iteration, const ModelParams&, const PrototypeBank&)> on_checkpoint;
  /// Fired when features or the total loss stop being finite, with the
  /// parameters and prototypes at the start of the last iteration whose loss
  /// was finite, and that iteration's index.
  std::function<void(std::size_t iteration, const ModelParams&, const PrototypeBank&)> on_divergence;
  /// Fired each iteration when `debug_graph` is set.
  std::function<void(std::size_t iteration, const nlohmann::json&)> on_graph;
};

/// Runs the full training loop and the final evaluation. A diverged run
/// returns without evaluation.
RunResult train(const TrainConfig& config, const DomainPair& data, const TrainObserver& observer = {});

nlohmann::json checkpoint_to_json(const ModelParams& params, const PrototypeBank& bank, std::size_t iteration);
struct Checkpoint {
  ModelParams params;
  PrototypeBank bank;
  std::size_t iteration = 0;
};
Checkpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace protoalign
