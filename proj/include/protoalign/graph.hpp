#pragma once

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoalign/autodiff.hpp"

namespace protoalign {

using Label = int;

/// D^(-1/2) (a_hat + I) D^(-1/2), D the degree matrix of a_hat + I.
/// Differentiable through a_hat. Throws on a non-square or asymmetric input.
Var normalize_affinity(const Var& a_hat);
Tensor normalize_affinity(const Tensor& a_hat);

enum class ThresholdMode { PerBatch, Running };

/// Confidence cutoff for trusting target pseudo-labels.
struct ThresholdState {
  ThresholdMode mode = ThresholdMode::PerBatch;
  double running_momentum = 0.9;  // used by ThresholdMode::Running
  double delta = 0.0;
  std::optional<double> running;
  std::vector<double> history;
};

/// mean(p) - 2 * std(p), population standard deviation.
double threshold_statistic(std::span<const double> max_probs);

/// Computes the batch statistic, optionally smooths it, clamps it at 0,
/// stores it as the current delta and appends it to the history.
double adaptive_threshold(std::span<const double> max_probs, ThresholdState& state);

/// Pairwise supervision over the batch node set (source nodes first, then
/// target nodes).
struct GroundTruth {
  Tensor t;                                            // n x n, {0,1}
  std::vector<bool> mask;                              // true = trusted node
  std::vector<std::size_t> pair_indices;               // flat i*n + j, i != j, both trusted
  std::size_t nodes() const { return mask.size(); }
  std::size_t trusted_targets(std::size_t n_source) const;
};

GroundTruth build_ground_truth(std::span<const Label> source_labels,
                               std::span<const Label> target_pseudo_labels,
                               std::span<const double> target_max_probs, double delta,
                               std::size_t classes);

/// Debug record of one batch graph.
nlohmann::json graph_debug_record(const Tensor& a_hat, const GroundTruth& gt);

}  // namespace protoalign
