#include "protoalign/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace protoalign {

namespace {

constexpr double kSymmetryTolerance = 1e-12;

void require_symmetric(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw ShapeError("normalize_affinity: expected a square matrix, got " + shape_to_string(a.shape()));
  }
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::fabs(a.at(i, j) - a.at(j, i)) > kSymmetryTolerance) {
        throw std::invalid_argument("normalize_affinity: input is not symmetric at (" +
                                    std::to_string(i) + ", " + std::to_string(j) + ")");
      }
}

}  // namespace

Var normalize_affinity(const Var& a_hat) {
  require_symmetric(a_hat.value());
  const std::size_t n = a_hat.rows();
  Tape& tape = *a_hat.tape();
  Var with_self = add(a_hat, tape.constant(Tensor::identity(n)));
  Var inv_sqrt_degree = pow(row_sum(with_self), -0.5);  // n x 1
  return mul(with_self, matmul(inv_sqrt_degree, transpose(inv_sqrt_degree)));
}

Tensor normalize_affinity(const Tensor& a_hat) {
  Tape tape;
  return normalize_affinity(tape.constant(a_hat)).value();
}

double threshold_statistic(std::span<const double> max_probs) {
  if (max_probs.empty()) throw std::invalid_argument("adaptive_threshold: empty input");
  const double m = static_cast<double>(max_probs.size());
  double mean = 0.0;
  for (double p : max_probs) mean += p;
  mean /= m;
  double var = 0.0;
  for (double p : max_probs) var += (p - mean) * (p - mean);
  var /= m;
  return mean - 2.0 * std::sqrt(var);
}

double adaptive_threshold(std::span<const double> max_probs, ThresholdState& state) {
  double stat = threshold_statistic(max_probs);
  if (state.mode == ThresholdMode::Running) {
    state.running = state.running ? state.running_momentum * *state.running +
                                        (1.0 - state.running_momentum) * stat
                                  : stat;
    stat = *state.running;
  }
  state.delta = std::max(stat, 0.0);
  state.history.push_back(state.delta);
  return state.delta;
}

std::size_t GroundTruth::trusted_targets(std::size_t n_source) const {
  return static_cast<std::size_t>(std::count(mask.begin() + static_cast<std::ptrdiff_t>(n_source), mask.end(), true));
}

GroundTruth build_ground_truth(std::span<const Label> source_labels,
                               std::span<const Label> target_pseudo_labels,
                               std::span<const double> target_max_probs, double delta,
                               std::size_t classes) {
  if (target_max_probs.size() != target_pseudo_labels.size()) {
    throw std::invalid_argument("build_ground_truth: " + std::to_string(target_pseudo_labels.size()) +
                                " pseudo-labels but " + std::to_string(target_max_probs.size()) +
                                " confidences");
  }
  std::vector<Label> labels(source_labels.begin(), source_labels.end());
  labels.insert(labels.end(), target_pseudo_labels.begin(), target_pseudo_labels.end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("build_ground_truth: label " + std::to_string(labels[i]) + " at node " +
                              std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const std::size_t n = labels.size();
  const std::size_t ns = source_labels.size();
  GroundTruth gt;
  gt.t = Tensor::zeros({n, n});
  gt.mask.assign(n, true);
  for (std::size_t i = ns; i < n; ++i) gt.mask[i] = target_max_probs[i - ns] >= delta;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      gt.t.at(i, j) = labels[i] == labels[j] ? 1.0 : 0.0;
      if (i != j && gt.mask[i] && gt.mask[j]) gt.pair_indices.push_back(i * n + j);
    }
  return gt;
}

nlohmann::json graph_debug_record(const Tensor& a_hat, const GroundTruth& gt) {
  const std::size_t n = gt.nodes();
  nlohmann::json j;
  j["n"] = n;
  j["a_hat"] = a_hat.storage();
  j["t"] = gt.t.storage();
  j["mask"] = gt.mask;
  return j;
}

}  // namespace protoalign
