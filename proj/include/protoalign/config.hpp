#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoalign/data.hpp"
#include "protoalign/graph.hpp"
#include "protoalign/losses.hpp"
#include "protoalign/net.hpp"

namespace protoalign {

enum class AlignLoss { ProNCE, InfoNCE, SemanticMatching };
enum class PrototypeFeatures { DomainBiased, Raw };
enum class PseudoLabelSource { SourceClassifier, GraphClassifier };
enum class Classifier { Auto, Source, Graph };

/// Which terms of the composite objective are active.
struct LossFlags {
  bool ce = true;
  bool mi = true;
  bool ce_gcn = true;
  bool bce = true;
  bool align = true;

  bool operator==(const LossFlags&) const = default;
};

struct DataConfig {
  std::string kind = "two_moons";  // two_moons | csv
  TwoMoonsSpec moons;
  std::string source_csv;
  std::string target_csv;
};

struct EarlyStop {
  bool enabled = true;
  std::size_t window = 200;
  double rel_tol = 1e-4;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t iterations = 2000;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double momentum = 0.9;
  bool anneal = true;

  LossWeights weights;
  double rho = 0.7;
  LossFlags losses;

  AlignLoss align = AlignLoss::ProNCE;
  PrototypeFeatures prototypes = PrototypeFeatures::DomainBiased;
  NegativePolicy negatives = NegativePolicy::BothDomains;
  bool differentiate_weights = false;
  PseudoLabelSource pseudo_labels = PseudoLabelSource::SourceClassifier;
  bool target_trust_filter = true;
  bool keep_self_scores = false;
  bool mi_on_graph = false;
  ThresholdMode threshold_mode = ThresholdMode::PerBatch;
  double threshold_momentum = 0.9;

  ModelDims model;
  DataConfig data;

  Classifier report = Classifier::Auto;
  std::size_t eval_batch = 32;
  bool eval_a_distance = true;

  EarlyStop early_stop;
  std::size_t checkpoint_every = 500;
  bool debug_graph = false;

  /// Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
  /// Whether this configuration needs the graph forward pass during training.
  bool needs_graph() const;
  /// Classifier whose target predictions are reported.
  Classifier reported_classifier() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Strict: every key must exist in the schema; missing keys take defaults.
TrainConfig config_from_json(const nlohmann::json& j);

/// Flattened "a.b.c" -> value view of a config document.
std::vector<std::pair<std::string, nlohmann::json>> flatten_config(const nlohmann::json& j);

/// Applies a "dotted.key=value" override. The value is parsed as JSON when
/// possible, otherwise taken as a string. Unknown keys and type changes throw.
void apply_override(nlohmann::json& doc, std::string_view assignment);

std::string to_string(AlignLoss v);
std::string to_string(PrototypeFeatures v);
std::string to_string(PseudoLabelSource v);
std::string to_string(Classifier v);
std::string to_string(NegativePolicy v);
std::string to_string(ThresholdMode v);

}  // namespace protoalign
