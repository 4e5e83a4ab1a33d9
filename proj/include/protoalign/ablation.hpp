#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protoalign/config.hpp"
#include "protoalign/engine.hpp"

namespace protoalign {

/// One row of an ablation table: the active loss terms plus method variants.
/// Unset fields keep the base configuration's value.
struct AblationRow {
  std::string name;
  LossFlags losses;
  std::optional<AlignLoss> align;
  std::optional<PrototypeFeatures> prototypes;
  std::optional<PseudoLabelSource> pseudo_labels;
  std::optional<Classifier> report;

  TrainConfig apply(const TrainConfig& base) const;
};

/// Loss-subset rows: source CE alone, plus MI, plus each graph and alignment
/// term, pseudo-labels from G_C, and the full model read from C and from G_C.
std::vector<AblationRow> loss_subset_rows();
/// Alignment loss (semantic matching, InfoNCE, ProNCE) crossed with raw and
/// domain-biased prototypes on the full objective.
std::vector<AblationRow> alignment_rows();
/// Preset by name ("loss-subsets" or "alignment"); throws on anything else.
std::vector<AblationRow> preset_rows(const std::string& name);

struct AblationCell {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
};

struct AblationResult {
  AblationRow row;
  TrainConfig config;               // seed of the first run
  std::vector<RunSummary> runs;     // one per seed, in seed order
  AblationCell accuracy;            // reported classifier on the target set
  AblationCell target_c;
  AblationCell target_gc;
  std::optional<AblationCell> a_distance;
};

struct AblationOptions {
  std::size_t seeds = 1;
  std::size_t threads = 1;
};

/// Trains every row for seeds base.seed, base.seed + 1, ... (paired across
/// rows). All row configs are validated before any training starts. Rows that
/// differ only in the reported classifier share their runs. Runs execute on
/// `threads` share-nothing workers; results do not depend on the thread count.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const DomainPair* data,
                                         const std::vector<AblationRow>& rows, const AblationOptions& options);

AblationCell summarize(const std::vector<double>& values);

/// CSV with one line per row: flags, variants, seed count and mean/std of the
/// reported, C and G_C target accuracies and of the A-distance.
std::string ablation_csv(const std::vector<AblationResult>& results);

}  // namespace protoalign
