#pragma once

#include <span>
#include <vector>

#include "protoalign/autodiff.hpp"
#include "protoalign/graph.hpp"
#include "protoalign/prototypes.hpp"

namespace protoalign {

struct LossWeights {
  double lambda_gcn = 0.3;  // graph-classifier cross-entropy
  double lambda_bce = 1.0;  // affinity supervision
  double lambda_mi = 0.1;   // mutual information
  double alpha = 10.0;      // ramp steepness of the contrastive weight
  double tau = 0.05;        // temperature
};

struct LossBreakdown {
  double ce = 0.0;
  double ce_gcn = 0.0;
  double bce = 0.0;
  double mi = 0.0;
  double pronce = 0.0;  // whichever prototype alignment loss is active
  double total = 0.0;
  double gamma = 0.0;
};

/// Mean over rows of -log softmax(logits)[label], probabilities clamped at 1e-12.
Var cross_entropy(const Var& logits, std::span<const Label> labels);

struct BceResult {
  Var loss;
  bool empty = false;  // no trusted pair; loss is a constant 0
};

/// Mean binary cross-entropy between affinity scores and the supervision
/// matrix over `pair_indices` (flat i*n + j). Scores clamped to
/// [1e-12, 1 - 1e-12]. Negated so minimization maximizes likelihood.
BceResult bce_affinity(const Var& a_hat, const Tensor& t, std::span<const std::size_t> pair_indices);

/// 1 - u.v / (|u| |v|). Throws on a zero vector.
double cosine_distance(std::span<const double> u, std::span<const double> v);
double cosine_similarity(std::span<const double> u, std::span<const double> v);

enum class NegativePolicy { BothDomains, CrossOnly };

struct ContrastOptions {
  double tau = 0.05;
  NegativePolicy negatives = NegativePolicy::BothDomains;
  /// Differentiate through the hard-negative weight w = cos(c, c-). Off by
  /// default: w is a coefficient.
  bool differentiate_weights = false;
};

struct ContrastResult {
  Var loss;
  bool skipped = false;  // fewer than two classes present in both domains
  std::size_t anchors = 0;
};

/// Per-anchor ProNCE term log(sum_neg exp(w * phi_neg / tau)) - phi_pos / tau.
/// The loss is minus the mean of this term over anchors.
double pronce_anchor_term(double phi_pos, std::span<const double> phi_neg, std::span<const double> w_neg,
                          double tau);

/// Prototype-level contrastive loss with cosine-weighted hard negatives. Every
/// available prototype in either bank is an anchor when its class is present
/// in the other bank; the positive is that same-class prototype, negatives are
/// all other-class prototypes (in both banks, or the other bank only).
ContrastResult pronce(const PrototypeVars& source, const PrototypeVars& target,
                      const ContrastOptions& options = {});

/// InfoNCE over the same anchor/positive/negative selection, on l2-normalized
/// prototypes; averaged over anchors.
ContrastResult infonce(const PrototypeVars& source, const PrototypeVars& target,
                       const ContrastOptions& options = {});

/// Mean over classes present in both banks of cosine_distance(c_s^k, c_t^k).
ContrastResult sm_loss(const PrototypeVars& source, const PrototypeVars& target);

/// sum_k Pbar_k log Pbar_k - (1/m) sum_i sum_k P_ik log P_ik over softmax rows.
Var mi_loss(const Var& probs);

/// 2 / (1 + exp(-alpha p)) - 1.
double gamma_schedule(double progress, double alpha = 10.0);

struct LossComponents {
  double ce = 0.0;
  double ce_gcn = 0.0;
  double bce = 0.0;
  double mi = 0.0;
  double pronce = 0.0;
};

/// total = ce + l1 ce_gcn + l2 bce + l3 mi + gamma(p) pronce.
/// Throws naming the first non-finite component.
LossBreakdown total_loss(const LossComponents& c, const LossWeights& w, double progress);

}  // namespace protoalign
