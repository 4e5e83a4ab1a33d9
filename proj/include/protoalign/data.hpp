#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protoalign/graph.hpp"
#include "protoalign/prototypes.hpp"
#include "protoalign/rng.hpp"
#include "protoalign/tensor.hpp"

namespace protoalign {

struct Dataset {
  Tensor x;                                // n x input_dim
  std::optional<std::vector<Label>> y;     // absent for unlabeled data
  Domain domain = Domain::Source;
  std::string provenance;

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  bool labeled() const { return y.has_value(); }
  /// Throws unless features are finite and labels lie in [0, classes).
  void validate(std::size_t classes) const;
};

struct DomainPair {
  Dataset source;
  Dataset target;
};

struct TwoMoonsSpec {
  std::size_t n_per_domain = 600;
  double noise = 0.1;
  double rotation_deg = 30.0;
  double translation_x = 0.0;
  double translation_y = 0.0;
  /// Fraction of samples in class 0; the remainder go to class 1.
  double class0_fraction = 0.5;
};

/// Two interleaving half-circles. The target comes from the same process,
/// rotated about the data centre (0.5, 0.25) and then translated. Class
/// counts are exact (stratified), sample order is shuffled.
DomainPair gen_two_moons_shift(const TwoMoonsSpec& spec, std::uint64_t seed);

struct BlobsSpec {
  std::size_t n_per_domain = 600;
  std::vector<std::vector<double>> means;                    // per class, each of length d
  std::vector<std::vector<std::vector<double>>> covariances;  // per class, d x d
  std::vector<std::vector<double>> shifts;                   // per class target mean shift (empty = none)
  double target_cov_scale = 1.0;
  std::vector<double> class_fractions;                       // empty = balanced
};

/// Per-class Gaussians; target means shifted per class and covariances scaled.
/// Throws on a covariance that is not symmetric positive semi-definite.
DomainPair gen_gaussian_blobs_shift(const BlobsSpec& spec, std::uint64_t seed);

/// Header `f0,...,f{d-1}[,label]`. Errors carry the 1-based line number.
Dataset load_features_csv(const std::filesystem::path& path, Domain domain, std::size_t classes);
void save_features_csv(const Dataset& data, const std::filesystem::path& path);

/// Exact per-class counts for `n` samples under `fractions` (largest remainder).
std::vector<std::size_t> stratified_counts(std::size_t n, const std::vector<double>& fractions);

/// Emits paired source/target index batches. Each domain is walked through a
/// fresh permutation per epoch; incomplete tail batches are dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t n_source, std::size_t n_target, std::size_t batch_size, std::uint64_t seed);

  struct Batch {
    std::vector<std::size_t> source;
    std::vector<std::size_t> target;
  };
  Batch next();
  std::size_t batch_size() const { return batch_size_; }

 private:
  struct Cursor {
    std::size_t n;
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    std::size_t epoch = 0;
  };
  std::vector<std::size_t> take(Cursor& c);

  std::size_t batch_size_;
  Rng rng_;
  Cursor source_;
  Cursor target_;
};

/// Rows of `data.x` at `indices`.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices);
std::vector<Label> gather(const std::vector<Label>& y, const std::vector<std::size_t>& indices);

}  // namespace protoalign
