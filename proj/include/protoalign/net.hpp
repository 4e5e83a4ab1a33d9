#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "protoalign/autodiff.hpp"
#include "protoalign/optim.hpp"
#include "protoalign/tensor.hpp"

namespace protoalign {

struct ModelDims {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 32;
  std::size_t feat_dim = 16;
  std::size_t affinity_hidden = 16;
  std::size_t classes = 2;
};

class Rng;

/// Fully connected layer y = x W + b with W stored (in x out).
struct Linear {
  Tensor weight;
  Tensor bias;

  /// Uniform in +-1/sqrt(fan_in) for both weight and bias.
  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

struct LinearVars {
  Var weight;
  Var bias;
};

Var linear(const Var& x, const LinearVars& layer);

/// All trainable parameters: extractor F (two layers), source classifier C,
/// affinity network G_A (two layers, per node pair), node update G_N (two
/// layers) and graph classifier G_C. One graph layer only.
struct ModelParams {
  ModelDims dims;
  Linear extractor_hidden;
  Linear extractor_out;
  Linear source_classifier;
  Linear affinity_hidden;
  Linear affinity_out;
  Linear node_hidden;
  Linear node_out;
  Linear graph_classifier;

  static ModelParams init(const ModelDims& dims, std::uint64_t seed);
  std::vector<NamedParam> named_parameters();
  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
  void zero_grad();
};

struct ModelVars {
  LinearVars extractor_hidden;
  LinearVars extractor_out;
  LinearVars source_classifier;
  LinearVars affinity_hidden;
  LinearVars affinity_out;
  LinearVars node_hidden;
  LinearVars node_out;
  LinearVars graph_classifier;
};

/// Binds every parameter as a gradient-accumulating leaf.
ModelVars bind(Tape& tape, ModelParams& params);
/// Binds every parameter as a constant (evaluation).
ModelVars bind_frozen(Tape& tape, const ModelParams& params);

/// Row i is F(x_i): relu(x W1 + b1) W2 + b2.
Var extract_features(const ModelVars& m, const Var& x);
Var classify_source(const ModelVars& m, const Var& features);
/// a_ij = sigmoid(G_A(|v_i - v_j|)) for all ordered pairs; the diagonal is
/// zeroed unless `keep_self_scores`.
Var affinity_scores(const ModelVars& m, const Var& nodes, bool keep_self_scores = false);
/// v_i' = G_N([v_i, sum_j a_ij v_j]).
Var node_update(const ModelVars& m, const Var& nodes, const Var& a_norm);
Var classify_graph(const ModelVars& m, const Var& f_gcn);

nlohmann::json to_json(const ModelParams& params);
ModelParams model_from_json(const nlohmann::json& j);

}  // namespace protoalign
