#include "protoalign/net.hpp"

#include <cmath>
#include <string>

#include "protoalign/rng.hpp"

namespace protoalign {

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l = zeros(in, out);
  for (double& w : l.weight.values()) w = rng.uniform(-bound, bound);
  for (double& b : l.bias.values()) b = rng.uniform(-bound, bound);
  return l;
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return Linear{Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Var linear(const Var& x, const LinearVars& layer) {
  if (x.cols() != layer.weight.rows()) {
    throw shape_error("linear", x.shape(), layer.weight.shape());
  }
  return add(matmul(x, layer.weight), layer.bias);
}

ModelParams ModelParams::init(const ModelDims& d, std::uint64_t seed) {
  if (d.input_dim == 0 || d.hidden_dim == 0 || d.feat_dim == 0 || d.affinity_hidden == 0 ||
      d.classes < 2) {
    throw std::invalid_argument("model dims must be positive with at least two classes");
  }
  Rng rng(seed);
  ModelParams p;
  p.dims = d;
  p.extractor_hidden = Linear::init(d.input_dim, d.hidden_dim, rng);
  p.extractor_out = Linear::init(d.hidden_dim, d.feat_dim, rng);
  p.source_classifier = Linear::init(d.feat_dim, d.classes, rng);
  p.affinity_hidden = Linear::init(d.feat_dim, d.affinity_hidden, rng);
  p.affinity_out = Linear::init(d.affinity_hidden, 1, rng);
  p.node_hidden = Linear::init(2 * d.feat_dim, d.feat_dim, rng);
  p.node_out = Linear::init(d.feat_dim, d.feat_dim, rng);
  p.graph_classifier = Linear::init(d.feat_dim, d.classes, rng);
  return p;
}

namespace {

template <typename Self, typename Fn>
void for_each_layer(Self& p, Fn&& fn) {
  fn("extractor_hidden", p.extractor_hidden);
  fn("extractor_out", p.extractor_out);
  fn("source_classifier", p.source_classifier);
  fn("affinity_hidden", p.affinity_hidden);
  fn("affinity_out", p.affinity_out);
  fn("node_hidden", p.node_hidden);
  fn("node_out", p.node_out);
  fn("graph_classifier", p.graph_classifier);
}

}  // namespace

std::vector<NamedParam> ModelParams::named_parameters() {
  std::vector<NamedParam> out;
  for_each_layer(*this, [&](const char* name, Linear& l) {
    out.push_back({std::string(name) + ".weight", &l.weight});
    out.push_back({std::string(name) + ".bias", &l.bias});
  });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for_each_layer(*this, [&](const char* name, const Linear& l) {
    out.emplace_back(std::string(name) + ".weight", &l.weight);
    out.emplace_back(std::string(name) + ".bias", &l.bias);
  });
  return out;
}

void ModelParams::zero_grad() {
  for (auto& p : named_parameters()) p.tensor->zero_grad();
}

ModelVars bind(Tape& tape, ModelParams& p) {
  auto b = [&](Linear& l) { return LinearVars{tape.parameter(l.weight), tape.parameter(l.bias)}; };
  return ModelVars{b(p.extractor_hidden), b(p.extractor_out), b(p.source_classifier),
                   b(p.affinity_hidden),  b(p.affinity_out),  b(p.node_hidden),
                   b(p.node_out),         b(p.graph_classifier)};
}

ModelVars bind_frozen(Tape& tape, const ModelParams& p) {
  auto b = [&](const Linear& l) {
    return LinearVars{tape.constant(l.weight), tape.constant(l.bias)};
  };
  return ModelVars{b(p.extractor_hidden), b(p.extractor_out), b(p.source_classifier),
                   b(p.affinity_hidden),  b(p.affinity_out),  b(p.node_hidden),
                   b(p.node_out),         b(p.graph_classifier)};
}

Var extract_features(const ModelVars& m, const Var& x) {
  if (x.shape().size() != 2 || x.cols() != m.extractor_hidden.weight.rows()) {
    throw shape_error("extract_features", x.shape(), m.extractor_hidden.weight.shape());
  }
  return linear(relu(linear(x, m.extractor_hidden)), m.extractor_out);
}

Var classify_source(const ModelVars& m, const Var& features) {
  if (features.shape().size() != 2 || features.cols() != m.source_classifier.weight.rows()) {
    throw shape_error("classify_source", features.shape(), m.source_classifier.weight.shape());
  }
  return linear(features, m.source_classifier);
}

Var affinity_scores(const ModelVars& m, const Var& nodes, bool keep_self_scores) {
  if (nodes.shape().size() != 2 || nodes.cols() != m.affinity_hidden.weight.rows()) {
    throw shape_error("affinity_scores", nodes.shape(), m.affinity_hidden.weight.shape());
  }
  const std::size_t n = nodes.rows();
  if (n == 0) throw std::invalid_argument("affinity_scores: empty node set");
  if (!nodes.value().all_finite()) throw std::domain_error("affinity_scores: non-finite node features");

  std::vector<std::size_t> left(n * n), right(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      left[i * n + j] = i;
      right[i * n + j] = j;
    }
  Var diff = abs(sub(gather_rows(nodes, left), gather_rows(nodes, right)));
  Var hidden = relu(linear(diff, m.affinity_hidden));
  Var scores = reshape(sigmoid(linear(hidden, m.affinity_out)), {n, n});
  if (keep_self_scores) return scores;
  Tensor off_diag = Tensor::filled({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diag.at(i, i) = 0.0;
  return mul(scores, nodes.tape()->constant(std::move(off_diag)));
}

Var node_update(const ModelVars& m, const Var& nodes, const Var& a_norm) {
  if (a_norm.shape().size() != 2 || a_norm.rows() != a_norm.cols() ||
      a_norm.cols() != nodes.rows()) {
    throw shape_error("node_update", a_norm.shape(), nodes.shape());
  }
  Var aggregated = matmul(a_norm, nodes);
  Var joined = concat(nodes, aggregated);
  if (joined.cols() != m.node_hidden.weight.rows()) {
    throw shape_error("node_update", joined.shape(), m.node_hidden.weight.shape());
  }
  return linear(relu(linear(joined, m.node_hidden)), m.node_out);
}

Var classify_graph(const ModelVars& m, const Var& f_gcn) {
  if (f_gcn.shape().size() != 2 || f_gcn.cols() != m.graph_classifier.weight.rows()) {
    throw shape_error("classify_graph", f_gcn.shape(), m.graph_classifier.weight.shape());
  }
  return linear(f_gcn, m.graph_classifier);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json tensor_json(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"shape", t.shape()}, {"values", t.storage()}};
}

}  // namespace

nlohmann::json to_json(const ModelParams& params) {
  nlohmann::json j;
  j["dims"] = {{"input_dim", params.dims.input_dim},
               {"hidden_dim", params.dims.hidden_dim},
               {"feat_dim", params.dims.feat_dim},
               {"affinity_hidden", params.dims.affinity_hidden},
               {"classes", params.dims.classes}};
  auto& arr = j["parameters"] = nlohmann::json::array();
  for (const auto& [name, t] : params.named_parameters()) arr.push_back(tensor_json(name, *t));
  return j;
}

ModelParams model_from_json(const nlohmann::json& j) {
  ModelDims d;
  const auto& dj = j.at("dims");
  d.input_dim = dj.at("input_dim").get<std::size_t>();
  d.hidden_dim = dj.at("hidden_dim").get<std::size_t>();
  d.feat_dim = dj.at("feat_dim").get<std::size_t>();
  d.affinity_hidden = dj.at("affinity_hidden").get<std::size_t>();
  d.classes = dj.at("classes").get<std::size_t>();
  ModelParams p = ModelParams::init(d, 0);
  const auto& arr = j.at("parameters");
  auto named = p.named_parameters();
  if (arr.size() != named.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(named.size()) +
                             " parameter tensors, found " + std::to_string(arr.size()));
  }
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& entry = arr[k];
    const auto name = entry.at("name").get<std::string>();
    if (name != named[k].name) {
      throw std::runtime_error("checkpoint: expected parameter '" + named[k].name + "', found '" +
                               name + "'");
    }
    Tensor loaded(entry.at("shape").get<Shape>(), entry.at("values").get<std::vector<double>>(), true);
    if (loaded.shape() != named[k].tensor->shape()) {
      throw shape_error(("checkpoint:" + name).c_str(), loaded.shape(), named[k].tensor->shape());
    }
    *named[k].tensor = std::move(loaded);
  }
  return p;
}

}  // namespace protoalign
