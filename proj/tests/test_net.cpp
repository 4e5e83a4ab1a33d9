#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "protoalign/graph.hpp"
#include "protoalign/net.hpp"
#include "protoalign/rng.hpp"

using namespace protoalign;

namespace {

// Closed-form parameter pattern shared with the golden values below, which
// were computed by a separate dense-matrix implementation.
ModelParams patterned_params() {
  const ModelDims dims{2, 4, 3, 3, 2};
  ModelParams p = ModelParams::init(dims, 0);
  const std::vector<Linear*> layers{&p.extractor_hidden, &p.extractor_out, &p.source_classifier,
                                    &p.affinity_hidden,  &p.affinity_out,  &p.node_hidden,
                                    &p.node_out,         &p.graph_classifier};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto w = layers[l]->weight.values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = 0.5 * std::sin(0.7 * k + 1.3 * l + 0.1);
    auto b = layers[l]->bias.values();
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = 0.1 * std::cos(0.9 * k + l);
  }
  return p;
}

Tensor golden_input() { return Tensor::matrix(3, 2, {0.3, -1.2, 1.5, 0.4, -0.7, 0.9}); }

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "entry " << i;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return Tensor::matrix(r, c, std::move(v));
}

std::vector<double> mlp_row(const Linear& a, const Linear& b, const std::vector<double>& x) {
  std::vector<double> h(a.out_dim());
  for (std::size_t j = 0; j < a.out_dim(); ++j) {
    double s = a.bias[j];
    for (std::size_t i = 0; i < a.in_dim(); ++i) s += x[i] * a.weight.at(i, j);
    h[j] = std::max(s, 0.0);
  }
  std::vector<double> out(b.out_dim());
  for (std::size_t j = 0; j < b.out_dim(); ++j) {
    double s = b.bias[j];
    for (std::size_t i = 0; i < b.in_dim(); ++i) s += h[i] * b.weight.at(i, j);
    out[j] = s;
  }
  return out;
}

}  // namespace

TEST(Net, FeaturesMatchGoldenVector) {
  const ModelParams p = patterned_params();
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Var f = extract_features(m, tape.constant(golden_input()));
  expect_values(f.value(),
                {0.06365228002516715, 0.042709162319109255, 0.010940354634480107, 0.06307508511767966,
                 -0.016101140139331057, -0.07844365119238417, 0.13913391677412343, 0.04221802102106873,
                 -0.06529257328379445},
                1e-12);
  expect_values(classify_source(m, f).value(),
                {-0.04934622741239534, -0.12695589516129113, 0.0061240043265820415, -0.09387634384510957,
                 -0.006122913743019813, -0.13318852246269758},
                1e-12);
}

TEST(Net, GraphPathMatchesGoldenVector) {
  const ModelParams p = patterned_params();
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Var f = extract_features(m, tape.constant(golden_input()));
  const Var a_hat = affinity_scores(m, f);
  expect_values(a_hat.value(),
                {0.0, 0.48509638801672095, 0.48366472510257125, 0.48509638801672095, 0.0, 0.48394618025480163,
                 0.48366472510257125, 0.48394618025480163, 0.0},
                1e-12);
  const Var g = node_update(m, f, normalize_affinity(a_hat));
  expect_values(g.value(),
                {0.06214408781709952, 0.050339313715261555, -0.008508449439583697, 0.054738859027733316,
                 0.04355717301028905, -0.011477755312742113, 0.056173396100016364, 0.041043042585139806,
                 -0.016758118412004412},
                1e-12);
  expect_values(classify_graph(m, g).value(),
                {0.06137263168510464, -0.04339592414476494, 0.0644731772133598, -0.03866450210588465,
                 0.06720968793543203, -0.03814517057304325},
                1e-12);
}

TEST(Net, ZeroFinalLayerGivesZeroFeatures) {
  ModelParams p = ModelParams::init(ModelDims{}, 3);
  p.extractor_out = Linear::zeros(p.dims.hidden_dim, p.dims.feat_dim);
  Rng rng(1);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Var f = extract_features(m, tape.constant(random_matrix(5, 2, rng)));
  for (double v : f.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Net, EmptyBatchGivesEmptyOutputs) {
  const ModelParams p = ModelParams::init(ModelDims{}, 3);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Var f = extract_features(m, tape.constant(Tensor::zeros({0, 2})));
  EXPECT_EQ(f.shape(), (Shape{0, p.dims.feat_dim}));
  EXPECT_EQ(classify_source(m, f).shape(), (Shape{0, p.dims.classes}));
}

TEST(Net, WidthMismatchThrows) {
  const ModelParams p = ModelParams::init(ModelDims{}, 3);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  EXPECT_THROW(extract_features(m, tape.constant(Tensor::zeros({2, 3}))), ShapeError);
  EXPECT_THROW(classify_source(m, tape.constant(Tensor::zeros({2, 5}))), ShapeError);
  EXPECT_THROW(node_update(m, tape.constant(Tensor::zeros({2, 16})), tape.constant(Tensor::identity(3))),
               ShapeError);
}

TEST(Net, ZeroClassifierIsUniform) {
  ModelParams p = ModelParams::init(ModelDims{}, 3);
  p.source_classifier = Linear::zeros(p.dims.feat_dim, p.dims.classes);
  p.graph_classifier = Linear::zeros(p.dims.feat_dim, p.dims.classes);
  Rng rng(2);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Var f = tape.constant(random_matrix(4, p.dims.feat_dim, rng));
  for (double v : softmax(classify_source(m, f)).value().values()) EXPECT_DOUBLE_EQ(v, 0.5);
  for (double v : softmax(classify_graph(m, f)).value().values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Net, IdentityLikeClassifierPicksFirstClass) {
  ModelParams p = ModelParams::init(ModelDims{2, 4, 2, 3, 2}, 0);
  p.source_classifier.weight = Tensor::identity(2);
  p.source_classifier.bias = Tensor::vector({0.0, 0.0});
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Tensor logits = classify_source(m, tape.constant(Tensor::matrix(1, 2, {1.0, 0.0}))).value();
  EXPECT_GT(logits[0], logits[1]);
}

TEST(Net, ZeroAffinityNetworkGivesHalfOffDiagonal) {
  ModelParams p = ModelParams::init(ModelDims{}, 4);
  p.affinity_hidden = Linear::zeros(p.dims.feat_dim, p.dims.affinity_hidden);
  p.affinity_out = Linear::zeros(p.dims.affinity_hidden, 1);
  Rng rng(5);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Tensor a = affinity_scores(m, tape.constant(random_matrix(4, p.dims.feat_dim, rng))).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.at(i, j), i == j ? 0.0 : 0.5);
}

TEST(Net, AffinityIsSymmetricAndMatchesPairLoop) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams p = ModelParams::init(ModelDims{}, seed);
    Rng rng(seed + 10);
    const Tensor v = random_matrix(3, p.dims.feat_dim, rng);
    Tape tape;
    const ModelVars m = bind_frozen(tape, p);
    const Tensor a = affinity_scores(m, tape.constant(v), true).value();
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<double> diff(p.dims.feat_dim);
        for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = std::abs(v.at(i, k) - v.at(j, k));
        const double expected = 1.0 / (1.0 + std::exp(-mlp_row(p.affinity_hidden, p.affinity_out, diff)[0]));
        EXPECT_NEAR(a.at(i, j), expected, 1e-14);
        EXPECT_EQ(a.at(i, j), a.at(j, i));
      }
    }
  }
}

TEST(Net, AffinityRejectsBadInput) {
  const ModelParams p = ModelParams::init(ModelDims{}, 0);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  EXPECT_THROW(affinity_scores(m, tape.constant(Tensor::zeros({0, p.dims.feat_dim}))), std::invalid_argument);
  Tensor bad = Tensor::zeros({2, p.dims.feat_dim});
  bad[3] = std::nan("");
  EXPECT_THROW(affinity_scores(m, tape.constant(bad)), std::domain_error);
}

TEST(Net, NodeUpdateMatchesDoubleLoop) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams p = ModelParams::init(ModelDims{}, seed);
    Rng rng(seed + 20);
    const std::size_t n = 6;
    const std::size_t d = p.dims.feat_dim;
    const Tensor v = random_matrix(n, d, rng);
    const Tensor a = random_matrix(n, n, rng);
    Tape tape;
    const ModelVars m = bind_frozen(tape, p);
    const Tensor out = node_update(m, tape.constant(v), tape.constant(a)).value();
    ASSERT_EQ(out.shape(), (Shape{n, d}));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> joined(2 * d, 0.0);
      for (std::size_t k = 0; k < d; ++k) {
        joined[k] = v.at(i, k);
        for (std::size_t j = 0; j < n; ++j) joined[d + k] += a.at(i, j) * v.at(j, k);
      }
      const std::vector<double> expected = mlp_row(p.node_hidden, p.node_out, joined);
      for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(out.at(i, k), expected[k], 1e-12);
    }
  }
}

TEST(Net, IdentityAggregationDuplicatesNode) {
  const ModelParams p = ModelParams::init(ModelDims{}, 9);
  Rng rng(9);
  const Tensor v = random_matrix(4, p.dims.feat_dim, rng);
  Tape tape;
  const ModelVars m = bind_frozen(tape, p);
  const Tensor out = node_update(m, tape.constant(v), tape.constant(Tensor::identity(4))).value();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> joined;
    for (std::size_t k = 0; k < p.dims.feat_dim; ++k) joined.push_back(v.at(i, k));
    for (std::size_t k = 0; k < p.dims.feat_dim; ++k) joined.push_back(v.at(i, k));
    const auto expected = mlp_row(p.node_hidden, p.node_out, joined);
    for (std::size_t k = 0; k < p.dims.feat_dim; ++k) EXPECT_NEAR(out.at(i, k), expected[k], 1e-13);
  }
}

TEST(Net, BatchPermutationEquivariance) {
  const ModelParams p = ModelParams::init(ModelDims{}, 11);
  Rng rng(11);
  const std::size_t n = 7;
  const Tensor x = random_matrix(n, 2, rng);
  const std::vector<std::size_t> perm = rng.permutation(n);
  auto run = [&](const Tensor& input) {
    Tape tape;
    const ModelVars m = bind_frozen(tape, p);
    const Var f = extract_features(m, tape.constant(input));
    const Var g = node_update(m, f, normalize_affinity(affinity_scores(m, f)));
    return std::pair{f.value(), g.value()};
  };
  Tensor permuted = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 2; ++k) permuted.at(i, k) = x.at(perm[i], k);
  const auto [f, g] = run(x);
  const auto [fp, gp] = run(permuted);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < p.dims.feat_dim; ++k) {
      EXPECT_EQ(fp.at(i, k), f.at(perm[i], k));
      EXPECT_NEAR(gp.at(i, k), g.at(perm[i], k), 1e-14);
    }
  }
}

TEST(Net, CompositeForwardPassesGradientCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ModelParams p = ModelParams::init(ModelDims{2, 5, 4, 3, 2}, seed);
    Rng rng(seed + 30);
    const Tensor x = random_matrix(5, 2, rng);
    // Differentiate with respect to the input; every network sits on the path.
    const ScalarFn f = [&](Tape& tape, const Var& input) {
      const ModelVars m = bind_frozen(tape, p);
      const Var feat = extract_features(m, input);
      const Var g = node_update(m, feat, normalize_affinity(affinity_scores(m, feat)));
      return add(sum(mul(softmax(classify_graph(m, g)), classify_graph(m, g))),
                 sum(softmax(classify_source(m, feat))));
    };
    EXPECT_LE(gradient_check(f, x), 1e-4);
  }
}

TEST(Net, EveryParameterReceivesGradient) {
  ModelParams p = ModelParams::init(ModelDims{}, 1);
  Rng rng(1);
  const Tensor x = random_matrix(6, 2, rng);
  Tape tape;
  const ModelVars m = bind(tape, p);
  const Var f = extract_features(m, tape.constant(x));
  const Var g = node_update(m, f, normalize_affinity(affinity_scores(m, f)));
  tape.backward(add(sum(classify_source(m, f)), sum(mul(classify_graph(m, g), classify_graph(m, g)))));
  for (const NamedParam& np : p.named_parameters()) EXPECT_TRUE(np.tensor->grad().has_value()) << np.name;
}

TEST(Net, SingleGraphLayerKeepsFeatureWidth) {
  const ModelParams p = ModelParams::init(ModelDims{}, 0);
  EXPECT_EQ(p.node_hidden.in_dim(), 2 * p.dims.feat_dim);
  EXPECT_EQ(p.node_out.out_dim(), p.dims.feat_dim);
  EXPECT_EQ(p.named_parameters().size(), 16u);
}

TEST(Net, InitIsSeededAndBounded) {
  const ModelParams a = ModelParams::init(ModelDims{}, 42);
  const ModelParams b = ModelParams::init(ModelDims{}, 42);
  const ModelParams c = ModelParams::init(ModelDims{}, 43);
  EXPECT_EQ(a.extractor_hidden.weight.storage(), b.extractor_hidden.weight.storage());
  EXPECT_NE(a.extractor_hidden.weight.storage(), c.extractor_hidden.weight.storage());
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.dims.hidden_dim));
  for (double w : a.extractor_out.weight.values()) EXPECT_LE(std::abs(w), bound);
}

TEST(Net, JsonRoundTripIsExact) {
  const ModelParams p = ModelParams::init(ModelDims{}, 77);
  const ModelParams q = model_from_json(nlohmann::json::parse(to_json(p).dump()));
  const auto a = p.named_parameters();
  const auto b = q.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second->shape(), b[i].second->shape());
    EXPECT_EQ(a[i].second->storage(), b[i].second->storage());
  }
}

TEST(Net, JsonRejectsWrongShapes) {
  nlohmann::json j = to_json(ModelParams::init(ModelDims{}, 1));
  j["parameters"][0]["shape"] = {3, 3};
  EXPECT_ANY_THROW(model_from_json(j));
  nlohmann::json k = to_json(ModelParams::init(ModelDims{}, 1));
  k["parameters"][1]["name"] = "mystery";
  EXPECT_ANY_THROW(model_from_json(k));
}
