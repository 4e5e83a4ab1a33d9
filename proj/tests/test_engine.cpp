#include <cmath>

#include <gtest/gtest.h>

#include "protoalign/engine.hpp"

using namespace protoalign;

namespace {

TrainConfig small_config(std::size_t iterations = 40) {
  TrainConfig c;
  c.iterations = iterations;
  c.data.moons.n_per_domain = 200;
  c.eval_a_distance = false;
  c.early_stop.enabled = false;
  return c;
}

TrainConfig source_only(std::size_t iterations) {
  TrainConfig c = small_config(iterations);
  c.losses = {true, false, false, false, false};
  return c;
}

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

struct Dense {
  Matrix w;
  std::vector<double> b;
  Matrix vw;
  std::vector<double> vb;
};

Dense dense_of(const Linear& l) {
  Dense d{to_matrix(l.weight), std::vector<double>(l.bias.values().begin(), l.bias.values().end()), {}, {}};
  d.vw.assign(d.w.size(), std::vector<double>(d.w[0].size(), 0.0));
  d.vb.assign(d.b.size(), 0.0);
  return d;
}

Matrix forward(const Dense& d, const Matrix& x) {
  Matrix y(x.size(), d.b);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < d.w.size(); ++k)
      for (std::size_t j = 0; j < d.b.size(); ++j) y[i][j] += x[i][k] * d.w[k][j];
  return y;
}

// dy -> dx, with the parameter gradient applied through heavy-ball momentum.
Matrix backward_and_step(Dense& d, const Matrix& x, const Matrix& dy, double lr, double mu) {
  const std::size_t in = d.w.size(), out = d.b.size();
  Matrix dx(x.size(), std::vector<double>(in, 0.0));
  Matrix gw(in, std::vector<double>(out, 0.0));
  std::vector<double> gb(out, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < in; ++k)
      for (std::size_t j = 0; j < out; ++j) {
        gw[k][j] += x[i][k] * dy[i][j];
        dx[i][k] += dy[i][j] * d.w[k][j];
      }
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out; ++j) gb[j] += dy[i][j];
  for (std::size_t k = 0; k < in; ++k)
    for (std::size_t j = 0; j < out; ++j) {
      d.vw[k][j] = mu * d.vw[k][j] + gw[k][j];
      d.w[k][j] -= lr * d.vw[k][j];
    }
  for (std::size_t j = 0; j < out; ++j) {
    d.vb[j] = mu * d.vb[j] + gb[j];
    d.b[j] -= lr * d.vb[j];
  }
  return dx;
}

// Plain-loop source-only training: two-layer extractor, linear classifier,
// mean cross-entropy, momentum SGD with the annealed step size.
struct SourceOnlyOracle {
  Dense l1, l2, cls;
  std::vector<double> losses;

  void run(const TrainConfig& c, const DomainPair& data) {
    const SeedPlan seeds = SeedPlan::from(c.seed);
    const ModelParams init = ModelParams::init(c.model, seeds.init);
    l1 = dense_of(init.extractor_hidden);
    l2 = dense_of(init.extractor_out);
    cls = dense_of(init.source_classifier);
    BatchSampler sampler(data.source.size(), data.target.size(), c.batch_size, seeds.sampler);
    for (std::size_t it = 0; it < c.iterations; ++it) {
      const double p = static_cast<double>(it) / static_cast<double>(c.iterations);
      const double lr = c.lr * std::pow(1.0 + 10.0 * p, -0.75);
      const auto batch = sampler.next();
      const Matrix x = to_matrix(gather(data.source.x, batch.source));
      const std::vector<Label> y = gather(*data.source.y, batch.source);
      const double n = static_cast<double>(x.size());

      Matrix pre = forward(l1, x);
      Matrix h = pre;
      for (auto& row : h)
        for (double& v : row) v = std::max(v, 0.0);
      const Matrix f = forward(l2, h);
      const Matrix z = forward(cls, f);
      Matrix dz = z;
      double loss = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double top = *std::max_element(z[i].begin(), z[i].end());
        double total = 0.0;
        for (double v : z[i]) total += std::exp(v - top);
        for (std::size_t k = 0; k < z[i].size(); ++k) {
          const double prob = std::exp(z[i][k] - top) / total;
          dz[i][k] = (prob - (static_cast<Label>(k) == y[i] ? 1.0 : 0.0)) / n;
          if (static_cast<Label>(k) == y[i]) loss -= std::log(prob) / n;
        }
      }
      losses.push_back(loss);
      const Matrix df = backward_and_step(cls, f, dz, lr, c.momentum);
      Matrix dh = backward_and_step(l2, h, df, lr, c.momentum);
      for (std::size_t i = 0; i < dh.size(); ++i)
        for (std::size_t j = 0; j < dh[i].size(); ++j)
          if (pre[i][j] <= 0.0) dh[i][j] = 0.0;
      backward_and_step(l1, x, dh, lr, c.momentum);
    }
  }
};

double max_rel_diff(const Matrix& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      worst = std::max(worst, std::abs(a[i][j] - b.at(i, j)) / std::max(1.0, std::abs(b.at(i, j))));
  return worst;
}

ModelParams threshold_model() {
  // C predicts class 1 exactly when x0 > 0.
  ModelParams p;
  p.dims = ModelDims{2, 2, 2, 2, 2};
  p.extractor_hidden = Linear::zeros(2, 2);
  p.extractor_hidden.weight.at(0, 0) = 1.0;
  p.extractor_hidden.weight.at(0, 1) = -1.0;
  p.extractor_out = Linear::zeros(2, 2);
  p.extractor_out.weight.at(0, 0) = p.extractor_out.weight.at(1, 1) = 1.0;
  p.source_classifier = Linear::zeros(2, 2);
  p.source_classifier.weight.at(0, 0) = -1.0;
  p.source_classifier.weight.at(0, 1) = 1.0;
  p.source_classifier.weight.at(1, 0) = 1.0;
  p.source_classifier.weight.at(1, 1) = -1.0;
  p.affinity_hidden = Linear::zeros(2, 2);
  p.affinity_out = Linear::zeros(2, 1);
  p.node_hidden = Linear::zeros(4, 2);
  p.node_out = Linear::zeros(2, 2);
  p.graph_classifier = Linear::zeros(2, 2);
  p.graph_classifier.bias[1] = 1.0;
  return p;
}

Dataset signed_dataset(std::size_t n) {
  Dataset d;
  d.x = Tensor::zeros({n, 2});
  d.y.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    d.x.at(i, 0) = (i % 3 == 0 ? -1.0 : 1.0) * (0.1 + static_cast<double>(i));
    d.x.at(i, 1) = 0.5;
    d.y->push_back(d.x.at(i, 0) > 0 ? 1 : 0);
  }
  return d;
}

}  // namespace

TEST(Train, SourceOnlyMatchesPlainLoopOracle) {
  const TrainConfig c = source_only(60);
  const DomainPair data = make_data(c);
  const RunResult run = train(c, data);
  SourceOnlyOracle oracle;
  oracle.run(c, data);

  ASSERT_EQ(run.records.size(), oracle.losses.size());
  for (std::size_t i = 0; i < run.records.size(); ++i) EXPECT_NEAR(run.records[i].losses.ce, oracle.losses[i], 1e-12);
  EXPECT_LE(max_rel_diff(oracle.l1.w, run.params.extractor_hidden.weight), 1e-10);
  EXPECT_LE(max_rel_diff(oracle.l2.w, run.params.extractor_out.weight), 1e-10);
  EXPECT_LE(max_rel_diff(oracle.cls.w, run.params.source_classifier.weight), 1e-10);
}

TEST(Train, UnusedNetworksStayAtInitializationWhenSourceOnly) {
  const TrainConfig c = source_only(20);
  const RunResult run = train(c, make_data(c));
  const ModelParams init = ModelParams::init(c.model, SeedPlan::from(c.seed).init);
  EXPECT_EQ(run.params.graph_classifier.weight.storage(), init.graph_classifier.weight.storage());
  EXPECT_EQ(run.params.affinity_out.weight.storage(), init.affinity_out.weight.storage());
}

TEST(Train, SameSeedIsBitIdentical) {
  const TrainConfig c = small_config(30);
  const DomainPair data = make_data(c);
  const RunResult a = train(c, data);
  const RunResult b = train(c, data);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(to_json(a.records[i]).dump(), to_json(b.records[i]).dump());
  EXPECT_EQ(to_json(a.params).dump(), to_json(b.params).dump());
  EXPECT_EQ(a.summary.target_gc->accuracy, b.summary.target_gc->accuracy);

  TrainConfig other = c;
  other.seed = 1;
  EXPECT_NE(to_json(train(other, make_data(other)).params).dump(), to_json(a.params).dump());
}

TEST(Train, RecordsDecomposeAndFollowSchedules) {
  const TrainConfig c = small_config(50);
  const RunResult run = train(c, make_data(c));
  const LossWeights& w = c.weights;
  for (const IterationRecord& r : run.records) {
    const LossBreakdown& l = r.losses;
    const double gamma = gamma_schedule(r.progress, w.alpha);
    EXPECT_EQ(l.gamma, gamma);
    EXPECT_NEAR(l.total, l.ce + w.lambda_gcn * l.ce_gcn + w.lambda_bce * l.bce + w.lambda_mi * l.mi + gamma * l.pronce,
                1e-12);
    EXPECT_EQ(r.progress, static_cast<double>(r.iteration) / 50.0);
    EXPECT_NEAR(r.lr, annealed_learning_rate(c.lr, r.progress), 1e-15);
    EXPECT_GE(r.delta, 0.0);
    EXPECT_LE(r.trusted_targets, c.batch_size);
    EXPECT_TRUE(std::isfinite(l.total));
  }
  EXPECT_EQ(run.records.front().losses.gamma, 0.0);
}

TEST(Train, DisabledTermsReportZero) {
  TrainConfig c = small_config(15);
  c.losses = {true, false, true, false, false};
  const RunResult run = train(c, make_data(c));
  for (const IterationRecord& r : run.records) {
    EXPECT_EQ(r.losses.mi, 0.0);
    EXPECT_EQ(r.losses.bce, 0.0);
    EXPECT_EQ(r.losses.pronce, 0.0);
    EXPECT_GT(r.losses.ce_gcn, 0.0);
  }
}

TEST(Train, AlternativeAlignmentLossesRun) {
  for (AlignLoss a : {AlignLoss::InfoNCE, AlignLoss::SemanticMatching}) {
    TrainConfig c = small_config(15);
    c.align = a;
    c.losses.mi = false;
    const RunResult run = train(c, make_data(c));
    EXPECT_FALSE(run.summary.diverged);
    bool any = false;
    for (const IterationRecord& r : run.records) any = any || r.losses.pronce != 0.0;
    EXPECT_TRUE(any) << to_string(a);
  }
}

TEST(Train, EarlyStopOnPlateau) {
  TrainConfig c = source_only(400);
  c.early_stop = {true, 5, 10.0};
  const RunResult run = train(c, make_data(c));
  EXPECT_TRUE(run.summary.early_stopped);
  EXPECT_EQ(run.summary.iterations_run, 10u);
  EXPECT_EQ(run.records.size(), 10u);
}

TEST(Train, CheckpointsFireOnScheduleAndRoundTrip) {
  TrainConfig c = small_config(25);
  c.checkpoint_every = 10;
  std::vector<std::size_t> seen;
  nlohmann::json last;
  TrainObserver obs;
  obs.on_checkpoint = [&](std::size_t it, const ModelParams& p, const PrototypeBank& b) {
    seen.push_back(it);
    last = nlohmann::json::parse(checkpoint_to_json(p, b, it).dump());
  };
  const RunResult run = train(c, make_data(c), obs);
  EXPECT_EQ(seen, (std::vector<std::size_t>{10, 20, 25}));
  const Checkpoint back = checkpoint_from_json(last);
  EXPECT_EQ(back.iteration, 25u);
  EXPECT_EQ(to_json(back.params), to_json(run.params));
  EXPECT_EQ(to_json(back.bank), to_json(run.bank));
  EXPECT_THROW(checkpoint_from_json(nlohmann::json::object()), std::invalid_argument);
}

TEST(Train, DivergenceStopsWithLastGoodState) {
  // A step size this large leaves finite weights after the first update that
  // overflow the next forward pass.
  TrainConfig c = small_config(200);
  c.lr = 1e200;
  c.anneal = false;
  const DomainPair data = make_data(c);
  std::size_t diverged_at = 0;
  bool called = false;
  bool finite = false;
  TrainObserver obs;
  obs.on_divergence = [&](std::size_t it, const ModelParams& p, const PrototypeBank&) {
    called = true;
    diverged_at = it;
    finite = extract(p, data.source.x).all_finite();
  };
  const RunResult run = train(c, data, obs);
  EXPECT_TRUE(run.summary.diverged);
  EXPECT_TRUE(called);
  EXPECT_TRUE(finite);
  EXPECT_EQ(run.summary.iterations_run, diverged_at + 1);
  EXPECT_FALSE(run.summary.target_c.has_value());
  EXPECT_FALSE(run.summary.divergence.empty());
  for (const IterationRecord& r : run.records) EXPECT_TRUE(std::isfinite(r.losses.total));
}

TEST(Train, RejectsMismatchedData) {
  const TrainConfig c = small_config(5);
  DomainPair data = make_data(c);
  data.source.y.reset();
  EXPECT_THROW(train(c, data), std::invalid_argument);
  TrainConfig big = c;
  big.batch_size = 500;
  EXPECT_THROW(train(big, make_data(c)), std::invalid_argument);
}

TEST(Train, NoShiftSourceOnlyGeneralizes) {
  TrainConfig c = source_only(2000);
  c.data.moons.rotation_deg = 0.0;
  c.data.moons.n_per_domain = 600;
  const RunResult run = train(c, make_data(c));
  EXPECT_LT(std::abs(run.summary.source_accuracy - run.summary.target_c->accuracy), 0.05);
}

TEST(Evaluate, PerfectAndConstantPredictors) {
  const ModelParams p = threshold_model();
  const Dataset d = signed_dataset(10);
  const EvalOptions opt{4, 3, false};
  const EvalResult c = evaluate(p, d, Classifier::Source, opt);
  EXPECT_EQ(c.accuracy, 1.0);
  EXPECT_EQ(c.confusion, (std::vector<std::vector<std::size_t>>{{4, 0}, {0, 6}}));

  // Zero node update and a biased G_C: every node is predicted as class 1,
  // including those in the short final chunk.
  const EvalResult g = evaluate(p, d, Classifier::Graph, opt);
  EXPECT_EQ(g.accuracy, 0.6);
  EXPECT_EQ(g.confusion, (std::vector<std::vector<std::size_t>>{{0, 4}, {0, 6}}));
  EXPECT_THROW(evaluate(p, d, Classifier::Auto, opt), std::invalid_argument);
  Dataset unlabeled = d;
  unlabeled.y.reset();
  EXPECT_THROW(evaluate(p, unlabeled, Classifier::Source, opt), std::invalid_argument);
}

TEST(Evaluate, GraphPredictionsDependOnlyOnSeedAndBatch) {
  TrainConfig c = small_config(30);
  const DomainPair data = make_data(c);
  const RunResult run = train(c, data);
  const EvalOptions opt{32, 5, false};
  EXPECT_EQ(predict(run.params, data.target.x, Classifier::Graph, opt),
            predict(run.params, data.target.x, Classifier::Graph, opt));
  EXPECT_EQ(predict(run.params, data.target.x, Classifier::Graph, EvalOptions{200, 1, false}),
            predict(run.params, data.target.x, Classifier::Graph, EvalOptions{200, 2, false}));
}

TEST(ADistance, FromError) {
  EXPECT_EQ(a_distance_from_error(0.0), 2.0);
  EXPECT_EQ(a_distance_from_error(0.5), 0.0);
  EXPECT_EQ(a_distance_from_error(0.25), 1.0);
  EXPECT_EQ(a_distance_from_error(1.0), -2.0);
}

TEST(ADistance, SeparatedAndIdenticalDomains) {
  Rng rng(1);
  Tensor a = Tensor::zeros({400, 3}), b = Tensor::zeros({400, 3}), far = Tensor::zeros({400, 3});
  for (std::size_t i = 0; i < 400; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      a.at(i, j) = rng.normal();
      b.at(i, j) = rng.normal();
      far.at(i, j) = rng.normal() + (j == 0 ? 20.0 : 0.0);
    }
  EXPECT_EQ(a_distance(a, far, 3), 2.0);
  EXPECT_LT(std::abs(a_distance(a, b, 3)), 0.35);
  EXPECT_EQ(a_distance(a, b, 3), a_distance(a, b, 3));
  EXPECT_THROW(a_distance(Tensor::zeros({3, 3}), b, 0), std::invalid_argument);
  EXPECT_THROW(a_distance(a, Tensor::zeros({10, 2}), 0), ShapeError);
}

TEST(Summary, JsonCarriesReportedAccuracy) {
  RunSummary s;
  s.reported = Classifier::Graph;
  s.target_c = EvalResult{0.5, {{1, 1}, {1, 1}}};
  s.target_gc = EvalResult{0.75, {{2, 0}, {1, 1}}};
  const nlohmann::json j = to_json(s);
  EXPECT_EQ(j.at("target_accuracy").get<double>(), 0.75);
  EXPECT_EQ(s.target_accuracy(), 0.75);
  EXPECT_TRUE(j.at("a_distance").is_null());
  EXPECT_THROW(RunSummary{}.target_accuracy(), std::logic_error);
}
