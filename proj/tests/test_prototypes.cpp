#include <cmath>

#include <gtest/gtest.h>

#include "protoalign/prototypes.hpp"
#include "support/oracles.hpp"

using namespace protoalign;

namespace {

ClassMeans single(std::size_t classes, std::size_t k, std::vector<double> mean) {
  ClassMeans m{Tensor::zeros({classes, mean.size()}), std::vector<std::size_t>(classes, 0)};
  for (std::size_t j = 0; j < mean.size(); ++j) m.means.at(k, j) = mean[j];
  m.counts[k] = 1;
  return m;
}

}  // namespace

TEST(ClassMeans, AveragesRowsPerClass) {
  const Tensor f = Tensor::matrix(4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  const std::vector<Label> y{0, 1, 0, 1};
  const ClassMeans m = batch_class_means(f, y, {}, 3);
  EXPECT_EQ(m.means.storage(), (std::vector<double>{3, 4, 5, 6, 0, 0}));
  EXPECT_EQ(m.counts, (std::vector<std::size_t>{2, 2, 0}));
}

TEST(ClassMeans, SkipsUntrustedRows) {
  const Tensor f = Tensor::matrix(3, 1, {1, 10, 100});
  const std::vector<Label> y{0, 0, 1};
  const ClassMeans m = batch_class_means(f, y, {true, false, false}, 2);
  EXPECT_EQ(m.means.storage(), (std::vector<double>{1, 0}));
  EXPECT_EQ(m.counts, (std::vector<std::size_t>{1, 0}));
}

TEST(ClassMeans, RejectsBadInput) {
  const Tensor f = Tensor::zeros({2, 2});
  EXPECT_THROW(batch_class_means(f, std::vector<Label>{0}, {}, 2), std::invalid_argument);
  EXPECT_THROW(batch_class_means(f, std::vector<Label>{0, 2}, {}, 2), std::out_of_range);
  EXPECT_THROW(batch_class_means(f, std::vector<Label>{0, 1}, {true}, 2), std::invalid_argument);
}

TEST(Ema, FirstObservationInitializes) {
  PrototypeBank bank(2, 2, 0.7);
  ema_update(bank, Domain::Source, single(2, 1, {3.0, -1.0}));
  EXPECT_EQ(bank.prototypes(Domain::Source).at(1, 0), 3.0);
  EXPECT_EQ(bank.prototypes(Domain::Source).at(1, 1), -1.0);
  EXPECT_EQ(bank.initialized(Domain::Source), (std::vector<bool>{false, true}));
  EXPECT_EQ(bank.initialized_count(Domain::Target), 0u);
}

TEST(Ema, HandExample) {
  PrototypeBank bank(1, 2, 0.7);
  ema_update(bank, Domain::Target, single(1, 0, {1.0, 0.0}));
  ema_update(bank, Domain::Target, single(1, 0, {0.0, 1.0}));
  const Tensor& c = bank.prototypes(Domain::Target);
  const double rho = 0.7;
  EXPECT_EQ(c.at(0, 0), rho);
  EXPECT_EQ(c.at(0, 1), 1.0 - rho);
  EXPECT_NEAR(c.at(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(c.at(0, 1), 0.3, 1e-15);
}

TEST(Ema, FixedPointAndZeroMomentum) {
  PrototypeBank keep(1, 3, 0.7);
  ema_update(keep, Domain::Source, single(1, 0, {0.25, -2.0, 8.0}));
  for (int i = 0; i < 5; ++i) ema_update(keep, Domain::Source, single(1, 0, {0.25, -2.0, 8.0}));
  EXPECT_EQ(keep.prototypes(Domain::Source).storage(), (std::vector<double>{0.25, -2.0, 8.0}));

  PrototypeBank replace(1, 2, 0.0);
  ema_update(replace, Domain::Source, single(1, 0, {1.0, 1.0}));
  ema_update(replace, Domain::Source, single(1, 0, {-4.0, 2.5}));
  EXPECT_EQ(replace.prototypes(Domain::Source).storage(), (std::vector<double>{-4.0, 2.5}));
}

TEST(Ema, StaysInConvexHullOfObservations) {
  Rng rng(31);
  PrototypeBank bank(1, 1, 0.6);
  double lo = INFINITY, hi = -INFINITY;
  for (int i = 0; i < 200; ++i) {
    const double v = rng.normal();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    ema_update(bank, Domain::Source, single(1, 0, {v}));
    const double c = bank.prototypes(Domain::Source).at(0, 0);
    EXPECT_GE(c, lo - 1e-15);
    EXPECT_LE(c, hi + 1e-15);
  }
}

TEST(Ema, ConvergesGeometricallyToConstantMean) {
  for (double rho : {0.3, 0.7, 0.9}) {
    PrototypeBank bank(1, 1, rho);
    ema_update(bank, Domain::Source, single(1, 0, {5.0}));
    for (int t = 1; t <= 40; ++t) {
      ema_update(bank, Domain::Source, single(1, 0, {1.0}));
      EXPECT_NEAR(bank.prototypes(Domain::Source).at(0, 0) - 1.0, 4.0 * std::pow(rho, t), 1e-12);
    }
  }
}

TEST(Ema, AbsentClassesDoNotDrift) {
  PrototypeBank bank(3, 2, 0.7);
  ClassMeans all{Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}), {1, 1, 1}};
  ema_update(bank, Domain::Target, all);
  for (int i = 0; i < 10; ++i) ema_update(bank, Domain::Target, single(3, 1, {0.0, 0.0}));
  const Tensor& c = bank.prototypes(Domain::Target);
  EXPECT_EQ(c.at(0, 0), 1.0);
  EXPECT_EQ(c.at(0, 1), 2.0);
  EXPECT_EQ(c.at(2, 0), 5.0);
  EXPECT_EQ(c.at(2, 1), 6.0);
}

TEST(Ema, RejectsBadShapesAndMomentum) {
  PrototypeBank bank(2, 2);
  EXPECT_THROW(ema_update(bank, Domain::Source, single(3, 0, {1, 1})), ShapeError);
  EXPECT_THROW(PrototypeBank(2, 2, 1.5), std::invalid_argument);
}

TEST(Blend, ValueMatchesEmaUpdate) {
  Rng rng(2);
  PrototypeBank bank(3, 4, 0.7);
  const std::vector<Label> y0{0, 1, 1, 0};
  const Tensor f0 = oracle::random_matrix(4, 4, rng);
  ema_update(bank, Domain::Source, batch_class_means(f0, y0, {}, 3));

  const std::vector<Label> y1{1, 2, 2, 1};
  const Tensor f1 = oracle::random_matrix(4, 4, rng);
  Tape tape;
  const PrototypeVars blended = blend_prototypes(bank, Domain::Source, tape.constant(f1), y1, {});
  PrototypeBank after = bank;
  ema_update(after, Domain::Source, batch_class_means(f1, y1, {}, 3));
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_NEAR(blended.prototypes.value()[i], after.prototypes(Domain::Source)[i], 1e-15);
  EXPECT_EQ(blended.available, after.initialized(Domain::Source));
}

TEST(Blend, GradientFlowsOnlyThroughFreshMean) {
  Rng rng(5);
  PrototypeBank bank(2, 3, 0.7);
  ema_update(bank, Domain::Target, ClassMeans{oracle::random_matrix(2, 3, rng), {1, 0}});
  const std::vector<Label> y{0, 1, 0};
  const Tensor f = oracle::random_matrix(3, 3, rng);
  const Tensor w = oracle::random_matrix(2, 3, rng);
  const ScalarFn fn = [&](Tape& tape, const Var& x) {
    return sum(mul(blend_prototypes(bank, Domain::Target, x, y, {}).prototypes, tape.constant(w)));
  };
  EXPECT_LE(gradient_check(fn, f), 1e-8);

  // Class 0 was initialized, so its rows carry weight (1 - rho) / count.
  Tape tape;
  const Var x = tape.variable(f);
  tape.backward(fn(tape, x));
  const Tensor g = tape.grad(x);
  EXPECT_NEAR(g.at(0, 0), 0.3 / 2.0 * w.at(0, 0), 1e-15);
  EXPECT_NEAR(g.at(1, 0), w.at(1, 0), 1e-15);
}

TEST(Blend, UntrustedRowsGetNoGradient) {
  PrototypeBank bank(2, 2, 0.7);
  const std::vector<Label> y{0, 1};
  Tape tape;
  const Var x = tape.variable(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const PrototypeVars p = blend_prototypes(bank, Domain::Target, x, y, {true, false});
  EXPECT_EQ(p.available, (std::vector<bool>{true, false}));
  tape.backward(sum(p.prototypes));
  const Tensor g = tape.grad(x);
  EXPECT_EQ(g.at(1, 0), 0.0);
  EXPECT_EQ(g.at(1, 1), 0.0);
}

TEST(Bank, JsonRoundTripIsExact) {
  Rng rng(9);
  PrototypeBank bank(3, 2, 0.65);
  ema_update(bank, Domain::Source, ClassMeans{oracle::random_matrix(3, 2, rng), {1, 0, 4}});
  ema_update(bank, Domain::Target, ClassMeans{oracle::random_matrix(3, 2, rng), {0, 2, 0}});
  const PrototypeBank back = prototype_bank_from_json(nlohmann::json::parse(to_json(bank).dump()));
  EXPECT_EQ(back.rho(), bank.rho());
  for (Domain d : {Domain::Source, Domain::Target}) {
    EXPECT_EQ(back.prototypes(d).storage(), bank.prototypes(d).storage());
    EXPECT_EQ(back.initialized(d), bank.initialized(d));
  }
}

TEST(Bank, RejectsInconsistentRecord) {
  nlohmann::json j = to_json(PrototypeBank(2, 2));
  j["source"] = std::vector<double>{1.0};
  EXPECT_THROW(prototype_bank_from_json(j), std::runtime_error);
}
