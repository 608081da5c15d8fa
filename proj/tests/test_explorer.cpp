#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "tes/explorer.hpp"
#include "tes/teacher.hpp"
#include "tes/training.hpp"

using namespace tes;

namespace {

struct Rig {
  ExplorerPair pair;
  StudentModel student;
  Tensor real, z;
};

Rig small_rig(std::uint64_t seed, double lambda = 1.0) {
  Rng rng(seed);
  ExplorerSpec es;
  es.latent_dim = 3;
  es.generator_hidden = {6};
  es.discriminator_hidden = {5};
  StudentSpec ss;
  ss.known_classes = 3;
  ss.trunk_hidden = {6};
  ss.head_hidden = 4;
  Rig r{ExplorerPair(es, rng, lambda), StudentModel(ss, rng), Tensor::matrix(6, 2), Tensor()};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : r.real.data()) v = u(rng);
  r.z = sample_latent(r.pair.prior, 6, rng);
  return r;
}

// First-moment estimate after one Adam step from a fresh state is (1 - beta1) * g.
GradMap first_step_gradient(const Model& m) {
  GradMap g;
  for (const auto& p : m.params) {
    Tensor t = p.m;
    for (double& v : t.data()) v /= 1.0 - m.adam.beta1;
    g.emplace(p.name, std::move(t));
  }
  return g;
}

bool same_params(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (!(a.params[i].value == b.params[i].value)) return false;
  return true;
}

}  // namespace

TEST(Latent, ShapesDeterminismAndMoments) {
  LatentPrior prior{4};
  Rng a(3), b(3);
  EXPECT_EQ(sample_latent(prior, 0, a).shape(), (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(sample_latent(prior, 17, a), sample_latent(prior, 17, b));
  Rng c(5);
  const Tensor z = sample_latent(prior, 100000, c);
  for (std::size_t col = 0; col < 4; ++col) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
      s += z.at(r, col);
      s2 += z.at(r, col) * z.at(r, col);
    }
    const double mean = s / 1e5, var = s2 / 1e5 - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.05);
  }
}

TEST(Discriminator, HalfEverywhereGivesTwoLogTwo) {
  auto r = small_rig(1);
  for (auto& p : r.pair.discriminator.params) std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
  EXPECT_NEAR(discriminator_loss(r.pair, r.real, r.z), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(discriminator_step(r.pair, r.real, r.z, {}), 2.0 * std::log(2.0), 1e-12);
}

TEST(Discriminator, ObjectiveIsNegatedLoss) {
  auto r = small_rig(2);
  EXPECT_DOUBLE_EQ(discriminator_objective(r.pair, r.real, r.z), -discriminator_loss(r.pair, r.real, r.z));
}

TEST(Discriminator, StepDescendsAndTouchesOnlyDiscriminator) {
  auto r = small_rig(3);
  const ExplorerPair initial = r.pair;
  const Model& gen_before = initial.generator;
  const Model& disc_before = initial.discriminator;
  const double before = discriminator_step(r.pair, r.real, r.z, {0.01});
  EXPECT_DOUBLE_EQ(before, discriminator_loss(initial, r.real, r.z));
  EXPECT_LT(discriminator_loss(r.pair, r.real, r.z), before);
  EXPECT_TRUE(same_params(r.pair.generator, gen_before));
  EXPECT_EQ(r.pair.generator.step, 0u);
  EXPECT_FALSE(same_params(r.pair.discriminator, disc_before));
}

TEST(Discriminator, GradientMatchesFiniteDifferences) {
  auto r = small_rig(4);
  ExplorerPair probe = r.pair;
  const auto fd = oracle::finite_difference(probe.discriminator, [&] { return discriminator_loss(probe, r.real, r.z); });
  discriminator_step(r.pair, r.real, r.z, {});
  EXPECT_LT(oracle::max_relative_error(first_step_gradient(r.pair.discriminator), fd), 1e-4);
}

TEST(Discriminator, OutputsInOpenUnitInterval) {
  auto r = small_rig(5);
  const Tensor d = predict(r.pair.discriminator, vstack(r.real, r.pair.generate(r.z)));
  for (double v : d.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Discriminator, ShapeErrors) {
  auto r = small_rig(6);
  EXPECT_THROW(discriminator_step(r.pair, r.real.slice_rows(0, 3), r.z, {}), DimensionError);
  EXPECT_THROW(discriminator_step(r.pair, Tensor::matrix(0, 2), Tensor::matrix(0, 3), {}), ValidationError);
}

TEST(Generator, StepDescendsAndTouchesOnlyGenerator) {
  auto r = small_rig(7);
  const StudentModel student_before = r.student;
  const Model disc_before = r.pair.discriminator;
  const Model gen_before = r.pair.generator;
  const auto before = generator_objective(r.pair, r.student, r.z);
  const auto reported = generator_step(r.pair, r.student, r.z, {0.01});
  EXPECT_DOUBLE_EQ(reported.adv_loss, before.adv_loss);
  EXPECT_DOUBLE_EQ(reported.student_loss, before.student_loss);
  EXPECT_LT(generator_objective(r.pair, r.student, r.z).total(1.0), before.total(1.0));
  EXPECT_TRUE(r.student == student_before);
  EXPECT_TRUE(same_params(r.pair.discriminator, disc_before));
  EXPECT_EQ(r.pair.discriminator.step, 0u);
  EXPECT_FALSE(same_params(r.pair.generator, gen_before));
}

TEST(Generator, GradientMatchesFiniteDifferences) {
  for (bool ns : {false, true}) {
    for (double lambda : {0.0, 1.0, 3.5}) {
      auto r = small_rig(8, lambda);
      r.pair.non_saturating = ns;
      ExplorerPair probe = r.pair;
      const auto fd = oracle::finite_difference(
          probe.generator, [&] { return generator_objective(probe, r.student, r.z).total(lambda); });
      generator_step(r.pair, r.student, r.z, {});
      EXPECT_LT(oracle::max_relative_error(first_step_gradient(r.pair.generator), fd), 1e-4)
          << "lambda " << lambda << " non_saturating " << ns;
    }
  }
}

TEST(Generator, LambdaZeroNeverEvaluatesStudent) {
  auto r = small_rig(9, 0.0);
  auto twin = r.pair;
  StudentSpec wrong;
  wrong.in_dim = 5;  // would fail a forward pass on 2-D fakes
  Rng rng(1);
  const StudentModel mismatched(wrong, rng);
  const auto a = generator_step(r.pair, mismatched, r.z, {});
  const auto b = generator_step(twin, r.student, r.z, {});
  EXPECT_EQ(a.student_loss, 0.0);
  EXPECT_EQ(a.adv_loss, b.adv_loss);
  EXPECT_TRUE(same_params(r.pair.generator, twin.generator));
}

TEST(Generator, SaturatedStudentContributesNothing) {
  // Every known head pinned to 0 and U pinned to 1: the student term vanishes.
  auto r = small_rig(10, 5.0);
  for (std::size_t c = 0; c < r.student.heads.size(); ++c) {
    auto& head = r.student.heads[c];
    const auto last = head.spec.size() - 2;  // final dense layer precedes the sigmoid
    std::fill(head.param(weight_name(last)).data().begin(), head.param(weight_name(last)).data().end(), 0.0);
    head.param(bias_name(last))[0] = c + 1 == r.student.heads.size() ? 1000.0 : -1000.0;
  }
  auto twin = r.pair;
  twin.lambda = 0.0;
  EXPECT_NEAR(generator_objective(r.pair, r.student, r.z).student_loss, 0.0, 1e-10);
  generator_step(r.pair, r.student, r.z, {});
  generator_step(twin, r.student, r.z, {});
  EXPECT_TRUE(same_params(r.pair.generator, twin.generator));
}

TEST(Generator, NegativeLambdaRejected) {
  auto r = small_rig(11);
  r.pair.lambda = -0.5;
  EXPECT_THROW(generator_step(r.pair, r.student, r.z, {}), ValidationError);
  Rng rng(0);
  EXPECT_THROW(ExplorerPair(ExplorerSpec{}, rng, -1.0), ValidationError);
}

TEST(Explorer, LargeLambdaProducesMoreUnknownLikeSamples) {
  // Directional property over five seeds: with lambda = 100 the student labels
  // a larger share of generated samples unknown after 50 epochs than with 0.
  ToySpec ts;
  ts.per_class = 250;
  const auto data = gen_toy(ts);
  const auto teacher = train_teacher(data, mlp(2, {32}, 4, LayerKind::softmax), 10, {}, 1);
  auto share = [&](double lambda, std::uint64_t seed) {
    Rng rng(seed);
    StudentSpec ss;
    ss.trunk_hidden = {32, 32};
    StudentModel s(ss, rng);
    ExplorerPair pair(ExplorerSpec{}, rng, lambda);
    JointTrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 64;
    cfg.probe_count = 500;
    const auto rec = joint_train(&teacher, s, &pair, data, cfg, seed);
    return static_cast<double>(rec.epochs.back().probe_active) / 500.0;
  };
  std::vector<double> big, zero;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    big.push_back(share(100.0, seed));
    zero.push_back(share(0.0, seed));
  }
  std::sort(big.begin(), big.end());
  std::sort(zero.begin(), zero.end());
  EXPECT_GT(big[2], zero[2]);
}
