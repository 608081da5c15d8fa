#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "tes/student.hpp"
#include "tes/teacher.hpp"
#include "tes/training.hpp"

using namespace tes;

namespace {

StudentModel tiny_student(std::uint64_t seed, std::size_t known = 3) {
  Rng rng(seed);
  StudentSpec ss;
  ss.known_classes = known;
  ss.trunk_hidden = {8, 6};
  ss.head_hidden = 4;
  return StudentModel(ss, rng);
}

Tensor uniform_points(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t = Tensor::matrix(n, 2);
  for (double& v : t.data()) v = u(rng);
  return t;
}

std::vector<DistilledTarget> random_targets(std::size_t n, std::size_t known, Rng& rng) {
  std::uniform_int_distribution<int> cls(0, static_cast<int>(known) - 1);
  std::uniform_real_distribution<double> q(0.7, 1.0);
  std::vector<DistilledTarget> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_target(cls(rng), q(rng), known));
  return out;
}

GradMap first_step_gradient(const Model& m) {
  GradMap g;
  for (const auto& p : m.params) {
    Tensor t = p.m;
    for (double& v : t.data()) v /= 1.0 - m.adam.beta1;
    g.emplace(p.name, std::move(t));
  }
  return g;
}

// Fakes that are, and are not, active for `s`, drawn from a uniform grid.
std::pair<Tensor, Tensor> split_candidates(const StudentModel& s, double q_min) {
  Tensor grid = Tensor::matrix(41 * 41, 2);
  for (std::size_t i = 0; i < 41; ++i)
    for (std::size_t j = 0; j < 41; ++j) {
      grid.at(i * 41 + j, 0) = -1.0 + 0.1 * static_cast<double>(i);
      grid.at(i * 41 + j, 1) = -1.0 + 0.1 * static_cast<double>(j);
    }
  const auto mask = active_mask(student_forward(s, grid).probs, q_min);
  std::vector<std::size_t> a, n;
  for (std::size_t r = 0; r < mask.size(); ++r) (mask[r] ? a : n).push_back(r);
  return {grid.gather_rows(a), grid.gather_rows(n)};
}

// A student pushed so that some inputs fall below every known cut.
StudentModel student_with_both_kinds(double q_min) {
  auto s = tiny_student(21);
  for (std::size_t c = 0; c + 1 < s.heads.size(); ++c) {
    auto& head = s.heads[c];
    head.param(bias_name(head.spec.size() - 2))[0] = -1.0;
  }
  const auto [act, non] = split_candidates(s, q_min);
  EXPECT_GE(act.rows(), 8u);
  EXPECT_GE(non.rows(), 16u);
  return s;
}

}  // namespace

TEST(Student, ShapesAndHeadCount) {
  const auto s = tiny_student(1, 4);
  EXPECT_EQ(s.head_count(), 5u);
  EXPECT_EQ(s.unknown_index(), 4u);
  Rng rng(1);
  const auto t = student_forward(s, uniform_points(7, rng));
  EXPECT_EQ(t.probs.shape(), (std::vector<std::size_t>{7, 5}));
  EXPECT_EQ(t.logits.shape(), (std::vector<std::size_t>{7, 5}));
  for (std::size_t i = 0; i < t.probs.size(); ++i) {
    EXPECT_GT(t.probs[i], 0.0);
    EXPECT_LT(t.probs[i], 1.0);
    EXPECT_NEAR(t.probs[i], 1.0 / (1.0 + std::exp(-t.logits[i])), 1e-15);
  }
}

TEST(ActiveMask, StrictCutAtOneMinusQmin) {
  const Tensor p = Tensor::from_rows({{0.10, 0.20, 0.25, 0.9},
                                      {0.30, 0.10, 0.10, 0.1},
                                      {0.10, 0.50, 0.00, 0.0},
                                      {0.29, 0.29, 0.29, 0.0}});
  EXPECT_EQ(active_mask(p, 0.7), (std::vector<bool>{true, false, false, true}));
  // The unknown column never enters the max.
  EXPECT_TRUE(active_mask(Tensor::from_rows({{0.0, 0.0, 0.0, 0.99}}), 0.7)[0]);
  // A known sigmoid of 0.5 or more is never active for any valid q_min.
  for (double q : {0.51, 0.7, 0.9, 0.999}) EXPECT_FALSE(active_mask(Tensor::from_rows({{0.5, 0.0, 0.0, 0.0}}), q)[0]);
  EXPECT_THROW(active_mask(p, 0.5), ValidationError);
}

TEST(ActiveMask, SelectionKeepsMaskedRowsInOrder) {
  const auto s = student_with_both_kinds(0.7);
  const auto [act, non] = split_candidates(s, 0.7);
  const Tensor fakes = vstack(vstack(non.slice_rows(0, 2), act.slice_rows(0, 1)), vstack(non.slice_rows(2, 3), act.slice_rows(1, 3)));
  const auto b = select_active_unknowns(s, fakes, 0.7);
  EXPECT_EQ(b.mask, (std::vector<bool>{false, false, true, false, true, true}));
  EXPECT_EQ(b.count(), 3u);
  EXPECT_EQ(b.samples, act.slice_rows(0, 3));
}

TEST(StudentStep, GradientMatchesFiniteDifferences) {
  const double q_min = 0.7;
  auto s = student_with_both_kinds(q_min);
  const auto [act, non] = split_candidates(s, q_min);
  Rng rng(3);
  const Tensor real = uniform_points(6, rng);
  const auto targets = random_targets(6, 3, rng);
  const Tensor fakes = vstack(act.slice_rows(0, 3), non.slice_rows(0, 3));

  StudentModel probe = s;
  auto objective = [&] { return student_objective(probe, real, targets, fakes, q_min).total(); };
  std::vector<GradMap> fd;
  fd.push_back(oracle::finite_difference(probe.trunk, objective));
  for (auto& h : probe.heads) fd.push_back(oracle::finite_difference(h, objective));

  const auto before = student_objective(s, real, targets, fakes, q_min);
  const auto reported = student_step(s, real, targets, fakes, q_min, {});
  EXPECT_EQ(reported.active_count, 3u);
  EXPECT_DOUBLE_EQ(reported.real_loss, before.real_loss);
  EXPECT_DOUBLE_EQ(reported.fake_loss, before.fake_loss);
  EXPECT_LT(oracle::max_relative_error(first_step_gradient(s.trunk), fd[0]), 1e-4);
  for (std::size_t c = 0; c < s.heads.size(); ++c)
    EXPECT_LT(oracle::max_relative_error(first_step_gradient(s.heads[c]), fd[c + 1]), 1e-4) << "head " << c;
}

TEST(StudentStep, FakeTermUsesHardUnknownLabelOverBatchSize) {
  const double q_min = 0.7;
  auto s = student_with_both_kinds(q_min);
  const auto [act, non] = split_candidates(s, q_min);
  Rng rng(4);
  const Tensor real = uniform_points(5, rng);
  const auto targets = random_targets(5, 3, rng);
  const Tensor fakes = vstack(act.slice_rows(0, 2), non.slice_rows(0, 3));
  const auto loss = student_objective(s, real, targets, fakes, q_min);
  const auto p = student_forward(s, act.slice_rows(0, 2)).probs;
  double expect = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) expect -= std::log(1.0 - p.at(r, c));
    expect -= std::log(p.at(r, 3));
  }
  EXPECT_NEAR(loss.fake_loss, expect / 5.0, 1e-12);
  EXPECT_EQ(loss.active_count, 2u);
}

TEST(StudentStep, NonActiveFakesHaveNoEffect) {
  const double q_min = 0.7;
  const auto base = student_with_both_kinds(q_min);
  const auto [act, non] = split_candidates(base, q_min);
  Rng rng(5);
  const Tensor real = uniform_points(8, rng);
  const auto targets = random_targets(8, 3, rng);

  // Swapping which non-active fakes fill the batch leaves the update bit-identical.
  auto a = base, b = base;
  const auto la = student_step(a, real, targets, vstack(act.slice_rows(0, 3), non.slice_rows(0, 5)), q_min, {});
  const auto lb = student_step(b, real, targets, vstack(act.slice_rows(0, 3), non.slice_rows(5, 10)), q_min, {});
  EXPECT_TRUE(a == b);
  EXPECT_EQ(la.fake_loss, lb.fake_loss);

  // With no active fakes at all, the step equals the real-only step.
  auto c = base, d = base;
  const auto lc = student_step(c, real, targets, non.slice_rows(0, 8), q_min, {});
  const auto ld = student_step(d, real, targets, Tensor::matrix(0, 2), q_min, {});
  EXPECT_TRUE(c == d);
  EXPECT_EQ(lc.active_count, 0u);
  EXPECT_EQ(lc.fake_loss, 0.0);
  EXPECT_EQ(lc.total(), ld.real_loss);
}

TEST(StudentStep, PerfectOutputsGiveZeroLoss) {
  // Heads pinned to the hard targets: real rows labelled class 1, fakes all active.
  auto s = tiny_student(6);
  for (std::size_t c = 0; c < s.heads.size(); ++c) {
    auto& head = s.heads[c];
    const auto last = head.spec.size() - 2;
    std::fill(head.param(weight_name(last)).data().begin(), head.param(weight_name(last)).data().end(), 0.0);
    head.param(bias_name(last))[0] = c == 1 ? 1000.0 : -1000.0;
  }
  Rng rng(6);
  const Tensor real = uniform_points(4, rng);
  const std::vector<DistilledTarget> targets(4, make_target(1, 1.0, 3));
  const auto loss = student_objective(s, real, targets, Tensor::matrix(0, 2), 0.7);
  EXPECT_NEAR(loss.total(), 0.0, 1e-10);
}

TEST(StudentStep, DescendsOnSameBatch) {
  ToySpec ts;
  ts.per_class = 32;
  const auto d = gen_toy(ts);
  const auto targets = hard_targets(d);
  Rng rng(7);
  StudentModel s(StudentSpec{}, rng);
  const Tensor fakes = uniform_points(d.size(), rng);
  const auto before = student_step(s, d.features, targets, fakes, 0.7, {});
  EXPECT_LT(student_objective(s, d.features, targets, fakes, 0.7).real_loss, before.real_loss);
}

TEST(StudentStep, Preconditions) {
  auto s = tiny_student(8);
  Rng rng(8);
  const Tensor real = uniform_points(4, rng);
  const auto targets = random_targets(4, 3, rng);
  EXPECT_THROW(student_step(s, real, std::span(targets).first(3), Tensor::matrix(0, 2), 0.7, {}), ValidationError);
  EXPECT_THROW(student_step(s, real, targets, uniform_points(3, rng), 0.7, {}), DimensionError);
  const auto wide = random_targets(4, 4, rng);
  EXPECT_THROW(student_step(s, real, wide, Tensor::matrix(0, 2), 0.7, {}), DimensionError);
}

namespace {

struct JointFixture {
  LabeledDataset data;
  Model teacher;
  StudentModel student;
  ExplorerPair pair;
};

JointFixture joint_fixture(std::uint64_t seed) {
  ToySpec ts;
  ts.per_class = 60;
  ts.seed = seed;
  auto data = gen_toy(ts);
  auto teacher = train_teacher(data, mlp(2, {16}, 4, LayerKind::softmax), 5, {}, seed);
  Rng rng(seed);
  StudentSpec ss;
  ss.trunk_hidden = {16};
  ss.head_hidden = 8;
  StudentModel st(ss, rng);
  ExplorerSpec es;
  es.generator_hidden = es.discriminator_hidden = {16};
  return {std::move(data), std::move(teacher), std::move(st), ExplorerPair(es, rng)};
}

}  // namespace

TEST(JointTrain, DistillsOnceAndLeavesTeacherUntouched) {
  auto f = joint_fixture(1);
  const Model teacher_before = f.teacher;
  JointTrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.probe_count = 50;
  const std::size_t calls = distill_invocations();
  const auto rec = joint_train(&f.teacher, f.student, &f.pair, f.data, cfg, 3);
  EXPECT_EQ(distill_invocations() - calls, 1u);
  EXPECT_EQ(rec.distill_calls, 1u);
  ASSERT_EQ(rec.epochs.size(), 4u);
  for (int e = 0; e < 4; ++e) EXPECT_EQ(rec.epochs[static_cast<std::size_t>(e)].epoch, e + 1);
  for (std::size_t i = 0; i < f.teacher.params.size(); ++i) {
    EXPECT_EQ(f.teacher.params[i].value, teacher_before.params[i].value);
    EXPECT_EQ(f.teacher.params[i].m, teacher_before.params[i].m);
  }
  EXPECT_EQ(f.teacher.step, teacher_before.step);
}

TEST(JointTrain, ZeroEpochsChangesNothing) {
  auto f = joint_fixture(2);
  const auto student_before = f.student;
  const auto gen_before = f.pair.generator;
  JointTrainConfig cfg;
  cfg.epochs = 0;
  const auto rec = joint_train(&f.teacher, f.student, &f.pair, f.data, cfg, 3);
  EXPECT_TRUE(rec.epochs.empty());
  EXPECT_TRUE(f.student == student_before);
  EXPECT_EQ(f.pair.generator.params[0].value, gen_before.params[0].value);
}

TEST(JointTrain, DeterministicMetrics) {
  auto run = [] {
    auto f = joint_fixture(4);
    JointTrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 48;
    cfg.probe_count = 40;
    std::ostringstream os;
    write_metrics_csv(joint_train(&f.teacher, f.student, &f.pair, f.data, cfg, 9), os);
    return os.str();
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.substr(0, a.find('\n')), "epoch,d_loss,g_adv_loss,g_student_loss,s_real_loss,s_fake_loss,active_count,probe_active");
}

TEST(JointTrain, WithoutExplorerHasNoFakeTerm) {
  auto f = joint_fixture(5);
  JointTrainConfig cfg;
  cfg.epochs = 2;
  cfg.use_explorer = false;
  cfg.use_teacher = false;
  const auto rec = joint_train(nullptr, f.student, nullptr, f.data, cfg, 1);
  EXPECT_EQ(rec.distill_calls, 0u);
  for (const auto& m : rec.epochs) {
    EXPECT_EQ(m.active_count, 0u);
    EXPECT_EQ(m.s_fake_loss, 0.0);
    EXPECT_EQ(m.d_loss, 0.0);
  }
  cfg.use_teacher = true;
  EXPECT_THROW(joint_train(nullptr, f.student, nullptr, f.data, cfg, 1), ValidationError);
}

TEST(JointTrain, ObserverSeesEveryEpoch) {
  auto f = joint_fixture(6);
  JointTrainConfig cfg;
  cfg.epochs = 3;
  cfg.probe_count = 25;
  std::vector<int> seen;
  joint_train(&f.teacher, f.student, &f.pair, f.data, cfg, 1, [&](const EpochSnapshot& s) {
    seen.push_back(s.metrics.epoch);
    EXPECT_EQ(s.probe_fakes.rows(), 25u);
    EXPECT_EQ(s.probe_mask.size(), 25u);
    std::size_t active = 0;
    for (bool b : s.probe_mask) active += b;
    EXPECT_EQ(active, s.metrics.probe_active);
  });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
}
