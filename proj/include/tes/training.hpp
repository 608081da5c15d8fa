#pragma once

// Joint teacher/explorer/student training loop and its per-epoch record.

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tes/data.hpp"
#include "tes/explorer.hpp"
#include "tes/student.hpp"
#include "tes/teacher.hpp"

namespace tes {

struct JointTrainConfig {
  int epochs = 100;
  std::size_t batch_size = 64;
  DistillConfig distill;
  AdamConfig student_adam;
  AdamConfig generator_adam;
  AdamConfig discriminator_adam;
  bool use_teacher = true;   // false: hard one-hot targets with U = 0
  bool use_explorer = true;  // false: no GAN steps, no fakes
  std::size_t probe_count = 1000;  // fixed latent vectors decoded after every epoch
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double d_loss = 0.0;
  double g_adv_loss = 0.0;
  double g_student_loss = 0.0;
  double s_real_loss = 0.0;
  double s_fake_loss = 0.0;
  std::size_t active_count = 0;  // active unknowns used in student steps during the epoch
  std::size_t probe_active = 0;  // active unknowns among the probe samples after the epoch
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;
  std::size_t distill_calls = 0;
};

/// Post-epoch view handed to observers (fake dumps, checkpoints, plots).
struct EpochSnapshot {
  const EpochMetrics& metrics;
  const StudentModel& student;
  const ExplorerPair* explorer;  // null without explorer
  const Tensor& probe_fakes;     // empty without explorer
  const std::vector<bool>& probe_mask;
};

using EpochObserver = std::function<void(const EpochSnapshot&)>;

inline void write_metrics_csv(const RunRecord& rec, std::ostream& os) {
  os << "epoch,d_loss,g_adv_loss,g_student_loss,s_real_loss,s_fake_loss,active_count,probe_active\n";
  for (const auto& m : rec.epochs)
    os << m.epoch << ',' << format_real(m.d_loss) << ',' << format_real(m.g_adv_loss) << ','
       << format_real(m.g_student_loss) << ',' << format_real(m.s_real_loss) << ',' << format_real(m.s_fake_loss) << ','
       << m.active_count << ',' << m.probe_active << '\n';
}

inline void write_metrics_csv(const RunRecord& rec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataFormatError("cannot open '" + path + "' for writing");
  write_metrics_csv(rec, os);
}

/// Runs the alternating training. Distilled targets are computed once up front
/// from the frozen teacher; every iteration then samples a real batch and a
/// latent batch, updates D, updates G, decodes the latent batch with the new
/// G and updates S on reals plus active unknowns.
inline RunRecord joint_train(const Model* teacher, StudentModel& student, ExplorerPair* explorer,
                             const LabeledDataset& data, const JointTrainConfig& cfg, std::uint64_t seed,
                             const EpochObserver& observer = {}) {
  cfg.distill.validate();
  require(cfg.epochs >= 0, "epochs must be >= 0");
  require(cfg.batch_size >= 1, "batch size must be >= 1");
  data.validate(/*require_all_classes=*/true);
  student.validate();
  require_dims(student.known_classes() == static_cast<std::size_t>(data.class_count),
               "student must have one head per known class plus unknown");
  require_dims(student.in_dim() == data.dim(), "student input width does not match the data");
  if (cfg.use_teacher) require(teacher != nullptr, "teacher required when use_teacher is set");
  if (cfg.use_explorer) {
    require(explorer != nullptr, "explorer required when use_explorer is set");
    explorer->validate();
    require_dims(explorer->data_dim() == data.dim(), "explorer data dim does not match the data");
  }

  RunRecord rec;
  if (cfg.epochs == 0) return rec;

  const std::size_t before = distill_invocations();
  const auto targets = cfg.use_teacher ? distill_targets(*teacher, data, cfg.distill) : hard_targets(data);
  rec.distill_calls = distill_invocations() - before;

  Rng batch_rng(derive_seed(seed, 10));
  Rng latent_rng(derive_seed(seed, 11));
  Rng probe_rng(derive_seed(seed, 12));
  const bool explore = cfg.use_explorer;
  const Tensor probe_latent =
      explore ? sample_latent(explorer->prior, cfg.probe_count, probe_rng) : Tensor::matrix(0, 1);
  const Tensor no_fakes = Tensor::matrix(0, data.dim());

  for (int e = 1; e <= cfg.epochs; ++e) {
    EpochMetrics m;
    m.epoch = e;
    const auto batches = epoch_batches(data.size(), cfg.batch_size, batch_rng);
    for (const auto& idx : batches) {
      const Tensor real = data.features.gather_rows(idx);
      std::vector<DistilledTarget> batch_targets;
      batch_targets.reserve(idx.size());
      for (auto i : idx) batch_targets.push_back(targets[i]);

      Tensor fakes = no_fakes;
      if (explore) {
        const Tensor z = sample_latent(explorer->prior, idx.size(), latent_rng);
        m.d_loss += discriminator_step(*explorer, real, z, cfg.discriminator_adam);
        const auto gl = generator_step(*explorer, student, z, cfg.generator_adam);
        m.g_adv_loss += gl.adv_loss;
        m.g_student_loss += gl.student_loss;
        fakes = explorer->generate(z);
      }
      const auto sl = student_step(student, real, batch_targets, fakes, cfg.distill.q_min, cfg.student_adam);
      m.s_real_loss += sl.real_loss;
      m.s_fake_loss += sl.fake_loss;
      m.active_count += sl.active_count;
    }
    const double nb = static_cast<double>(batches.size());
    m.d_loss /= nb;
    m.g_adv_loss /= nb;
    m.g_student_loss /= nb;
    m.s_real_loss /= nb;
    m.s_fake_loss /= nb;

    Tensor probe_fakes = Tensor::matrix(0, data.dim());
    std::vector<bool> probe_mask;
    if (explore && cfg.probe_count > 0) {
      probe_fakes = explorer->generate(probe_latent);
      probe_mask = active_mask(student_forward(student, probe_fakes).probs, cfg.distill.q_min);
      for (bool b : probe_mask) m.probe_active += b ? 1 : 0;
    }
    rec.epochs.push_back(m);
    if (observer) observer(EpochSnapshot{rec.epochs.back(), student, explore ? explorer : nullptr, probe_fakes, probe_mask});
  }
  return rec;
}

}  // namespace tes
