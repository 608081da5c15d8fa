#pragma once

// Explorer: a GAN whose generator, besides fooling the discriminator, is
// pushed toward samples the (frozen) student labels "unknown".

#include <cmath>
#include <random>

#include "tes/losses.hpp"
#include "tes/nn.hpp"
#include "tes/rng.hpp"
#include "tes/student.hpp"

namespace tes {

struct LatentPrior {
  std::size_t dim = 8;  // standard normal
};

inline Tensor sample_latent(const LatentPrior& prior, std::size_t n, Rng& rng) {
  require(prior.dim >= 1, "latent dim must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z = Tensor::matrix(n, prior.dim);
  for (double& v : z.data()) v = normal(rng);
  return z;
}

struct ExplorerSpec {
  std::size_t data_dim = 2;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> generator_hidden{32, 32};
  std::vector<std::size_t> discriminator_hidden{32, 32};

  NetworkSpec generator() const { return mlp(latent_dim, generator_hidden, data_dim, LayerKind::sigmoid); }
  NetworkSpec discriminator() const { return mlp(data_dim, discriminator_hidden, 1, LayerKind::sigmoid); }
};

struct ExplorerPair {
  Model generator;      // latent -> data, sigmoid output
  Model discriminator;  // data -> 1, sigmoid output
  LatentPrior prior;
  double lambda = 1.0;
  bool non_saturating = false;  // minimize -log D(G(z)) instead of log(1 - D(G(z)))

  ExplorerPair() = default;
  ExplorerPair(const ExplorerSpec& spec, Rng& rng, double lambda_ = 1.0)
      : generator(spec.generator(), rng), discriminator(spec.discriminator(), rng), prior{spec.latent_dim}, lambda(lambda_) {
    validate();
  }

  std::size_t data_dim() const { return generator.out_dim(); }

  void validate() const {
    require(lambda >= 0.0, "explorer lambda must be >= 0");
    require_dims(generator.in_dim() == prior.dim, "generator input width must equal the latent dim");
    require_dims(generator.out_dim() == discriminator.in_dim(), "generator output width must equal discriminator input");
    require_dims(discriminator.out_dim() == 1, "discriminator must have a single output");
    require(generator.spec.back().kind == LayerKind::sigmoid && discriminator.spec.back().kind == LayerKind::sigmoid,
            "generator and discriminator must end in sigmoid");
  }

  Tensor generate(const Tensor& latent) const { return predict(generator, latent); }
};

/// Negated discriminator objective: -mean log D(x) - mean log(1 - D(G(z))).
inline double discriminator_loss(const ExplorerPair& pair, const Tensor& real, const Tensor& latent) {
  const Tensor d_real = predict(pair.discriminator, real);
  const Tensor d_fake = predict(pair.discriminator, pair.generate(latent));
  double a = 0.0, b = 0.0;
  for (double v : d_real.data()) a += std::log(clamp_prob(v));
  for (double v : d_fake.data()) b += std::log(1.0 - clamp_prob(v));
  return -a / static_cast<double>(d_real.rows()) - b / static_cast<double>(d_fake.rows());
}

/// The quantity the discriminator maximizes (before negation).
inline double discriminator_objective(const ExplorerPair& pair, const Tensor& real, const Tensor& latent) {
  return -discriminator_loss(pair, real, latent);
}

/// One Adam step on the discriminator; the generator is only evaluated.
/// Returns the loss before the update.
inline double discriminator_step(ExplorerPair& pair, const Tensor& real, const Tensor& latent, const AdamConfig& adam) {
  require(real.rows() > 0 && latent.rows() > 0, "discriminator_step on an empty batch");
  require_dims(real.rows() == latent.rows(), "real and latent batches must have the same size");
  require_dims(real.cols() == pair.data_dim(), "real batch width does not match the data dim");
  const std::size_t n = real.rows();
  const Tensor fake = pair.generate(latent);
  const auto trace = forward(pair.discriminator, vstack(real, fake));
  const Tensor& d = trace.output();
  Tensor g(d.shape(), 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < 2 * n; ++r) {
    const double p = clamp_prob(d[r]);
    if (r < n) {
      loss -= std::log(p) * inv_n;
      g[r] = -inv_n / p;
    } else {
      loss -= std::log(1.0 - p) * inv_n;
      g[r] = inv_n / (1.0 - p);
    }
  }
  adam_step(pair.discriminator, backward(pair.discriminator, trace, g).params, adam);
  return loss;
}

struct GeneratorLoss {
  double adv_loss = 0.0;      // mean log(1 - D(G(z))) (or -mean log D(G(z)) when non-saturating)
  double student_loss = 0.0;  // BCE(y_U, S(G(z))), mean over the batch; 0 when lambda == 0
  double total(double lambda) const { return adv_loss + lambda * student_loss; }
};

/// Generator objective evaluated without updating anything.
inline GeneratorLoss generator_objective(const ExplorerPair& pair, const StudentModel& student, const Tensor& latent) {
  GeneratorLoss out;
  const Tensor fake = pair.generate(latent);
  const Tensor d = predict(pair.discriminator, fake);
  for (double v : d.data())
    out.adv_loss += pair.non_saturating ? -std::log(clamp_prob(v)) : std::log(1.0 - clamp_prob(v));
  out.adv_loss /= static_cast<double>(d.rows());
  if (pair.lambda > 0.0)
    out.student_loss =
        binary_cross_entropy(student_forward(student, fake).probs, unknown_targets(fake.rows(), student.head_count()));
  return out;
}

/// One Adam step on the generator through the frozen discriminator and student.
/// Returns the loss parts before the update.
inline GeneratorLoss generator_step(ExplorerPair& pair, const StudentModel& student, const Tensor& latent,
                                    const AdamConfig& adam) {
  pair.validate();
  require(latent.rows() > 0, "generator_step on an empty batch");
  require_dims(latent.cols() == pair.prior.dim, "latent batch width does not match the prior");
  const std::size_t n = latent.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  const auto g_trace = forward(pair.generator, latent);
  const Tensor& fake = g_trace.output();

  GeneratorLoss out;
  const auto d_trace = forward(pair.discriminator, fake);
  Tensor d_grad(d_trace.output().shape(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double p = clamp_prob(d_trace.output()[r]);
    if (pair.non_saturating) {
      out.adv_loss -= std::log(p) * inv_n;
      d_grad[r] = -inv_n / p;
    } else {
      out.adv_loss += std::log(1.0 - p) * inv_n;
      d_grad[r] = -inv_n / (1.0 - p);
    }
  }
  Tensor fake_grad = backward(pair.discriminator, d_trace, d_grad).input;

  if (pair.lambda > 0.0) {
    require_dims(student.in_dim() == pair.data_dim(), "student input width does not match the data dim");
    const auto s_trace = student_forward(student, fake);
    const Tensor y_u = unknown_targets(n, student.head_count());
    out.student_loss = binary_cross_entropy(s_trace.probs, y_u);
    std::vector<double> w(n, pair.lambda);
    const auto s_grad = student_backward(student, s_trace, binary_cross_entropy_grad(s_trace.probs, y_u, w, double(n)));
    for (std::size_t i = 0; i < fake_grad.size(); ++i) fake_grad[i] += s_grad.input[i];
  }

  adam_step(pair.generator, backward(pair.generator, g_trace, fake_grad).params, adam);
  return out;
}

}  // namespace tes
