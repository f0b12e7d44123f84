#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "radood/clx.hpp"
#include "radood/cvnn.hpp"
#include "radood/error.hpp"
#include "radood/rng.hpp"

namespace radood::vae {

/// Per-component non-circular complex Gaussian q(z|x): mean μ, variance
/// v = E|z-μ|² and pseudo-variance δ = E[(z-μ)²].
struct LatentPosterior {
    clx::ComplexVector mu;
    std::vector<double> v;
    clx::ComplexVector delta;

    std::size_t q() const noexcept { return mu.size(); }
    /// v_ℓ > 0 and |δ_ℓ| <= (1 - 1e-6)·v_ℓ.
    void validate() const;
};

inline constexpr double kPseudoShrink = 1.0 - 1e-6;
inline constexpr double kStabilityClip = 1e-8;

/// z = μ + k_r ⊙ ε_r + i·k_i ⊙ ε_i with ε_r, ε_i ~ N(0, I) and
///   k_r = (v + δ) / sqrt(2(v + Re δ)),
///   k_i = sqrt((v² - |δ|²) / (2(v + Re δ))),
/// which gives E[z] = μ, E|z-μ|² = v, E[(z-μ)²] = δ exactly.
clx::ComplexVector reparameterize(const LatentPosterior& post, Stream& rng);
/// Same transform with caller-supplied noise.
clx::ComplexVector reparameterize(const LatentPosterior& post, std::span<const double> eps_r,
                                  std::span<const double> eps_i);

/// Gradients of a real loss with respect to the posterior (Wirtinger packing
/// for the complex fields).
struct PosteriorGrad {
    std::vector<cplx> mu;
    std::vector<double> v;
    std::vector<cplx> delta;
};

/// Pulls dL/dz back through reparameterize for fixed noise; accumulates into g.
void reparameterize_backward(const LatentPosterior& post, std::span<const double> eps_r,
                             std::span<const double> eps_i, std::span<const cplx> grad_z, PosteriorGrad& g);

/// KL(q || CN(0, I)) from the augmented closed form:
/// Σ_ℓ |μ_ℓ|² + v_ℓ - ½·log(v_ℓ² - |δ_ℓ|²) - 1.
double kl_to_prior(const LatentPosterior& post);
/// Accumulates scale·∂KL into g.
void kl_to_prior_backward(const LatentPosterior& post, double scale, PosteriorGrad& g);

/// The literal "‖μ‖² + Σ(v - ½ log(v² - |δ|²))" expression; differs from
/// kl_to_prior by the constant q.
double kl_prior_literal(const LatentPosterior& post);

struct TrainConfig {
    std::size_t epochs = 50;
    double lr = 1e-3;
    std::size_t batch_size = 128;
    double beta = 1e2;
    std::size_t q = 12;
    std::uint64_t seed = 0;
    double train_fraction = 2.0 / 3.0;

    void validate() const;
};

struct BatchLoss {
    double total = 0.0;
    double rec = 0.0;
    double kl = 0.0;
};

/// Encoder: conv(1→8,k3,s2) → CBN → ℂReLU → conv(8→16,k3,s2) → CBN → ℂReLU →
/// flatten → dense(4m→32) → ℂReLU → three dense heads of width q (μ, v, δ).
/// Decoder: dense(q→4m) → view [16, m/4] → CBN → ℂReLU → convT(16→8,k3,s2) →
/// CBN → ℂReLU → convT(8→1,k3,s2).
class CvaeModel {
  public:
    CvaeModel(std::size_t m, std::size_t q, double beta, std::uint64_t seed);

    std::size_t m() const noexcept { return m_; }
    std::size_t q() const noexcept { return q_; }
    double beta() const noexcept { return beta_; }
    void set_beta(double beta);
    std::size_t epochs_trained() const noexcept { return epochs_trained_; }
    void set_epochs_trained(std::size_t e) noexcept { epochs_trained_ = e; }

    /// Inference-mode posterior. Throws NumericError on non-finite activations.
    LatentPosterior encode(const clx::ComplexVector& x) const;
    std::vector<LatentPosterior> encode_batch(std::span<const clx::ComplexVector> xs) const;
    /// Inference-mode reconstruction from a latent of length q.
    clx::ComplexVector decode(const clx::ComplexVector& z) const;
    std::vector<clx::ComplexVector> decode_batch(std::span<const clx::ComplexVector> zs) const;

    /// Training-mode ELBO on a batch with reparameterization noise drawn from
    /// noise.child(i) for sample i; fills parameter gradients (zeroed first).
    BatchLoss loss_and_grad(std::span<const clx::ComplexVector> batch, const Stream& noise);
    /// Inference-mode ELBO with the same noise convention; no gradients.
    BatchLoss evaluate(std::span<const clx::ComplexVector> batch, const Stream& noise) const;

    std::vector<nn::Param*> params();
    std::vector<const nn::Param*> params() const;

    nn::Checkpoint to_checkpoint() const;
    static CvaeModel from_checkpoint(const nn::Checkpoint& ck);
    void save(const std::filesystem::path& path) const;
    static CvaeModel load(const std::filesystem::path& path);

  private:
    LatentPosterior posterior_from_heads(const nn::ComplexTensor& mu, const nn::ComplexTensor& v_raw,
                                         const nn::ComplexTensor& d_raw, std::size_t n) const;

    std::size_t m_, q_;
    double beta_;
    std::size_t epochs_trained_ = 0;
    nn::Sequential enc_conv_, enc_dense_, head_mu_, head_v_, head_delta_;
    nn::Sequential dec_dense_, dec_conv_;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based, continues across resumed runs
    double train_loss = 0.0;
    double val_loss = 0.0;
    double kl_term = 0.0;   // validation mean KL
    double rec_term = 0.0;  // validation mean reconstruction error
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::string to_csv() const;
};

/// Raised when the loss or a gradient turns non-finite.
class TrainingDiverged : public NumericError {
  public:
    TrainingDiverged(std::size_t epoch, std::size_t batch, const std::string& what)
        : NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                       ": " + what),
          epoch_(epoch),
          batch_(batch) {}
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

  private:
    std::size_t epoch_, batch_;
};

/// Splits `dataset` into the first train_fraction for training and the rest
/// for validation, then runs config.epochs epochs of Adam on the ELBO.
/// Shuffling and reparameterization noise derive from config.seed.
/// `on_epoch` (optional) observes each finished epoch.
TrainLog train(CvaeModel& model, std::span<const clx::ComplexVector> dataset, const TrainConfig& config,
               const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace radood::vae
