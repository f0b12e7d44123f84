#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "radood/clx.hpp"
#include "radood/error.hpp"
#include "radood/rng.hpp"

namespace radood::sig {

enum class ClutterKind { cgn, ccgn };
enum class Label { h0, h1 };

std::string to_string(ClutterKind k);
ClutterKind clutter_kind_from_string(const std::string& s);

/// Generative description of a synthetic radar scene. Clutter has unit
/// per-bin power; thermal noise power is 10^(-cnr_db/10). cnr_db = +inf
/// disables thermal noise, snr_db = -inf disables the target.
struct Scenario {
    std::size_t m = 16;
    double rho = 0.5;
    ClutterKind clutter_kind = ClutterKind::cgn;
    double texture_shape = 1.0;
    double cnr_db = 15.0;
    double snr_db = 0.0;
    std::size_t doppler_bin = 0;
    std::uint64_t seed = 0;

    /// Throws ConfigError on any violated invariant.
    void validate() const;
    double noise_power() const;
    double snr_linear() const;
};

struct SampleBatch {
    std::vector<clx::ComplexVector> signals;
    Label label = Label::h0;
    Scenario scenario;
};

/// p_k = exp(2iπ·d·k/m).
clx::ComplexVector steering_vector(std::size_t m, std::size_t d);

/// α = sqrt(SNR)·exp(2iπφ)/sqrt(m).
cplx target_amplitude(double snr_db, std::size_t m, double phase);
cplx target_amplitude(double snr_db, std::size_t m, Stream& rng);

/// Draws clutter-plus-noise vectors for one scenario. Holds the Cholesky
/// factor of T(rho) so repeated draws skip the factorization.
class ClutterSampler {
  public:
    explicit ClutterSampler(const Scenario& scenario);

    /// One H0 vector; consumes texture, then speckle, then thermal noise draws.
    clx::ComplexVector draw(Stream& rng) const;
    const Scenario& scenario() const noexcept { return scenario_; }

  private:
    Scenario scenario_;
    clx::ComplexMatrix lower_;
    double noise_std_;
};

/// n H0 signals; signal i is drawn from rng.child(i).
SampleBatch sample_clutter(const Scenario& scenario, std::size_t n, const Stream& rng);

/// Adds α_i·p to every signal, α_i with phase rng.child(i).uniform().
SampleBatch inject_target(const SampleBatch& batch, const Scenario& scenario, const Stream& rng);

/// x + α·p for a single vector with a given phase; the building block of inject_target.
clx::ComplexVector add_target(const clx::ComplexVector& x, const Scenario& scenario, double phase);

/// Distinct failure signals of the IQ reader.
class IqHeaderError : public IoError {
  public:
    using IoError::IoError;
};
class IqTruncatedError : public IoError {
  public:
    using IoError::IoError;
};
class IqLengthMismatch : public IoError {
  public:
    using IoError::IoError;
};

/// CIQ1 layout: "CIQ1", u32 m, u64 count, then count·m interleaved
/// (re, im) float32 pairs, all little-endian.
void write_iq(const std::filesystem::path& path, const std::vector<clx::ComplexVector>& signals, std::size_t m);
std::vector<std::uint8_t> encode_iq(const std::vector<clx::ComplexVector>& signals, std::size_t m);

/// Reads a CIQ1 file. When expected_m is given, a header with a different m
/// raises IqLengthMismatch.
SampleBatch load_iq(const std::filesystem::path& path, std::optional<std::size_t> expected_m = std::nullopt);
SampleBatch decode_iq(const std::vector<std::uint8_t>& bytes, std::optional<std::size_t> expected_m = std::nullopt);

}  // namespace radood::sig
