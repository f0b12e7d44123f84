#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <initializer_list>

namespace radood {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A stream is a (key, counter) pair. Child streams are derived by hashing the
/// parent key together with an index, so the draws of stream `child(i)` do not
/// depend on how many values any sibling stream consumed. Every Monte-Carlo
/// trial, every signal in a batch, and every training epoch gets its own child
/// stream; that is what makes results independent of scheduling order.
///
/// All distributions below are implemented here (not via <random>) so that the
/// variates are identical across standard-library implementations.
class Stream {
  public:
    explicit Stream(std::uint64_t seed);

    /// Independent stream for `index`, a pure function of (this key, index).
    Stream child(std::uint64_t index) const;
    /// Shorthand for nested children: child(a).child(b)...
    Stream child(std::initializer_list<std::uint64_t> path) const;

    std::uint64_t key() const noexcept { return key_; }

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();
    /// Circular complex normal with E|w|^2 = 1: (g_r + i g_i)/sqrt(2).
    std::complex<double> complex_normal();
    /// Gamma(shape, scale) by Marsaglia-Tsang, with the U^(1/shape) boost for shape < 1.
    double gamma(double shape, double scale);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

  private:
    Stream(std::uint64_t key, int) : key_(key) {}
    void refill();

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int used_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer, used to derive child keys.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace radood
