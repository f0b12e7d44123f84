#include <gtest/gtest.h>

#include <cmath>

#include "radood/classical.hpp"
#include "radood/scores.hpp"

using namespace radood;
using namespace radood::classical;
using clx::ComplexMatrix;
using clx::ComplexVector;

namespace {

double frob_diff(const ComplexMatrix& a, const ComplexMatrix& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) s += std::norm(a(i, j) - b(i, j));
    return std::sqrt(s);
}

std::vector<ComplexVector> draws(const sig::Scenario& sc, std::size_t n, std::uint64_t seed) {
    return sig::sample_clutter(sc, n, Stream(seed)).signals;
}

sig::Scenario noiseless(sig::ClutterKind kind = sig::ClutterKind::cgn, double shape = 1.0) {
    sig::Scenario sc;
    sc.clutter_kind = kind;
    sc.texture_shape = shape;
    sc.cnr_db = INFINITY;
    return sc;
}

ComplexVector random_vector(std::size_t m, Stream& rng) {
    ComplexVector v(m);
    for (auto& x : v) x = rng.complex_normal();
    return v;
}

clx::HermitianMatrix random_pd(std::size_t m, Stream& rng) {
    ComplexMatrix a(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) a(i, j) = rng.complex_normal();
    auto s = clx::matmul(a, a.adjoint());
    for (std::size_t i = 0; i < m; ++i) {
        s(i, i) += 0.1;
        for (std::size_t j = i + 1; j < m; ++j) s(j, i) = std::conj(s(i, j));
    }
    return clx::HermitianMatrix(s);
}

}  // namespace

TEST(Scm, ScaledBasisGivesIdentity) {
    const std::size_t m = 6;
    std::vector<ComplexVector> xs;
    for (std::size_t k = 0; k < m; ++k) {
        ComplexVector e(m);
        e[k] = std::sqrt(double(m));
        xs.push_back(e);
    }
    const auto est = scm(xs);
    EXPECT_LE(frob_diff(est.sigma_hat.matrix(), ComplexMatrix::identity(m)), 1e-14);
    EXPECT_EQ(est.kind, Estimator::scm);
}

TEST(Scm, ErrorsOnRankDeficiency) {
    const std::size_t m = 4;
    Stream rng(1);
    const auto x = random_vector(m, rng);
    EXPECT_THROW(scm(std::vector<ComplexVector>(2 * m, x)), NotPositiveDefinite);
    EXPECT_THROW(scm(std::vector<ComplexVector>(m - 1, x)), NotPositiveDefinite);
}

TEST(Scm, ConvergesToToeplitzCovariance) {
    const auto sc = noiseless();
    const auto est = scm(draws(sc, 100000, 2));
    const auto t = clx::toeplitz(0.5, 16);
    EXPECT_LE(frob_diff(est.sigma_hat.matrix(), t.matrix()) / t.matrix().frobenius_norm(), 0.02);
}

TEST(Tyler, WhitenedDataGivesIdentity) {
    sig::Scenario sc = noiseless();
    sc.rho = 0.0;
    const auto est = tyler(draws(sc, 10000, 3));
    const double rel = frob_diff(est.sigma_hat.matrix(), ComplexMatrix::identity(16)) / 4.0;
    EXPECT_LE(rel, 0.06);
    EXPECT_NEAR(est.sigma_hat.trace(), 16.0, 1e-9);
}

TEST(Tyler, RecoversShapeUnderCompoundClutter) {
    const auto sc = noiseless(sig::ClutterKind::ccgn, 0.5);
    const auto est = tyler(draws(sc, 20000, 4));
    const auto t = clx::toeplitz(0.5, 16);
    EXPECT_LE(frob_diff(est.sigma_hat.matrix(), t.matrix()) / t.matrix().frobenius_norm(), 0.05);
}

TEST(Tyler, InvariantToPerSampleScaling) {
    const auto xs = draws(noiseless(), 40, 5);
    Stream rng(6);
    auto pow2 = xs, arbitrary = xs;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double p = std::ldexp(1.0, int(rng.below(20)) - 10);
        const double c = 1e-3 + 1e3 * rng.uniform();
        for (auto& v : pow2[k]) v *= p;
        for (auto& v : arbitrary[k]) v *= c;
    }
    const auto base = tyler(xs).sigma_hat.matrix();
    EXPECT_EQ(frob_diff(tyler(pow2).sigma_hat.matrix(), base), 0.0);
    EXPECT_LE(frob_diff(tyler(arbitrary).sigma_hat.matrix(), base) / base.frobenius_norm(), 1e-12);
}

TEST(Tyler, ScalarCaseIsOne) {
    Stream rng(7);
    for (int t = 0; t < 10; ++t) {
        std::vector<ComplexVector> xs;
        for (int k = 0; k < 5; ++k) xs.push_back(ComplexVector{3.0 * rng.complex_normal()});
        EXPECT_NEAR(tyler(xs).sigma_hat.matrix()(0, 0).real(), 1.0, 1e-15);
    }
}

TEST(Tyler, Preconditions) {
    Stream rng(8);
    std::vector<ComplexVector> xs;
    for (int k = 0; k < 4; ++k) xs.push_back(random_vector(4, rng));
    EXPECT_THROW(tyler(xs), ConfigError);
    xs.push_back(ComplexVector(4));
    EXPECT_THROW(tyler(xs), ConfigError);
    xs.back() = random_vector(4, rng);
    try {
        tyler(xs, {1e-300, 2});
        FAIL() << "expected TylerNotConverged";
    } catch (const TylerNotConverged& e) {
        EXPECT_EQ(e.iterations(), 2u);
        EXPECT_GT(e.residual(), 0.0);
        EXPECT_EQ(e.last_iterate().size(), 4u);
        EXPECT_EQ(e.kind(), ErrorKind::numeric);
    }
}

TEST(Tyler, ConvergesOnRandomTrials) {
    const auto sc = noiseless(sig::ClutterKind::ccgn, 0.5);
    Stream root(9);
    std::size_t worst = 0;
    for (std::size_t t = 0; t < 1000; ++t) {
        const auto est = tyler(sig::sample_clutter(sc, 32, root.child(t)).signals);
        EXPECT_LE(est.final_change, 1e-8);
        worst = std::max(worst, est.iterations);
    }
    EXPECT_LE(worst, 100u);
}

TEST(Anmf, CauchySchwarzCases) {
    Stream rng(10);
    const std::size_t m = 8;
    for (int t = 0; t < 50; ++t) {
        const auto s = random_pd(m, rng);
        const auto p = random_vector(m, rng);
        auto x = p;
        const cplx c = rng.complex_normal();
        for (auto& v : x) v *= c;
        EXPECT_NEAR(anmf(x, p, s), 1.0, 1e-12);

        // Σ⁻¹-orthogonal: x = y − (pᴴΣ⁻¹y / pᴴΣ⁻¹p) p
        const clx::Cholesky ch(s);
        const auto y = random_vector(m, rng);
        const cplx coef = ch.bilinear(p.span(), y.span()) / ch.quad_form(p.span());
        ComplexVector o = y;
        for (std::size_t i = 0; i < m; ++i) o[i] -= coef * p[i];
        EXPECT_NEAR(anmf(o, p, ch), 0.0, 1e-12);

        const double base = anmf(y, p, ch);
        EXPECT_GE(base, 0.0);
        EXPECT_LE(base, 1.0);
        // i·2^k scalings are exact in floating point; others round.
        auto ys = y;
        for (auto& v : ys) v *= cplx(0.0, -0.5);
        auto ps = p;
        for (auto& v : ps) v *= 4.0;
        EXPECT_EQ(anmf(ys, ps, ch), base);
        auto yc = y;
        for (auto& v : yc) v *= cplx(0.7, -1.3);
        EXPECT_NEAR(anmf(yc, p, ch), base, 1e-14);
        EXPECT_NEAR(anmf(y, p, s), base, 1e-12);
    }
    EXPECT_THROW(anmf(ComplexVector(m), random_vector(m, rng), random_pd(m, rng)), ConfigError);
}

TEST(Anmf, JointScalingInvarianceWithTyler) {
    Stream rng(11);
    const auto sec = draws(noiseless(), 32, 12);
    const auto cell = random_vector(16, rng);
    const auto p = sig::steering_vector(16, 3);
    const double base = anmf(cell, p, tyler(sec).sigma_hat);
    auto sec2 = sec;
    for (auto& x : sec2)
        for (auto& v : x) v *= 8.0;
    auto cell2 = cell;
    for (auto& v : cell2) v *= 0.25;
    EXPECT_EQ(anmf(cell2, p, tyler(sec2).sigma_hat), base);
}

TEST(AnmfDetector, Validation) {
    sig::Scenario sc;
    EXPECT_THROW(AnmfDetector(sc, 8, Estimator::tyler), ConfigError);
    AnmfDetector det(sc, 32, Estimator::tyler);
    Stream rng(13);
    EXPECT_THROW(det.score(ComplexVector(16), 16, rng), ConfigError);
    EXPECT_EQ(estimator_from_string(to_string(Estimator::tyler)), Estimator::tyler);
}

namespace {

// Empirical Pfa at α=0.05 with calibration and test sets of n trials each.
std::pair<double, double> detector_pfa(const sig::Scenario& cal_sc, const sig::Scenario& test_sc, Estimator kind,
                                       std::size_t n) {
    auto run = [&](const sig::Scenario& sc, std::uint64_t seed) {
        AnmfDetector det(sc, 2 * sc.m, kind);
        sig::ClutterSampler sampler(sc);
        Stream root(seed);
        std::vector<double> s(n);
        for (std::size_t t = 0; t < n; ++t) {
            Stream trial = root.child(t);
            Stream cell_rng = trial.child(0);
            Stream sec_rng = trial.child(1);
            s[t] = det.score(sampler.draw(cell_rng), t % sc.m, sec_rng);
        }
        return s;
    };
    const auto thr = scores::calibrate(run(cal_sc, 14), 0.05, scores::ScoreKind::anmf);
    const auto test = run(test_sc, 15);
    double hits = 0;
    for (double v : test) hits += scores::decide(v, thr) == sig::Label::h1;
    const double sd = std::sqrt(2 * 0.05 * 0.95 / double(n));
    return {hits / double(n), sd};
}

}  // namespace

TEST(AnmfDetector, HeldOutPfaMatchesTarget) {
    const sig::Scenario sc;
    for (auto kind : {Estimator::scm, Estimator::tyler}) {
        const auto [pfa, sd] = detector_pfa(sc, sc, kind, 3000);
        EXPECT_NEAR(pfa, 0.05, 3 * sd) << to_string(kind);
    }
}

TEST(AnmfDetector, TylerPfaInsensitiveToTexture) {
    const auto ref = noiseless(sig::ClutterKind::ccgn, 1.0);
    for (double shape : {0.5, 2.0}) {
        const auto [pfa, sd] = detector_pfa(ref, noiseless(sig::ClutterKind::ccgn, shape), Estimator::tyler, 3000);
        EXPECT_NEAR(pfa, 0.05, 3 * sd) << "shape " << shape;
    }
}

TEST(AnmfDetector, DetectsStrongTarget) {
    sig::Scenario sc;
    sc.snr_db = 20;
    sc.doppler_bin = 5;
    AnmfDetector det(sc, 32, Estimator::tyler);
    sig::ClutterSampler sampler(sc);
    Stream root(16);
    double mean = 0;
    for (int t = 0; t < 200; ++t) {
        Stream r = root.child(t);
        const auto cell = sig::add_target(sampler.draw(r), sc, 0.3);
        Stream sec = root.child(1000 + t);
        mean += det.score(cell, 5, sec);
    }
    EXPECT_GT(mean / 200, 0.5);
}
