#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "radood/classical.hpp"
#include "radood/cvae.hpp"
#include "radood/scores.hpp"
#include "radood/sigmodel.hpp"

#include <json.hpp>

namespace radood::bench {

/// A scoring rule that maps cells under test to real scores; larger means
/// more target-like. Implementations must be safe to call concurrently.
class Detector {
  public:
    virtual ~Detector() = default;
    virtual std::string id() const = 0;
    virtual scores::ScoreKind kind() const = 0;

    /// out[i] = score of cells[i] tested at Doppler bin bins[i]; rngs[i] feeds
    /// any randomness the detector needs for that trial.
    virtual void score(std::span<const clx::ComplexVector> cells, std::span<const std::size_t> bins,
                       std::span<const Stream> rngs, std::span<double> out) const = 0;
};

class MseDetector final : public Detector {
  public:
    explicit MseDetector(std::shared_ptr<const vae::CvaeModel> model);
    std::string id() const override { return "cvae_mse"; }
    scores::ScoreKind kind() const override { return scores::ScoreKind::mse; }
    void score(std::span<const clx::ComplexVector> cells, std::span<const std::size_t> bins,
               std::span<const Stream> rngs, std::span<double> out) const override;

  private:
    std::shared_ptr<const vae::CvaeModel> model_;
};

class KlDetector final : public Detector {
  public:
    KlDetector(std::shared_ptr<const vae::CvaeModel> model, scores::EmpiricalNullKL null);
    std::string id() const override { return "kld"; }
    scores::ScoreKind kind() const override { return scores::ScoreKind::kl; }
    void score(std::span<const clx::ComplexVector> cells, std::span<const std::size_t> bins,
               std::span<const Stream> rngs, std::span<double> out) const override;
    const scores::EmpiricalNullKL& null() const noexcept { return null_; }

  private:
    std::shared_ptr<const vae::CvaeModel> model_;
    scores::EmpiricalNullKL null_;
};

class MahaDetector final : public Detector {
  public:
    MahaDetector(std::shared_ptr<const vae::CvaeModel> model, scores::EmpiricalNullMaha null,
                 scores::LatentMode mode = scores::LatentMode::sample);
    std::string id() const override { return "mahalanobis"; }
    scores::ScoreKind kind() const override { return scores::ScoreKind::maha; }
    void score(std::span<const clx::ComplexVector> cells, std::span<const std::size_t> bins,
               std::span<const Stream> rngs, std::span<double> out) const override;
    const scores::EmpiricalNullMaha& null() const noexcept { return null_; }

  private:
    std::shared_ptr<const vae::CvaeModel> model_;
    scores::EmpiricalNullMaha null_;
    scores::LatentMode mode_;
};

class AnmfDetector final : public Detector {
  public:
    AnmfDetector(const sig::Scenario& clutter, std::size_t secondary_count, classical::Estimator kind);
    std::string id() const override { return "anmf_fp"; }
    scores::ScoreKind kind() const override { return scores::ScoreKind::anmf; }
    void score(std::span<const clx::ComplexVector> cells, std::span<const std::size_t> bins,
               std::span<const Stream> rngs, std::span<double> out) const override;
    const classical::AnmfDetector& inner() const noexcept { return inner_; }

  private:
    classical::AnmfDetector inner_;
};

struct SweepConfig {
    sig::Scenario scenario;                            // clutter law; snr_db and doppler_bin are overridden
    std::vector<double> snr_db{0, 5, 10, 15, 20, 25};
    std::vector<std::size_t> doppler_bins;             // empty = all of 0..m-1
    std::size_t trials = 2000;
    double pfa = 1e-2;
    std::size_t n_cal = 5000;
    std::size_t pfa_trials = 100000;                   // held-out H0 block; 0 skips it
    std::uint64_t seed = 0;
    bool common_random_numbers = false;
    std::size_t threads = 0;                           // 0 = hardware concurrency

    void validate() const;
    std::vector<std::size_t> bins() const;
};

nlohmann::json to_json(const sig::Scenario& s);
sig::Scenario scenario_from_json(const nlohmann::json& j, sig::Scenario base = {});
nlohmann::json to_json(const SweepConfig& c);
SweepConfig sweep_config_from_json(const nlohmann::json& j, SweepConfig base = {});

/// dB values travel as numbers, or as "inf"/"-inf" strings.
nlohmann::json db_to_json(double db);
double db_from_json(const nlohmann::json& j);

struct Interval {
    double lo = 0.0, hi = 1.0;
};

/// Two-sided 95% Wilson score interval for k successes in n trials.
Interval wilson(std::size_t k, std::size_t n);

struct GridPoint {
    double snr_db = 0.0;
    std::size_t doppler_bin = 0;
    std::size_t trials = 0;
    std::size_t detections = 0;
    double pd = 0.0;
    Interval ci;
};

struct PfaCheck {
    std::size_t trials = 0;
    std::size_t false_alarms = 0;
    double pfa = 0.0;
    Interval ci;
    double target = 0.0;
    bool within_3sigma = false;  // counts both held-out and calibration sampling spread
};

struct CurvePoint {
    double snr_db = 0.0;
    std::size_t trials = 0;
    std::size_t detections = 0;
    double pd = 0.0;
    Interval ci;
};
using Curve = std::vector<CurvePoint>;

struct Views {
    std::optional<Curve> mean_excluding_0;  // pooled over bins != 0
    std::optional<Curve> doppler_0;
};

struct DetectorReport {
    std::string detector;
    scores::Threshold threshold;
    std::vector<GridPoint> points;  // snr-major, bins in config order
    std::optional<PfaCheck> pfa;
    Views views;
    std::uint64_t seed = 0;
    std::size_t detector_index = 0;
};

/// Per-trial stream: root.child({tag, detector or 0 under CRN, ...}).
enum StreamTag : std::uint64_t { kCalibration = 10, kH1 = 11, kH0 = 12 };

/// Scores n_cal fresh H0 cells and returns the percentile threshold.
scores::Threshold calibrate_detector(const Detector& det, const SweepConfig& config, std::size_t detector_index);

/// Raw H0 calibration scores, for callers that keep them.
std::vector<double> h0_scores(const Detector& det, const SweepConfig& config, std::size_t detector_index,
                              StreamTag tag, std::size_t n);

DetectorReport run_sweep(const SweepConfig& config, const Detector& det, const scores::Threshold& threshold,
                         std::size_t detector_index);

/// Throws ConfigError when the table is incomplete or neither view can be formed.
Views report_views(const DetectorReport& report);

struct RankEntry {
    std::string detector;
    std::size_t rank = 1;  // ties share a rank
    double pd = 0.0;
    Interval ci;
    bool significant_vs_next = false;  // 95% intervals of this and the next entry do not overlap
};

struct RankRow {
    std::string view;  // "mean_excluding_0" or "doppler_0"
    double snr_db = 0.0;
    std::vector<RankEntry> entries;
};

std::vector<RankRow> compare(std::span<const DetectorReport> reports);

/// CSV columns: detector,snr_db,doppler_bin,trials,detections,pd,ci_lo,ci_hi
std::string to_csv(std::span<const DetectorReport> reports);
std::string comparison_csv(std::span<const RankRow> rows);
nlohmann::json manifest(const SweepConfig& config, std::span<const DetectorReport> reports);

/// Shortest round-trip decimal form; "inf"/"-inf"/"nan" for non-finite values.
std::string format_double(double v);

}  // namespace radood::bench
