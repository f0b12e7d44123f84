#include "radood/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

#include "radood/error.hpp"

namespace radood::bench {

using clx::ComplexVector;

MseDetector::MseDetector(std::shared_ptr<const vae::CvaeModel> model) : model_(std::move(model)) {
    if (!model_) throw ConfigError("cvae_mse detector: no model");
}

void MseDetector::score(std::span<const ComplexVector> cells, std::span<const std::size_t>, std::span<const Stream>,
                        std::span<double> out) const {
    const auto s = scores::score_mse_batch(*model_, cells);
    std::copy(s.begin(), s.end(), out.begin());
}

KlDetector::KlDetector(std::shared_ptr<const vae::CvaeModel> model, scores::EmpiricalNullKL null)
    : model_(std::move(model)), null_(std::move(null)) {
    if (!model_) throw ConfigError("kld detector: no model");
    if (null_.q() != model_->q()) throw ConfigError("kld detector: null q differs from the model latent size");
}

void KlDetector::score(std::span<const ComplexVector> cells, std::span<const std::size_t>, std::span<const Stream>,
                       std::span<double> out) const {
    const auto posts = model_->encode_batch(cells);
    for (std::size_t i = 0; i < posts.size(); ++i) out[i] = scores::score_kl(null_, posts[i]);
}

MahaDetector::MahaDetector(std::shared_ptr<const vae::CvaeModel> model, scores::EmpiricalNullMaha null,
                           scores::LatentMode mode)
    : model_(std::move(model)), null_(std::move(null)), mode_(mode) {
    if (!model_) throw ConfigError("mahalanobis detector: no model");
    if (null_.mu_ref.size() != model_->q())
        throw ConfigError("mahalanobis detector: null dimension differs from the model latent size");
    null_.refactor();
}

void MahaDetector::score(std::span<const ComplexVector> cells, std::span<const std::size_t>,
                         std::span<const Stream> rngs, std::span<double> out) const {
    const auto posts = model_->encode_batch(cells);
    for (std::size_t i = 0; i < posts.size(); ++i) {
        if (mode_ == scores::LatentMode::mean) {
            out[i] = scores::score_maha(null_, posts[i].mu);
        } else {
            Stream s = rngs[i];
            out[i] = scores::score_maha(null_, vae::reparameterize(posts[i], s));
        }
    }
}

AnmfDetector::AnmfDetector(const sig::Scenario& clutter, std::size_t secondary_count, classical::Estimator kind)
    : inner_(clutter, secondary_count, kind) {}

void AnmfDetector::score(std::span<const ComplexVector> cells, std::span<const std::size_t> bins,
                         std::span<const Stream> rngs, std::span<double> out) const {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        Stream s = rngs[i];
        out[i] = inner_.score(cells[i], bins[i], s);
    }
}

// ---------------------------------------------------------------------------

void SweepConfig::validate() const {
    scenario.validate();
    if (snr_db.empty()) throw ConfigError("sweep: snr grid is empty");
    for (double s : snr_db)
        if (std::isnan(s) || s == INFINITY) throw ConfigError("sweep: snr values must be finite or -inf");
    for (auto b : doppler_bins)
        if (b >= scenario.m) throw ConfigError("sweep: doppler bin " + std::to_string(b) + " >= m");
    if (std::set<std::size_t>(doppler_bins.begin(), doppler_bins.end()).size() != doppler_bins.size())
        throw ConfigError("sweep: duplicate doppler bins");
    if (trials < 100) throw ConfigError("sweep: trials per point must be >= 100");
    if (!(pfa > 0.0 && pfa < 0.5)) throw ConfigError("sweep: pfa must lie in (0, 0.5)");
    if (n_cal == 0) throw ConfigError("sweep: calibration set size must be positive");
}

std::vector<std::size_t> SweepConfig::bins() const {
    if (!doppler_bins.empty()) return doppler_bins;
    std::vector<std::size_t> all(scenario.m);
    for (std::size_t d = 0; d < all.size(); ++d) all[d] = d;
    return all;
}

nlohmann::json db_to_json(double db) {
    if (std::isinf(db)) return db > 0 ? "inf" : "-inf";
    return db;
}

double db_from_json(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf") return INFINITY;
        if (s == "-inf") return -INFINITY;
    }
    throw ConfigError("expected a dB value (number, \"inf\" or \"-inf\"), got " + j.dump());
}

namespace {

template <typename T>
T get_field(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (const auto& [k, v] : j.items()) {
        const bool ok = std::any_of(known.begin(), known.end(), [&](const char* n) { return k == n; });
        if (!ok) throw ConfigError(std::string(where) + ": unknown field '" + k + "'");
    }
}

}  // namespace

nlohmann::json to_json(const sig::Scenario& s) {
    return {{"m", s.m},
            {"rho", s.rho},
            {"clutter", sig::to_string(s.clutter_kind)},
            {"texture_shape", s.texture_shape},
            {"cnr_db", db_to_json(s.cnr_db)},
            {"snr_db", db_to_json(s.snr_db)},
            {"doppler_bin", s.doppler_bin},
            {"seed", s.seed}};
}

sig::Scenario scenario_from_json(const nlohmann::json& j, sig::Scenario s) {
    reject_unknown(j, {"m", "rho", "clutter", "texture_shape", "cnr_db", "snr_db", "doppler_bin", "seed"},
                   "scenario");
    if (j.contains("m")) s.m = get_field<std::size_t>(j, "m");
    if (j.contains("rho")) s.rho = get_field<double>(j, "rho");
    if (j.contains("clutter")) s.clutter_kind = sig::clutter_kind_from_string(get_field<std::string>(j, "clutter"));
    if (j.contains("texture_shape")) s.texture_shape = get_field<double>(j, "texture_shape");
    if (j.contains("cnr_db")) s.cnr_db = db_from_json(j.at("cnr_db"));
    if (j.contains("snr_db")) s.snr_db = db_from_json(j.at("snr_db"));
    if (j.contains("doppler_bin")) s.doppler_bin = get_field<std::size_t>(j, "doppler_bin");
    if (j.contains("seed")) s.seed = get_field<std::uint64_t>(j, "seed");
    return s;
}

nlohmann::json to_json(const SweepConfig& c) {
    nlohmann::json snr = nlohmann::json::array();
    for (double s : c.snr_db) snr.push_back(db_to_json(s));
    return {{"scenario", to_json(c.scenario)},
            {"snr_db", snr},
            {"doppler_bins", c.bins()},
            {"trials", c.trials},
            {"pfa", c.pfa},
            {"n_cal", c.n_cal},
            {"pfa_trials", c.pfa_trials},
            {"seed", c.seed},
            {"common_random_numbers", c.common_random_numbers}};
}

SweepConfig sweep_config_from_json(const nlohmann::json& j, SweepConfig c) {
    reject_unknown(j,
                   {"scenario", "snr_db", "doppler_bins", "trials", "pfa", "n_cal", "pfa_trials", "seed",
                    "common_random_numbers"},
                   "sweep");
    if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"), c.scenario);
    if (j.contains("snr_db")) {
        c.snr_db.clear();
        for (const auto& v : j.at("snr_db")) c.snr_db.push_back(db_from_json(v));
    }
    if (j.contains("doppler_bins")) c.doppler_bins = get_field<std::vector<std::size_t>>(j, "doppler_bins");
    if (j.contains("trials")) c.trials = get_field<std::size_t>(j, "trials");
    if (j.contains("pfa")) c.pfa = get_field<double>(j, "pfa");
    if (j.contains("n_cal")) c.n_cal = get_field<std::size_t>(j, "n_cal");
    if (j.contains("pfa_trials")) c.pfa_trials = get_field<std::size_t>(j, "pfa_trials");
    if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed");
    if (j.contains("common_random_numbers")) c.common_random_numbers = get_field<bool>(j, "common_random_numbers");
    return c;
}

Interval wilson(std::size_t k, std::size_t n) {
    if (n == 0) return {0.0, 1.0};
    constexpr double z = 1.959963984540054;
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(k) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double centre = (p + z2 / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    return {k == 0 ? 0.0 : std::max(0.0, centre - half), k == n ? 1.0 : std::min(1.0, centre + half)};
}

namespace {

constexpr std::size_t kChunk = 256;

// Runs f(begin, end) over [0, n) in fixed chunks. Chunk results must be
// written to disjoint, index-addressed storage; errors rethrow in chunk order.
template <typename F>
void parallel_chunks(std::size_t n, std::size_t threads, F&& f) {
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, chunks);
    if (threads <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) f(c * kChunk, std::min(n, (c + 1) * kChunk));
        return;
    }
    std::vector<std::exception_ptr> errors(chunks);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (std::size_t c; !failed && (c = next++) < chunks;) {
            try {
                f(c * kChunk, std::min(n, (c + 1) * kChunk));
            } catch (...) {
                errors[c] = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct TrialBatch {
    std::vector<ComplexVector> cells;
    std::vector<std::size_t> bins;
    std::vector<Stream> rngs;
};

// Trial stream layout: cell clutter from child(0), target phase from
// child(1), detector randomness from child(2).
void push_trial(TrialBatch& b, const sig::ClutterSampler& sampler, const Stream& trial, std::size_t bin,
                const sig::Scenario* target) {
    Stream cell_rng = trial.child(0);
    ComplexVector cell = sampler.draw(cell_rng);
    if (target) {
        Stream phase = trial.child(1);
        cell = sig::add_target(cell, *target, phase.uniform());
    }
    b.cells.push_back(std::move(cell));
    b.bins.push_back(bin);
    b.rngs.push_back(trial.child(2));
}

[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context) {
    const std::string msg = context + ": " + e.what();
    switch (e.kind()) {
        case ErrorKind::config: throw ConfigError(msg);
        case ErrorKind::numeric: throw NumericError(msg);
        case ErrorKind::io: throw IoError(msg);
    }
    throw Error(e.kind(), msg);
}

std::uint64_t stream_owner(const SweepConfig& c, std::size_t det) { return c.common_random_numbers ? 0 : det; }

}  // namespace

std::vector<double> h0_scores(const Detector& det, const SweepConfig& config, std::size_t detector_index,
                              StreamTag tag, std::size_t n) {
    config.validate();
    const sig::ClutterSampler sampler(config.scenario);
    const Stream root(config.seed);
    const std::uint64_t owner = stream_owner(config, detector_index);
    const std::size_t m = config.scenario.m;
    std::vector<double> out(n);
    try {
        parallel_chunks(n, config.threads, [&](std::size_t b, std::size_t e) {
            TrialBatch batch;
            for (std::size_t t = b; t < e; ++t) push_trial(batch, sampler, root.child({tag, owner, t}), t % m, nullptr);
            det.score(batch.cells, batch.bins, batch.rngs, std::span<double>(out).subspan(b, e - b));
        });
    } catch (const Error& e) {
        rethrow_with_context(e, det.id() + (tag == kCalibration ? " calibration" : " H0 block"));
    }
    for (double v : out)
        if (std::isnan(v)) throw NumericError(det.id() + ": NaN score on H0 data");
    return out;
}

scores::Threshold calibrate_detector(const Detector& det, const SweepConfig& config, std::size_t detector_index) {
    const auto s = h0_scores(det, config, detector_index, kCalibration, config.n_cal);
    return scores::calibrate(s, config.pfa, det.kind());
}

DetectorReport run_sweep(const SweepConfig& config, const Detector& det, const scores::Threshold& threshold,
                         std::size_t detector_index) {
    config.validate();
    const sig::ClutterSampler sampler(config.scenario);
    const Stream root(config.seed);
    const std::uint64_t owner = stream_owner(config, detector_index);
    const auto bins = config.bins();

    DetectorReport rep;
    rep.detector = det.id();
    rep.threshold = threshold;
    rep.seed = config.seed;
    rep.detector_index = detector_index;

    for (std::size_t si = 0; si < config.snr_db.size(); ++si) {
        for (std::size_t bin : bins) {
            sig::Scenario point = config.scenario;
            point.snr_db = config.snr_db[si];
            point.doppler_bin = bin;
            std::vector<double> s(config.trials);
            try {
                parallel_chunks(config.trials, config.threads, [&](std::size_t b, std::size_t e) {
                    TrialBatch batch;
                    for (std::size_t t = b; t < e; ++t)
                        push_trial(batch, sampler, root.child({kH1, owner, si, bin, t}), bin, &point);
                    det.score(batch.cells, batch.bins, batch.rngs, std::span<double>(s).subspan(b, e - b));
                });
            } catch (const Error& e) {
                rethrow_with_context(e, det.id() + " at snr_db=" + format_double(point.snr_db) +
                                            ", doppler_bin=" + std::to_string(bin));
            }
            GridPoint g;
            g.snr_db = point.snr_db;
            g.doppler_bin = bin;
            g.trials = config.trials;
            for (double v : s) {
                if (std::isnan(v))
                    throw NumericError(det.id() + ": NaN score at snr_db=" + format_double(point.snr_db) +
                                       ", doppler_bin=" + std::to_string(bin));
                g.detections += scores::decide(v, threshold) == sig::Label::h1;
            }
            g.pd = static_cast<double>(g.detections) / static_cast<double>(g.trials);
            g.ci = wilson(g.detections, g.trials);
            rep.points.push_back(g);
        }
    }

    if (config.pfa_trials > 0) {
        const auto s = h0_scores(det, config, detector_index, kH0, config.pfa_trials);
        PfaCheck c;
        c.trials = s.size();
        for (double v : s) c.false_alarms += scores::decide(v, threshold) == sig::Label::h1;
        c.pfa = static_cast<double>(c.false_alarms) / static_cast<double>(c.trials);
        c.ci = wilson(c.false_alarms, c.trials);
        c.target = threshold.target_pfa;
        // Held-out binomial spread plus the spread of the calibrated quantile.
        double inv_n = 1.0 / static_cast<double>(c.trials);
        if (threshold.n_cal > 0) inv_n += 1.0 / static_cast<double>(threshold.n_cal);
        const double sd = std::sqrt(c.target * (1.0 - c.target) * inv_n);
        c.within_3sigma = std::abs(c.pfa - c.target) <= 3.0 * sd;
        rep.pfa = c;
    }

    bool has0 = false, hasother = false;
    for (auto b : bins) (b == 0 ? has0 : hasother) = true;
    if (has0 || hasother) rep.views = report_views(rep);
    return rep;
}

Views report_views(const DetectorReport& report) {
    if (report.points.empty()) throw ConfigError("report_views: empty report");
    std::vector<double> snrs;
    std::vector<std::size_t> bins;
    for (const auto& p : report.points) {
        if (std::find(snrs.begin(), snrs.end(), p.snr_db) == snrs.end()) snrs.push_back(p.snr_db);
        if (std::find(bins.begin(), bins.end(), p.doppler_bin) == bins.end()) bins.push_back(p.doppler_bin);
    }
    if (report.points.size() != snrs.size() * bins.size())
        throw ConfigError("report_views: table is missing (snr, doppler) cells");
    auto find = [&](double snr, std::size_t bin) -> const GridPoint& {
        for (const auto& p : report.points)
            if (p.snr_db == snr && p.doppler_bin == bin) return p;
        throw ConfigError("report_views: missing cell snr_db=" + format_double(snr) +
                          ", doppler_bin=" + std::to_string(bin));
    };
    const bool has0 = std::find(bins.begin(), bins.end(), 0u) != bins.end();
    const bool hasother = std::any_of(bins.begin(), bins.end(), [](auto b) { return b != 0; });
    Views v;
    if (hasother) {
        Curve c;
        for (double snr : snrs) {
            CurvePoint cp;
            cp.snr_db = snr;
            for (auto b : bins) {
                if (b == 0) continue;
                const auto& g = find(snr, b);
                cp.trials += g.trials;
                cp.detections += g.detections;
            }
            cp.pd = static_cast<double>(cp.detections) / static_cast<double>(cp.trials);
            cp.ci = wilson(cp.detections, cp.trials);
            c.push_back(cp);
        }
        v.mean_excluding_0 = std::move(c);
    }
    if (has0) {
        Curve c;
        for (double snr : snrs) {
            const auto& g = find(snr, 0);
            c.push_back({snr, g.trials, g.detections, g.pd, g.ci});
        }
        v.doppler_0 = std::move(c);
    }
    return v;
}

std::vector<RankRow> compare(std::span<const DetectorReport> reports) {
    if (reports.empty()) throw ConfigError("compare: no reports");
    const auto& ref = reports.front();
    for (const auto& r : reports) {
        bool same = r.points.size() == ref.points.size();
        for (std::size_t i = 0; same && i < r.points.size(); ++i)
            same = r.points[i].snr_db == ref.points[i].snr_db && r.points[i].doppler_bin == ref.points[i].doppler_bin &&
                   r.points[i].trials == ref.points[i].trials;
        if (!same) throw ConfigError("compare: report '" + r.detector + "' uses a different grid than '" +
                                     ref.detector + "'");
    }
    std::vector<Views> views;
    for (const auto& r : reports) views.push_back(report_views(r));

    std::vector<RankRow> rows;
    auto add_view = [&](const char* name, auto getter) {
        if (!getter(views.front())) return;
        const Curve& first = *getter(views.front());
        for (std::size_t si = 0; si < first.size(); ++si) {
            RankRow row{name, first[si].snr_db, {}};
            for (std::size_t r = 0; r < reports.size(); ++r) {
                const auto& cp = (*getter(views[r]))[si];
                row.entries.push_back({reports[r].detector, 0, cp.pd, cp.ci, false});
            }
            std::stable_sort(row.entries.begin(), row.entries.end(),
                             [](const RankEntry& a, const RankEntry& b) { return a.pd > b.pd; });
            for (std::size_t i = 0; i < row.entries.size(); ++i) {
                row.entries[i].rank = (i > 0 && row.entries[i].pd == row.entries[i - 1].pd) ? row.entries[i - 1].rank
                                                                                             : i + 1;
                if (i + 1 < row.entries.size())
                    row.entries[i].significant_vs_next = row.entries[i].ci.lo > row.entries[i + 1].ci.hi;
            }
            rows.push_back(std::move(row));
        }
    };
    add_view("mean_excluding_0", [](const Views& v) { return v.mean_excluding_0 ? &*v.mean_excluding_0 : nullptr; });
    add_view("doppler_0", [](const Views& v) { return v.doppler_0 ? &*v.doppler_0 : nullptr; });
    return rows;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string to_csv(std::span<const DetectorReport> reports) {
    std::ostringstream os;
    os << "detector,snr_db,doppler_bin,trials,detections,pd,ci_lo,ci_hi\n";
    for (const auto& r : reports)
        for (const auto& g : r.points)
            os << r.detector << ',' << format_double(g.snr_db) << ',' << g.doppler_bin << ',' << g.trials << ','
               << g.detections << ',' << format_double(g.pd) << ',' << format_double(g.ci.lo) << ','
               << format_double(g.ci.hi) << '\n';
    return os.str();
}

std::string comparison_csv(std::span<const RankRow> rows) {
    std::ostringstream os;
    os << "view,snr_db,rank,detector,pd,ci_lo,ci_hi,significant_vs_next\n";
    for (const auto& row : rows)
        for (const auto& e : row.entries)
            os << row.view << ',' << format_double(row.snr_db) << ',' << e.rank << ',' << e.detector << ','
               << format_double(e.pd) << ',' << format_double(e.ci.lo) << ',' << format_double(e.ci.hi) << ','
               << (e.significant_vs_next ? 1 : 0) << '\n';
    return os.str();
}

nlohmann::json manifest(const SweepConfig& config, std::span<const DetectorReport> reports) {
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json d{{"detector", r.detector},
                         {"detector_index", r.detector_index},
                         {"threshold", scores::to_json(r.threshold)},
                         {"seed", r.seed}};
        if (r.pfa) {
            d["empirical_pfa"] = {{"trials", r.pfa->trials},         {"false_alarms", r.pfa->false_alarms},
                                  {"pfa", r.pfa->pfa},               {"ci_lo", r.pfa->ci.lo},
                                  {"ci_hi", r.pfa->ci.hi},           {"target", r.pfa->target},
                                  {"within_3sigma", r.pfa->within_3sigma}};
        }
        dets.push_back(std::move(d));
    }
    return {{"format", "radood-report"}, {"version", 1}, {"config", to_json(config)}, {"detectors", dets}};
}

}  // namespace radood::bench
