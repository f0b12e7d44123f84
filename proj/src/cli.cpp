#include "radood/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "radood/bench.hpp"
#include "radood/classical.hpp"
#include "radood/cvae.hpp"
#include "radood/error.hpp"
#include "radood/scores.hpp"
#include "radood/sigmodel.hpp"

namespace radood::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDetectorOrder[] = {"cvae_mse", "kld", "mahalanobis", "anmf_fp"};

std::size_t detector_index(scores::ScoreKind k) { return static_cast<std::size_t>(k); }

struct Preset {
    std::size_t q;
    double beta;
};

Preset preset(const std::string& name) {
    if (name == "mse") return {12, 1e2};
    if (name == "latent") return {32, 1e-3};
    throw ConfigError("train.preset must be 'mse' or 'latent', got '" + name + "'");
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Free-form sections, validated later by the command that reads them.
bool free_form(const std::string& path) { return path == "evaluate.sweep"; }

// Strict recursive merge: keys must already exist in base.
void merge_into(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [k, v] : patch.items()) {
        const std::string path = where.empty() ? k : where + "." + k;
        if (!base.contains(k)) throw ConfigError("unknown config key '" + path + "'");
        json& slot = base[k];
        if (free_form(path) && v.is_object())
            slot.merge_patch(v);
        else if (slot.is_object() && v.is_object())
            merge_into(slot, v, path);
        else
            slot = v;
    }
}

json parse_scalar(const std::string& raw) {
    try {
        return json::parse(raw);
    } catch (const json::parse_error&) {
        return raw;
    }
}

json patch_for(const std::string& dotted, json value) {
    if (dotted.empty()) throw ConfigError("--set: empty key");
    std::vector<std::string> parts;
    std::stringstream ss(dotted);
    for (std::string p; std::getline(ss, p, '.');) {
        if (p.empty()) throw ConfigError("--set: malformed key '" + dotted + "'");
        parts.push_back(p);
    }
    json patch = std::move(value);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    return patch;
}

fs::path resolve_path(const json& cfg, const std::string& p) {
    if (p.empty()) throw ConfigError("empty path in config");
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(cfg.at("output_dir").get<std::string>()) / path;
}

std::string read_text(const fs::path& p, const char* what) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError(std::string(what) + ": cannot read '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::error_code ec;
    if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out << text;
    out.close();
    if (!out) throw IoError("write failed for '" + p.string() + "'");
}

json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(what + ": invalid JSON: " + e.what());
    }
}

void write_manifest(const fs::path& primary, const std::string& command, const json& cfg) {
    json m{{"command", command}, {"config", cfg}};
    write_text(fs::path(primary.string() + ".config.json"), m.dump(2) + "\n");
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw IoError(std::string(what) + " not found: '" + p.string() + "'");
}

template <typename T>
T field(const json& section, const char* key, const char* where) {
    try {
        return section.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

void cmd_generate(const json& cfg, std::ostream& out) {
    const json& g = cfg.at("generate");
    const sig::Scenario sc = bench::scenario_from_json(g.at("scenario"));
    sc.validate();
    const auto count = field<std::size_t>(g, "count", "generate");
    if (count == 0) throw ConfigError("generate.count must be positive");
    const bool target = field<bool>(g, "target", "generate");
    const fs::path path = resolve_path(cfg, field<std::string>(g, "output", "generate"));

    const Stream root(sc.seed);
    auto batch = sig::sample_clutter(sc, count, root.child(0));
    if (target) batch = sig::inject_target(batch, sc, root.child(1));
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    sig::write_iq(path, batch.signals, sc.m);
    write_manifest(path, "generate", cfg);
    out << "generate: " << count << (target ? " H1" : " H0") << " signals (" << sig::to_string(sc.clutter_kind)
        << ", m=" << sc.m << ") -> " << path.string() << "\n";
}

void cmd_train(const json& cfg, std::ostream& out) {
    const json& t = cfg.at("train");
    vae::TrainConfig tc;
    tc.epochs = field<std::size_t>(t, "epochs", "train");
    tc.lr = field<double>(t, "lr", "train");
    tc.batch_size = field<std::size_t>(t, "batch_size", "train");
    tc.beta = field<double>(t, "beta", "train");
    tc.q = field<std::size_t>(t, "q", "train");
    tc.seed = field<std::uint64_t>(t, "seed", "train");
    tc.train_fraction = field<double>(t, "train_fraction", "train");
    tc.validate();
    const bool resume = field<bool>(t, "resume", "train");
    const fs::path data_path = resolve_path(cfg, field<std::string>(t, "dataset", "train"));
    const fs::path ckpt = resolve_path(cfg, field<std::string>(t, "checkpoint", "train"));
    const fs::path log_path = resolve_path(cfg, field<std::string>(t, "log", "train"));

    require_file(data_path, "train: dataset");
    const auto data = sig::load_iq(data_path);
    if (data.signals.empty()) throw ConfigError("train: dataset is empty");
    const std::size_t m = data.signals.front().size();

    std::optional<vae::CvaeModel> model;
    const bool resuming = resume && fs::exists(ckpt);
    if (resuming) {
        model.emplace(vae::CvaeModel::load(ckpt));
        if (model->m() != m) throw ConfigError("train: checkpoint m differs from the dataset");
        if (model->q() != tc.q) throw ConfigError("train: checkpoint q differs from train.q");
        model->set_beta(tc.beta);
        out << "train: resuming " << ckpt.string() << " after epoch " << model->epochs_trained() << "\n";
    } else {
        model.emplace(m, tc.q, tc.beta, tc.seed);
    }
    const auto log = vae::train(*model, data.signals, tc, [&](const vae::EpochLog& e) {
        out << "epoch " << e.epoch << "  train " << fmt("%.6g", e.train_loss) << "  val " << fmt("%.6g", e.val_loss)
            << "  rec " << fmt("%.6g", e.rec_term) << "  kl " << fmt("%.6g", e.kl_term) << "\n";
    });
    model->save(ckpt);
    std::string csv = log.to_csv();
    if (resuming && fs::exists(log_path)) {
        std::string prev = read_text(log_path, "train log");
        csv = prev + csv.substr(csv.find('\n') + 1);
    }
    write_text(log_path, csv);
    write_manifest(ckpt, "train", cfg);
    out << "train: checkpoint -> " << ckpt.string() << " (" << model->epochs_trained() << " epochs)\n";
}

// Detector construction shared by calibrate and evaluate.
class ModelCache {
  public:
    std::shared_ptr<const vae::CvaeModel> get(const fs::path& p, std::size_t m) {
        const auto key = fs::absolute(p).lexically_normal().string();
        auto it = models_.find(key);
        if (it != models_.end()) return it->second;
        require_file(p, "checkpoint");
        auto model = std::make_shared<const vae::CvaeModel>(vae::CvaeModel::load(p));
        if (model->m() != m)
            throw ConfigError("checkpoint '" + p.string() + "' has m=" + std::to_string(model->m()) +
                              " but the scenario has m=" + std::to_string(m));
        models_.emplace(key, model);
        return model;
    }

  private:
    std::map<std::string, std::shared_ptr<const vae::CvaeModel>> models_;
};

std::vector<scores::ScoreKind> requested_detectors(const json& list) {
    if (!list.is_array() || list.empty()) throw ConfigError("calibrate.detectors must be a non-empty list");
    std::vector<bool> want(4, false);
    for (const auto& d : list) {
        if (!d.is_string()) throw ConfigError("calibrate.detectors entries must be strings");
        want[detector_index(scores::score_kind_from_string(d.get<std::string>()))] = true;
    }
    std::vector<scores::ScoreKind> out;
    for (std::size_t i = 0; i < 4; ++i)
        if (want[i]) out.push_back(scores::score_kind_from_string(kDetectorOrder[i]));
    return out;
}

void cmd_calibrate(const json& cfg, std::ostream& out, std::ostream& err) {
    const json& c = cfg.at("calibrate");
    bench::SweepConfig sw = bench::sweep_config_from_json(c.at("sweep"));
    sw.threads = field<std::size_t>(cfg, "threads", "");
    sw.validate();
    const auto kinds = requested_detectors(c.at("detectors"));
    const auto mode = scores::latent_mode_from_string(field<std::string>(c, "latent_mode", "calibrate"));
    const auto estimator = classical::estimator_from_string(field<std::string>(c, "anmf_estimator", "calibrate"));
    std::size_t secondary = field<std::size_t>(c, "anmf_secondary", "calibrate");
    if (secondary == 0) secondary = 2 * sw.scenario.m;
    const fs::path out_path = resolve_path(cfg, field<std::string>(c, "output", "calibrate"));

    ModelCache cache;
    std::optional<std::vector<clx::ComplexVector>> null_data;
    auto clutter = [&]() -> const std::vector<clx::ComplexVector>& {
        if (!null_data) {
            const fs::path p = resolve_path(cfg, field<std::string>(c, "null_dataset", "calibrate"));
            require_file(p, "calibrate: null dataset");
            null_data = sig::load_iq(p, sw.scenario.m).signals;
        }
        return *null_data;
    };

    json entries = json::array();
    for (const auto kind : kinds) {
        const std::string name = scores::to_string(kind);
        json e{{"detector", name}};
        std::unique_ptr<bench::Detector> det;
        if (kind == scores::ScoreKind::mse) {
            const fs::path p = resolve_path(cfg, field<std::string>(c, "mse_checkpoint", "calibrate"));
            det = std::make_unique<bench::MseDetector>(cache.get(p, sw.scenario.m));
            e["checkpoint"] = fs::absolute(p).lexically_normal().string();
        } else if (kind == scores::ScoreKind::kl || kind == scores::ScoreKind::maha) {
            const fs::path p = resolve_path(cfg, field<std::string>(c, "latent_checkpoint", "calibrate"));
            const auto model = cache.get(p, sw.scenario.m);
            e["checkpoint"] = fs::absolute(p).lexically_normal().string();
            if (kind == scores::ScoreKind::kl) {
                auto null = scores::fit_null_kl(*model, clutter());
                e["null"] = scores::to_json(null);
                det = std::make_unique<bench::KlDetector>(model, std::move(null));
            } else {
                auto null = scores::fit_null_maha(*model, clutter(), Stream(sw.seed).child(13), mode);
                e["null"] = scores::to_json(null);
                e["latent_mode"] = scores::to_string(mode);
                det = std::make_unique<bench::MahaDetector>(model, std::move(null), mode);
            }
        } else {
            det = std::make_unique<bench::AnmfDetector>(sw.scenario, secondary, estimator);
            e["secondary"] = secondary;
            e["estimator"] = classical::to_string(estimator);
        }
        const auto thr = bench::calibrate_detector(*det, sw, detector_index(kind));
        if (thr.thin_tail)
            err << "warning: " << name << ": N_cal*alpha = " << fmt("%g", double(thr.n_cal) * thr.target_pfa)
                << " < 50, the threshold tail is thinly sampled\n";
        e["threshold"] = scores::to_json(thr);
        entries.push_back(std::move(e));
        out << "calibrate: " << name << "  lambda " << fmt("%.9g", thr.value) << "  (order statistic "
            << thr.order_index << " of " << thr.n_cal << ", alpha " << fmt("%g", thr.target_pfa) << ")\n";
    }
    const json file{{"format", "radood-calibration"}, {"version", 1}, {"sweep", bench::to_json(sw)},
                    {"detectors", entries}};
    write_text(out_path, file.dump(2) + "\n");
    write_manifest(out_path, "calibrate", cfg);
    out << "calibrate: -> " << out_path.string() << "\n";
}

struct LoadedDetector {
    std::unique_ptr<bench::Detector> det;
    scores::Threshold threshold;
    std::size_t index;
};

std::vector<LoadedDetector> load_detectors(const json& cal, const sig::Scenario& sc) {
    if (cal.value("format", "") != "radood-calibration") throw ConfigError("not a calibration file");
    ModelCache cache;
    std::vector<LoadedDetector> out;
    for (const auto& e : cal.at("detectors")) {
        const auto kind = scores::score_kind_from_string(e.at("detector").get<std::string>());
        LoadedDetector ld{nullptr, scores::threshold_from_json(e.at("threshold")), detector_index(kind)};
        switch (kind) {
            case scores::ScoreKind::mse:
                ld.det = std::make_unique<bench::MseDetector>(cache.get(e.at("checkpoint").get<std::string>(), sc.m));
                break;
            case scores::ScoreKind::kl:
                ld.det = std::make_unique<bench::KlDetector>(cache.get(e.at("checkpoint").get<std::string>(), sc.m),
                                                             scores::null_kl_from_json(e.at("null")));
                break;
            case scores::ScoreKind::maha:
                ld.det = std::make_unique<bench::MahaDetector>(
                    cache.get(e.at("checkpoint").get<std::string>(), sc.m), scores::null_maha_from_json(e.at("null")),
                    scores::latent_mode_from_string(e.at("latent_mode").get<std::string>()));
                break;
            case scores::ScoreKind::anmf:
                ld.det = std::make_unique<bench::AnmfDetector>(
                    sc, e.at("secondary").get<std::size_t>(),
                    classical::estimator_from_string(e.at("estimator").get<std::string>()));
                break;
        }
        out.push_back(std::move(ld));
    }
    return out;
}

void print_report(const bench::DetectorReport& r, std::ostream& out) {
    out << r.detector << "  lambda " << fmt("%.6g", r.threshold.value);
    if (r.pfa)
        out << "  empirical pfa " << fmt("%.5f", r.pfa->pfa) << " over " << r.pfa->trials << " H0 trials"
            << (r.pfa->within_3sigma ? "" : "  (outside 3 sigma)");
    out << "\n";
    auto curve = [&](const char* name, const std::optional<bench::Curve>& c) {
        if (!c) return;
        out << "  " << name << ":";
        for (const auto& p : *c) out << "  " << bench::format_double(p.snr_db) << "dB " << fmt("%.4f", p.pd);
        out << "\n";
    };
    curve("mean excl. bin 0", r.views.mean_excluding_0);
    curve("doppler bin 0   ", r.views.doppler_0);
}

void cmd_evaluate(const json& cfg, std::ostream& out) {
    const json& ev = cfg.at("evaluate");
    const fs::path cal_path = resolve_path(cfg, field<std::string>(ev, "calibration", "evaluate"));
    const json cal = parse_json_text(read_text(cal_path, "evaluate: calibration file"), cal_path.string());
    bench::SweepConfig sw = bench::sweep_config_from_json(cal.at("sweep"));
    const bench::SweepConfig cal_sweep = sw;
    sw = bench::sweep_config_from_json(ev.at("sweep"), sw);
    sw.threads = field<std::size_t>(cfg, "threads", "");
    sw.validate();
    const fs::path report = resolve_path(cfg, field<std::string>(ev, "report", "evaluate"));
    const fs::path manifest = resolve_path(cfg, field<std::string>(ev, "manifest", "evaluate"));
    const fs::path comparison = resolve_path(cfg, field<std::string>(ev, "comparison", "evaluate"));

    // Detectors keep the clutter law they were calibrated on.
    auto dets = load_detectors(cal, cal_sweep.scenario);
    std::vector<bench::DetectorReport> reports;
    for (auto& d : dets) {
        out << "evaluate: " << d.det->id() << " ..." << std::endl;
        reports.push_back(bench::run_sweep(sw, *d.det, d.threshold, d.index));
        print_report(reports.back(), out);
    }
    const auto rows = bench::compare(reports);
    write_text(report, bench::to_csv(reports));
    json man = bench::manifest(sw, reports);
    man["calibration"] = fs::absolute(cal_path).lexically_normal().string();
    write_text(manifest, man.dump(2) + "\n");
    write_text(comparison, bench::comparison_csv(rows));
    write_manifest(report, "evaluate", cfg);
    out << "evaluate: -> " << report.string() << ", " << manifest.string() << ", " << comparison.string() << "\n";
}

void print_rows(const std::vector<bench::RankRow>& rows, std::ostream& out) {
    for (const auto& row : rows) {
        out << row.view << " @ " << bench::format_double(row.snr_db) << " dB:";
        for (const auto& e : row.entries) {
            out << "  " << e.rank << "." << e.detector << " " << fmt("%.4f", e.pd);
            if (e.significant_vs_next) out << " >";
        }
        out << "\n";
    }
}

void cmd_compare(const json& cfg, std::ostream& out) {
    const json& c = cfg.at("compare");
    const auto paths = field<std::vector<std::string>>(c, "reports", "compare");
    if (paths.empty()) throw ConfigError("compare.reports is empty");
    std::vector<bench::DetectorReport> reports;
    std::map<std::string, int> seen;
    for (const auto& p : paths) {
        const fs::path path = resolve_path(cfg, p);
        for (auto& r : parse_report_csv(read_text(path, "compare: report"))) {
            if (seen[r.detector]++ > 0) r.detector += "@" + path.stem().string();
            reports.push_back(std::move(r));
        }
    }
    const auto rows = bench::compare(reports);
    const fs::path out_path = resolve_path(cfg, field<std::string>(c, "output", "compare"));
    write_text(out_path, bench::comparison_csv(rows));
    write_manifest(out_path, "compare", cfg);
    print_rows(rows, out);
    out << "compare: -> " << out_path.string() << "\n";
}

int exit_code_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return kConfigError;
        case ErrorKind::numeric: return kNumericError;
        case ErrorKind::io: return kIoError;
    }
    return kUnexpected;
}

}  // namespace

json default_config() {
    bench::SweepConfig sw;
    json sweep = bench::to_json(sw);
    sweep.erase("doppler_bins");
    sweep["doppler_bins"] = json::array();
    return {
        {"output_dir", nullptr},
        {"threads", 0},
        {"generate",
         {{"scenario", bench::to_json(sig::Scenario{})}, {"count", 15000}, {"target", false}, {"output", "dataset.ciq"}}},
        {"train",
         {{"dataset", "dataset.ciq"},
          {"preset", "mse"},
          {"epochs", 50},
          {"lr", 1e-3},
          {"batch_size", 128},
          {"beta", nullptr},
          {"q", nullptr},
          {"seed", 0},
          {"train_fraction", 2.0 / 3.0},
          {"resume", false},
          {"checkpoint", "model.ckpt"},
          {"log", "train_log.csv"}}},
        {"calibrate",
         {{"detectors", json::array({"cvae_mse", "kld", "mahalanobis", "anmf_fp"})},
          {"mse_checkpoint", "mse.ckpt"},
          {"latent_checkpoint", "latent.ckpt"},
          {"null_dataset", "dataset.ciq"},
          {"latent_mode", "sample"},
          {"anmf_secondary", 0},
          {"anmf_estimator", "tyler"},
          {"sweep", sweep},
          {"output", "calibration.json"}}},
        {"evaluate",
         {{"calibration", "calibration.json"},
          {"sweep", json::object()},
          {"report", "report.csv"},
          {"manifest", "report.json"},
          {"comparison", "comparison.csv"}}},
        {"compare", {{"reports", json::array({"report.csv"})}, {"output", "comparison.csv"}}},
    };
}

json resolve_config(const json& file_config, const std::vector<std::string>& set_overrides, const json& flag_overrides) {
    json cfg = default_config();
    if (!file_config.is_null()) merge_into(cfg, file_config, "");
    for (const auto& s : set_overrides) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
        merge_into(cfg, patch_for(s.substr(0, eq), parse_scalar(s.substr(eq + 1))), "");
    }
    if (!flag_overrides.is_null()) merge_into(cfg, flag_overrides, "");

    if (cfg["output_dir"].is_null()) {
        const char* env = std::getenv(kOutputRootEnv);
        cfg["output_dir"] = env && *env ? env : "radood-out";
    }
    if (!cfg["output_dir"].is_string()) throw ConfigError("output_dir must be a string");
    cfg["output_dir"] = fs::absolute(cfg["output_dir"].get<std::string>()).lexically_normal().string();
    if (!cfg["threads"].is_number_integer() || cfg["threads"].get<long long>() < 0) throw ConfigError("threads must be a non-negative integer");

    json& t = cfg["train"];
    const Preset p = preset(field<std::string>(t, "preset", "train"));
    if (t["q"].is_null()) t["q"] = p.q;
    if (t["beta"].is_null()) t["beta"] = p.beta;
    return cfg;
}

std::vector<bench::DetectorReport> parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "detector,snr_db,doppler_bin,trials,detections,pd,ci_lo,ci_hi")
        throw ConfigError("report CSV: unexpected header");
    std::vector<bench::DetectorReport> reports;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        if (f.size() != 8) throw ConfigError("report CSV line " + std::to_string(lineno) + ": expected 8 fields");
        try {
            bench::GridPoint g;
            g.snr_db = bench::db_from_json(parse_scalar(f[1]));
            g.doppler_bin = std::stoull(f[2]);
            g.trials = std::stoull(f[3]);
            g.detections = std::stoull(f[4]);
            g.pd = std::stod(f[5]);
            g.ci = {std::stod(f[6]), std::stod(f[7])};
            auto it = std::find_if(reports.begin(), reports.end(), [&](const auto& r) { return r.detector == f[0]; });
            if (it == reports.end()) {
                reports.push_back({});
                reports.back().detector = f[0];
                it = std::prev(reports.end());
            }
            it->points.push_back(g);
        } catch (const std::logic_error&) {
            throw ConfigError("report CSV line " + std::to_string(lineno) + ": malformed number");
        }
    }
    if (reports.empty()) throw ConfigError("report CSV: no rows");
    for (auto& r : reports) r.views = bench::report_views(r);
    return reports;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Radar out-of-distribution detection toolkit", "radood"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> sets;
    std::string output_dir;
    std::string threads;
    bool print_config = false;
    app.add_option("-c,--config", config_path, "JSON config file");
    app.add_option("--set", sets, "Override a config value: section.key=JSON")->allow_extra_args(false);
    app.add_option("-o,--output-dir", output_dir, "Output root (default: $" + std::string(kOutputRootEnv) + ")");
    app.add_option("--threads", threads, "Worker threads for scoring (0 = all cores)");
    app.add_flag("--print-config", print_config, "Print the resolved config and exit");

    // Named flags map onto config paths; values are parsed as JSON when possible.
    std::vector<std::pair<CLI::Option*, std::string>> scalar_flags;
    std::vector<std::pair<CLI::Option*, std::string>> list_flags;
    std::map<std::string, std::string> scalar_values;
    std::map<std::string, std::vector<std::string>> list_values;
    auto scalar = [&](CLI::App* sub, const std::string& flag, const std::string& path, const std::string& help) {
        scalar_flags.emplace_back(sub->add_option(flag, scalar_values[path], help), path);
    };
    auto list = [&](CLI::App* sub, const std::string& flag, const std::string& path, const std::string& help) {
        list_flags.emplace_back(sub->add_option(flag, list_values[path], help)->delimiter(','), path);
    };
    std::map<std::string, bool> bool_values;
    std::vector<std::pair<CLI::Option*, std::string>> bool_flags;
    auto boolean = [&](CLI::App* sub, const std::string& flag, const std::string& path, const std::string& help) {
        bool_flags.emplace_back(sub->add_flag(flag, bool_values[path], help), path);
    };

    auto* gen = app.add_subcommand("generate", "Write a synthetic IQ dataset");
    scalar(gen, "-n,--count", "generate.count", "Number of signals");
    scalar(gen, "--out", "generate.output", "Output IQ file");
    scalar(gen, "--clutter", "generate.scenario.clutter", "cGN or cCGN");
    scalar(gen, "--seed", "generate.scenario.seed", "Scenario seed");
    scalar(gen, "--snr", "generate.scenario.snr_db", "Target SNR in dB (with --target)");
    scalar(gen, "--doppler", "generate.scenario.doppler_bin", "Target Doppler bin (with --target)");
    boolean(gen, "--target", "generate.target", "Inject a target into every signal");

    auto* tr = app.add_subcommand("train", "Train a CVAE on an IQ dataset");
    scalar(tr, "--dataset", "train.dataset", "Input IQ file");
    scalar(tr, "--checkpoint", "train.checkpoint", "Output checkpoint");
    scalar(tr, "--log", "train.log", "Training log CSV");
    scalar(tr, "--preset", "train.preset", "mse or latent");
    scalar(tr, "--epochs", "train.epochs", "Epochs to run");
    scalar(tr, "--q", "train.q", "Latent dimension");
    scalar(tr, "--beta", "train.beta", "KL weight");
    scalar(tr, "--lr", "train.lr", "Adam learning rate");
    scalar(tr, "--batch-size", "train.batch_size", "Minibatch size");
    scalar(tr, "--seed", "train.seed", "Training seed");
    boolean(tr, "--resume", "train.resume", "Continue from an existing checkpoint");

    auto* cal = app.add_subcommand("calibrate", "Fit detector nulls and thresholds on H0 data");
    list(cal, "--detectors", "calibrate.detectors", "Detectors to calibrate");
    scalar(cal, "--mse-checkpoint", "calibrate.mse_checkpoint", "Checkpoint for cvae_mse");
    scalar(cal, "--latent-checkpoint", "calibrate.latent_checkpoint", "Checkpoint for kld and mahalanobis");
    scalar(cal, "--null-dataset", "calibrate.null_dataset", "H0 dataset for the latent nulls");
    scalar(cal, "--clutter", "calibrate.sweep.scenario.clutter", "cGN or cCGN");
    scalar(cal, "--pfa", "calibrate.sweep.pfa", "Target false-alarm rate");
    scalar(cal, "--n-cal", "calibrate.sweep.n_cal", "Calibration set size");
    scalar(cal, "--seed", "calibrate.sweep.seed", "Sweep seed");
    scalar(cal, "--out", "calibrate.output", "Calibration file");

    auto* ev = app.add_subcommand("evaluate", "Sweep SNR x Doppler and report Pd");
    scalar(ev, "--calibration", "evaluate.calibration", "Calibration file");
    scalar(ev, "--trials", "evaluate.sweep.trials", "Trials per grid point");
    scalar(ev, "--pfa-trials", "evaluate.sweep.pfa_trials", "Held-out H0 trials");
    scalar(ev, "--seed", "evaluate.sweep.seed", "Sweep seed");
    scalar(ev, "--report", "evaluate.report", "Report CSV");
    scalar(ev, "--manifest", "evaluate.manifest", "Report manifest JSON");
    scalar(ev, "--comparison", "evaluate.comparison", "Comparison CSV");

    auto* cmp = app.add_subcommand("compare", "Rank detectors from report CSVs");
    list(cmp, "--reports", "compare.reports", "Report CSV files");
    scalar(cmp, "--out", "compare.output", "Comparison CSV");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(std::move(rev));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        json file_cfg;
        if (!config_path.empty())
            file_cfg = parse_json_text(read_text(config_path, "config file"), config_path);
        json flags = json::object();
        auto put = [&](const std::string& path, json v) {
            json patch = patch_for(path, std::move(v));
            flags.merge_patch(patch);
        };
        for (const auto& [opt, path] : scalar_flags)
            if (opt->count()) put(path, parse_scalar(scalar_values[path]));
        for (const auto& [opt, path] : list_flags)
            if (opt->count()) put(path, json(list_values[path]));
        for (const auto& [opt, path] : bool_flags)
            if (opt->count()) put(path, bool_values[path]);
        if (!output_dir.empty()) flags["output_dir"] = output_dir;
        if (!threads.empty()) flags["threads"] = parse_scalar(threads);

        const json cfg = resolve_config(file_cfg, sets, flags);
        if (print_config) {
            out << cfg.dump(2) << "\n";
            return kOk;
        }
        if (gen->parsed()) cmd_generate(cfg, out);
        else if (tr->parsed()) cmd_train(cfg, out);
        else if (cal->parsed()) cmd_calibrate(cfg, out, err);
        else if (ev->parsed()) cmd_evaluate(cfg, out);
        else if (cmp->parsed()) cmd_compare(cfg, out);
        return kOk;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const json::exception& e) {
        err << "error: config: " << e.what() << "\n";
        return kConfigError;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUnexpected;
    }
}

}  // namespace radood::cli
