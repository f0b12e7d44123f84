#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "radood/cli.hpp"
#include "radood/sigmodel.hpp"

using namespace radood;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

class CliTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("radood_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        unsetenv(cli::kOutputRootEnv);
    }
    void TearDown() override {
        unsetenv(cli::kOutputRootEnv);
        fs::remove_all(dir_);
    }
    std::string d() const { return dir_.string(); }

    // Small trained model + null set shared by the calibrate tests.
    void small_pipeline() {
        ASSERT_EQ(run({"generate", "-o", d(), "-n", "300", "--out", "train.ciq"}).code, 0);
        ASSERT_EQ(run({"generate", "-o", d(), "-n", "300", "--seed", "5", "--out", "null.ciq"}).code, 0);
        ASSERT_EQ(run({"train", "-o", d(), "--dataset", "train.ciq", "--epochs", "1", "--checkpoint", "mse.ckpt"}).code,
                  0);
        ASSERT_EQ(run({"train", "-o", d(), "--dataset", "train.ciq", "--epochs", "1", "--preset", "latent",
                       "--checkpoint", "latent.ckpt"})
                      .code,
                  0);
    }

    fs::path dir_;
};

TEST_F(CliTest, GenerateWritesHeaderAndRecords) {
    const auto r = run({"generate", "--output-dir", d(), "-n", "100"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto batch = sig::load_iq(dir_ / "dataset.ciq");
    EXPECT_EQ(batch.signals.size(), 100u);
    EXPECT_EQ(batch.signals.front().size(), 16u);
    EXPECT_TRUE(fs::exists(dir_ / "dataset.ciq.config.json"));
    const json man = json::parse(slurp(dir_ / "dataset.ciq.config.json"));
    EXPECT_EQ(man["command"], "generate");
    EXPECT_EQ(man["config"]["generate"]["count"], 100);
}

TEST_F(CliTest, GenerateIsDeterministic) {
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "64", "--seed", "9", "--out", "a.ciq"}).code, 0);
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "64", "--seed", "9", "--out", "b.ciq"}).code, 0);
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "64", "--seed", "10", "--out", "c.ciq"}).code, 0);
    EXPECT_EQ(slurp(dir_ / "a.ciq"), slurp(dir_ / "b.ciq"));
    EXPECT_NE(slurp(dir_ / "a.ciq"), slurp(dir_ / "c.ciq"));
}

TEST_F(CliTest, GenerateTargetDiffersFromClutter) {
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "32", "--out", "h0.ciq"}).code, 0);
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "32", "--out", "h1.ciq", "--target", "--snr", "20"}).code, 0);
    EXPECT_NE(slurp(dir_ / "h0.ciq"), slurp(dir_ / "h1.ciq"));
}

TEST_F(CliTest, InvalidScenarioFailsBeforeAnyIo) {
    const auto r = run({"generate", "-o", d(), "--set", "generate.scenario.rho=1.0"});
    EXPECT_EQ(r.code, cli::kConfigError);
    EXPECT_NE(r.err.find("rho"), std::string::npos);
    EXPECT_TRUE(fs::is_empty(dir_));
}

TEST_F(CliTest, PrintConfigShowsTrainingDefaults) {
    const auto r = run({"--print-config", "train"});
    ASSERT_EQ(r.code, 0);
    const json cfg = json::parse(r.out);
    EXPECT_EQ(cfg["train"]["epochs"], 50);
    EXPECT_DOUBLE_EQ(cfg["train"]["lr"].get<double>(), 1e-3);
    EXPECT_EQ(cfg["train"]["batch_size"], 128);
    EXPECT_DOUBLE_EQ(cfg["train"]["train_fraction"].get<double>(), 2.0 / 3.0);
    EXPECT_EQ(cfg["train"]["q"], 12);
    EXPECT_DOUBLE_EQ(cfg["train"]["beta"].get<double>(), 100.0);
    EXPECT_EQ(cfg["generate"]["count"], 15000);

    const json latent = json::parse(run({"train", "--preset", "latent", "--print-config"}).out);
    EXPECT_EQ(latent["train"]["q"], 32);
    EXPECT_DOUBLE_EQ(latent["train"]["beta"].get<double>(), 1e-3);
    // Explicit values beat the preset.
    const json explicit_q = json::parse(run({"train", "--preset", "latent", "--q", "8", "--print-config"}).out);
    EXPECT_EQ(explicit_q["train"]["q"], 8);
}

TEST_F(CliTest, OverridePrecedence) {
    const fs::path cfg_path = dir_ / "cfg.json";
    std::ofstream(cfg_path) << R"({"train": {"epochs": 7, "lr": 0.01}, "threads": 3})";
    const json cfg = json::parse(run({"--config", cfg_path.string(), "--set", "train.epochs=9", "train", "--lr",
                                      "0.5", "--print-config"})
                                     .out);
    EXPECT_EQ(cfg["train"]["epochs"], 9);
    EXPECT_DOUBLE_EQ(cfg["train"]["lr"].get<double>(), 0.5);
    EXPECT_EQ(cfg["threads"], 3);
    const json t = json::parse(run({"--config", cfg_path.string(), "--threads", "2", "train", "--print-config"}).out);
    EXPECT_EQ(t["threads"], 2);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
    EXPECT_EQ(run({"train", "--set", "train.nope=1", "--print-config"}).code, cli::kConfigError);
    EXPECT_EQ(run({"train", "--set", "noequals", "--print-config"}).code, cli::kConfigError);
    EXPECT_EQ(run({"train", "--preset", "huge", "--print-config"}).code, cli::kConfigError);
    EXPECT_EQ(run({"train", "--threads", "-1", "--print-config"}).code, cli::kConfigError);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kConfigError);
    EXPECT_EQ(run({}).code, cli::kConfigError);
    const fs::path bad = dir_ / "bad.json";
    std::ofstream(bad) << "{not json";
    EXPECT_EQ(run({"--config", bad.string(), "train", "--print-config"}).code, cli::kConfigError);
    EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST_F(CliTest, MissingFilesExitFour) {
    EXPECT_EQ(run({"train", "-o", d(), "--dataset", "missing.ciq"}).code, cli::kIoError);
    EXPECT_EQ(run({"--config", (dir_ / "none.json").string(), "train", "--print-config"}).code, cli::kIoError);
    EXPECT_EQ(run({"evaluate", "-o", d()}).code, cli::kIoError);
    EXPECT_EQ(run({"compare", "-o", d(), "--reports", "nothing.csv"}).code, cli::kIoError);
}

TEST_F(CliTest, OutputRootFromEnvironment) {
    setenv(cli::kOutputRootEnv, d().c_str(), 1);
    const json cfg = json::parse(run({"generate", "--print-config"}).out);
    EXPECT_EQ(fs::path(cfg["output_dir"].get<std::string>()), fs::absolute(dir_).lexically_normal());
    ASSERT_EQ(run({"generate", "-n", "10"}).code, 0);
    EXPECT_TRUE(fs::exists(dir_ / "dataset.ciq"));
    // The flag wins over the environment.
    const json flag = json::parse(run({"generate", "-o", (dir_ / "sub").string(), "--print-config"}).out);
    EXPECT_EQ(fs::path(flag["output_dir"].get<std::string>()), (dir_ / "sub").lexically_normal());
}

TEST_F(CliTest, TrainResumeContinuesEpochs) {
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "300"}).code, 0);
    ASSERT_EQ(run({"train", "-o", d(), "--epochs", "2"}).code, 0);
    const auto r = run({"train", "-o", d(), "--epochs", "1", "--resume"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("epoch 3"), std::string::npos);
    EXPECT_EQ(vae::CvaeModel::load(dir_ / "model.ckpt").epochs_trained(), 3u);
    std::istringstream log(slurp(dir_ / "train_log.csv"));
    std::vector<std::string> lines;
    for (std::string l; std::getline(log, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0].rfind("epoch,", 0), 0u);
    EXPECT_EQ(lines[3].rfind("3,", 0), 0u);
    // Resuming with a different q is refused.
    EXPECT_EQ(run({"train", "-o", d(), "--epochs", "1", "--resume", "--q", "4"}).code, cli::kConfigError);
}

TEST_F(CliTest, CalibrateRecordsOrderStatistic) {
    small_pipeline();
    const auto r = run({"calibrate", "-o", d(), "--null-dataset", "null.ciq", "--detectors", "cvae_mse,kld",
                        "--n-cal", "5000", "--pfa", "0.01"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.err.find("warning"), std::string::npos);
    const json cal = json::parse(slurp(dir_ / "calibration.json"));
    ASSERT_EQ(cal["detectors"].size(), 2u);
    for (const auto& det : cal["detectors"]) {
        EXPECT_EQ(det["threshold"]["order_index"], 4950);
        EXPECT_EQ(det["threshold"]["n_cal"], 5000);
        EXPECT_TRUE(fs::path(det["checkpoint"].get<std::string>()).is_absolute());
    }
    EXPECT_EQ(cal["detectors"][0]["detector"], "cvae_mse");
    EXPECT_TRUE(cal["detectors"][1].contains("null"));
}

TEST_F(CliTest, CalibrateWarnsOnThinTail) {
    small_pipeline();
    const auto r = run({"calibrate", "-o", d(), "--null-dataset", "null.ciq", "--detectors", "mahalanobis",
                        "--n-cal", "1000", "--pfa", "0.01"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("warning: mahalanobis"), std::string::npos);
}

TEST_F(CliTest, CalibrateRejectsUnknownDetector) {
    EXPECT_EQ(run({"calibrate", "-o", d(), "--detectors", "oracle"}).code, cli::kConfigError);
}

TEST_F(CliTest, EvaluateAndCompare) {
    small_pipeline();
    ASSERT_EQ(run({"calibrate", "-o", d(), "--null-dataset", "null.ciq", "--detectors", "cvae_mse,anmf_fp",
                   "--n-cal", "2000"})
                  .code,
              0);
    const std::vector<std::string> small{"--set", "evaluate.sweep.snr_db=[0,20]", "--set",
                                         "evaluate.sweep.doppler_bins=[0,3]", "--trials", "100", "--pfa-trials",
                                         "1000"};
    auto args = std::vector<std::string>{"evaluate", "-o", d()};
    args.insert(args.end(), small.begin(), small.end());
    const auto r = run(args);
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(dir_ / "report.csv");
    EXPECT_EQ(csv.rfind("detector,snr_db,doppler_bin,trials,detections,pd,ci_lo,ci_hi\n", 0), 0u);
    const auto parsed = cli::parse_report_csv(csv);
    ASSERT_EQ(parsed.size(), 2u);
    EXPECT_EQ(parsed[0].points.size(), 4u);
    const json man = json::parse(slurp(dir_ / "report.json"));
    EXPECT_EQ(man["format"], "radood-report");
    EXPECT_EQ(man["detectors"][1]["empirical_pfa"]["trials"], 1000);

    // Threads do not change the bytes.
    args.insert(args.end(), {"--threads", "3", "--report", "r3.csv", "--manifest", "r3.json", "--comparison", "c3.csv"});
    ASSERT_EQ(run(args).code, 0);
    EXPECT_EQ(slurp(dir_ / "r3.csv"), csv);

    const auto c = run({"compare", "-o", d(), "--reports", "report.csv,r3.csv", "--out", "both.csv"});
    ASSERT_EQ(c.code, 0) << c.err;
    EXPECT_NE(slurp(dir_ / "both.csv").find("cvae_mse@r3"), std::string::npos);

    // A report on a different grid is refused.
    ASSERT_EQ(run({"evaluate", "-o", d(), "--set", "evaluate.sweep.snr_db=[0]", "--set",
                   "evaluate.sweep.doppler_bins=[0,3]", "--trials", "100", "--pfa-trials", "0", "--report",
                   "short.csv", "--manifest", "short.json", "--comparison", "cs.csv"})
                  .code,
              0);
    EXPECT_EQ(run({"compare", "-o", d(), "--reports", "report.csv,short.csv"}).code, cli::kConfigError);
}

TEST_F(CliTest, ParseReportRejectsGarbage) {
    EXPECT_THROW(cli::parse_report_csv("a,b\n"), ConfigError);
    EXPECT_THROW(cli::parse_report_csv("detector,snr_db,doppler_bin,trials,detections,pd,ci_lo,ci_hi\nx,1,2\n"),
                 ConfigError);
    EXPECT_THROW(cli::parse_report_csv("detector,snr_db,doppler_bin,trials,detections,pd,ci_lo,ci_hi\n"),
                 ConfigError);
}

TEST_F(CliTest, DivergenceExitsThree) {
    ASSERT_EQ(run({"generate", "-o", d(), "-n", "300"}).code, 0);
    const auto r = run({"train", "-o", d(), "--epochs", "1", "--set", "train.lr=1e300"});
    EXPECT_EQ(r.code, cli::kNumericError) << r.err;
    EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

}  // namespace
