#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "imc/errors.hpp"
#include "imc/experiment.hpp"
#include "imc/model_io.hpp"

using namespace imc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + std::string(IMC_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("imc_cli_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

const char* kMultibranchConfig = R"(
# two-branch fixture
[task]
type = multibranch
seed = 11
branches = 2
noise_sd = 0.05
samples = 120

[train]
algorithm = imc
eta = 0.1
components = 2
max_iters = 25
epsilon = 0
seed = 3
gating_epochs = 40

[eval]
rollouts = 50
seed = 21
probe = 128
samples = 100
)";

}  // namespace

TEST_CASE("KvConfig parsing") {
    const auto kv = KvConfig::parse_string("[a]\nx = 1\n# comment\ny= hello world \n[b]\nx =2\n");
    CHECK(kv.get("a", "x") == "1");
    CHECK(kv.get("a", "y") == "hello world");
    CHECK(kv.get("b", "x") == "2");
    CHECK(kv.get_or("b", "missing", "z") == "z");
    CHECK_THROWS_AS(kv.get("b", "missing"), InvalidInputError);
    CHECK_THROWS_AS(KvConfig::parse_string("[a\nx=1"), InvalidInputError);
    CHECK_THROWS_AS(KvConfig::parse_string("[a]\njust a line"), InvalidInputError);
}

TEST_CASE("ExperimentConfig from config text") {
    auto cfg = ExperimentConfig::from_kv(KvConfig::parse_string(kMultibranchConfig));
    CHECK(cfg.task.type == TaskType::multibranch);
    CHECK(cfg.task.n_samples == 120);
    CHECK(cfg.algorithm == Algorithm::imc);
    CHECK(cfg.train.eta == 0.1);
    CHECK(cfg.train.n_components == 2);
    CHECK(cfg.train.epsilon == 0.0);
    CHECK(cfg.train.arch.kind == ExpertKind::linear);
    CHECK(cfg.eval.n_rollouts == 50);

    auto inf_cfg = ExperimentConfig::from_kv(
        KvConfig::parse_string("[train]\nepsilon = inf\nbatch_size = 32\nexpert = neural\nhidden = 8,4\n"));
    CHECK(std::isinf(inf_cfg.train.epsilon));
    CHECK(inf_cfg.train.batch_size == 32);
    CHECK(inf_cfg.train.arch.kind == ExpertKind::neural);
    CHECK(inf_cfg.train.arch.hidden == std::vector<std::size_t>{8, 4});
    CHECK_THROWS_AS(
        ExperimentConfig::from_kv(KvConfig::parse_string("[task]\ntype = bogus\n")),
        InvalidInputError);
}

TEST_CASE("generate is deterministic and the manifest replays") {
    TempDir dir("generate");
    spit(dir.path / "cfg.txt", kMultibranchConfig);
    const auto out1 = dir.path / "run1";
    const auto out2 = dir.path / "run2";
    const auto out3 = dir.path / "replay";
    REQUIRE(run_cli("generate --config " + (dir.path / "cfg.txt").string() + " --out " +
                    out1.string()) == 0);
    REQUIRE(run_cli("generate --config " + (dir.path / "cfg.txt").string() + " --out " +
                    out2.string()) == 0);
    CHECK(slurp(out1 / "dataset.csv") == slurp(out2 / "dataset.csv"));
    // the manifest is itself a valid generate config
    REQUIRE(run_cli("generate --config " + (out1 / "manifest.txt").string() + " --out " +
                    out3.string()) == 0);
    CHECK(slurp(out1 / "dataset.csv") == slurp(out3 / "dataset.csv"));
}

TEST_CASE("train writes model and monotone history, reruns byte-identical") {
    TempDir dir("train");
    spit(dir.path / "cfg.txt", kMultibranchConfig);
    const auto data_dir = dir.path / "data";
    REQUIRE(run_cli("generate --config " + (dir.path / "cfg.txt").string() + " --out " +
                    data_dir.string()) == 0);
    const auto run1 = dir.path / "m1";
    const auto run2 = dir.path / "m2";
    const std::string train_args = "train --config " + (dir.path / "cfg.txt").string() +
                                   " --data " + (data_dir / "dataset.csv").string();
    REQUIRE(run_cli(train_args + " --out " + run1.string()) == 2);  // hits the cap
    REQUIRE(run_cli(train_args + " --out " + run2.string()) == 2);
    CHECK(slurp(run1 / "model.json") == slurp(run2 / "model.json"));
    CHECK(slurp(run1 / "history.csv") == slurp(run2 / "history.csv"));

    // thread count must not change any output byte
    const auto run_t = dir.path / "mt";
    REQUIRE(run_cli(train_args + " --out " + run_t.string(), "IMC_THREADS=3") == 2);
    CHECK(slurp(run1 / "model.json") == slurp(run_t / "model.json"));

    // lower bound column is non-decreasing for linear experts
    std::istringstream hist(slurp(run1 / "history.csv"));
    std::string line;
    std::getline(hist, line);
    CHECK(line == "iteration,lower_bound,objective_j,kl_term,active_components");
    double prev = -1e300;
    std::size_t rows = 0;
    while (std::getline(hist, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const double lb = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        CHECK(lb >= prev - 1e-8);
        prev = lb;
        ++rows;
    }
    CHECK(rows == 25);

    // model round-trip is byte-identical
    const auto model = load_imc_model(run1 / "model.json");
    save_imc_model(dir.path / "resaved.json", model);
    CHECK(slurp(run1 / "model.json") == slurp(dir.path / "resaved.json"));
}

TEST_CASE("train exit codes distinguish convergence from the iteration cap") {
    TempDir dir("codes");
    std::string cfg = kMultibranchConfig;
    spit(dir.path / "cfg.txt", cfg);
    const auto data_dir = dir.path / "data";
    REQUIRE(run_cli("generate --config " + (dir.path / "cfg.txt").string() + " --out " +
                    data_dir.string()) == 0);

    // epsilon = inf: one iteration, converged, exit 0
    auto pos = cfg.find("epsilon = 0");
    cfg.replace(pos, std::string("epsilon = 0").size(), "epsilon = inf");
    spit(dir.path / "inf.txt", cfg);
    const auto one = dir.path / "one";
    CHECK(run_cli("train --config " + (dir.path / "inf.txt").string() + " --data " +
                  (data_dir / "dataset.csv").string() + " --out " + one.string()) == 0);
    std::istringstream hist(slurp(one / "history.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(hist, line)) ++rows;
    CHECK(rows == 2);  // header + exactly one iteration

    // epsilon = 0 never converges within the cap: exit 2, model still written
    CHECK(run_cli("train --config " + (dir.path / "cfg.txt").string() + " --data " +
                  (data_dir / "dataset.csv").string() + " --out " +
                  (dir.path / "cap").string()) == 2);
    CHECK(fs::exists(dir.path / "cap" / "model.json"));

    // missing dataset: io error
    CHECK(run_cli("train --config " + (dir.path / "cfg.txt").string() + " --data " +
                  (dir.path / "nope.csv").string() + " --out " +
                  (dir.path / "x").string()) == 4);
}

TEST_CASE("em training pipeline and multibranch eval") {
    TempDir dir("em");
    std::string cfg = kMultibranchConfig;
    auto pos = cfg.find("algorithm = imc");
    cfg.replace(pos, std::string("algorithm = imc").size(), "algorithm = em");
    spit(dir.path / "cfg.txt", cfg);
    const auto data_dir = dir.path / "data";
    REQUIRE(run_cli("generate --config " + (dir.path / "cfg.txt").string() + " --out " +
                    data_dir.string()) == 0);
    const auto out = dir.path / "model";
    REQUIRE(run_cli("train --config " + (dir.path / "cfg.txt").string() + " --data " +
                    (data_dir / "dataset.csv").string() + " --out " + out.string()) == 2);
    std::istringstream hist(slurp(out / "history.csv"));
    std::string line;
    std::getline(hist, line);
    CHECK(line == "iteration,marginal_log_likelihood");
    double prev = -1e300;
    while (std::getline(hist, line)) {
        const double ll = std::stod(line.substr(line.find(',') + 1));
        CHECK(ll >= prev - 1e-8);
        prev = ll;
    }

    // eval on the trained model: metrics exist, reruns byte-identical
    const auto ev1 = dir.path / "ev1";
    const auto ev2 = dir.path / "ev2";
    REQUIRE(run_cli("eval --config " + (dir.path / "cfg.txt").string() + " --model " +
                    (out / "model.json").string() + " --out " + ev1.string()) == 0);
    REQUIRE(run_cli("eval --config " + (dir.path / "cfg.txt").string() + " --model " +
                    (out / "model.json").string() + " --out " + ev2.string()) == 0);
    CHECK(slurp(ev1 / "metrics.csv") == slurp(ev2 / "metrics.csv"));
    CHECK(slurp(ev1 / "metrics.json") == slurp(ev2 / "metrics.json"));
    const auto metrics = slurp(ev1 / "metrics.csv");
    CHECK(metrics.find("test_log_likelihood") != std::string::npos);
    CHECK(metrics.find("mode_averaging") != std::string::npos);

    // em model round-trip
    const auto model = load_em_model(out / "model.json");
    save_em_model(dir.path / "resaved.json", model);
    CHECK(slurp(out / "model.json") == slurp(dir.path / "resaved.json"));
}

TEST_CASE("obstacle pipeline end to end") {
    TempDir dir("obstacle");
    const std::string cfg = R"(
[task]
type = obstacle
seed = 5
gates = 2
demos_per_behavior = 4
jitter_sd = 0.015

[train]
algorithm = imc
eta = 0.5
components = 4
max_iters = 12
epsilon = 0
seed = 1
gating_epochs = 60
gating_hidden = 16

[eval]
rollouts = 40
horizon = 60
seed = 33
start_groups = 2
)";
    spit(dir.path / "cfg.txt", cfg);
    const auto data_dir = dir.path / "data";
    REQUIRE(run_cli("generate --config " + (dir.path / "cfg.txt").string() + " --out " +
                    data_dir.string()) == 0);
    CHECK(slurp(data_dir / "manifest.txt").find("type = obstacle") != std::string::npos);
    const auto out = dir.path / "model";
    REQUIRE(run_cli("train --config " + (dir.path / "cfg.txt").string() + " --data " +
                    (data_dir / "dataset.csv").string() + " --out " + out.string()) == 2);
    const auto ev = dir.path / "ev";
    REQUIRE(run_cli("eval --config " + (dir.path / "cfg.txt").string() + " --model " +
                    (out / "model.json").string() + " --out " + ev.string()) == 0);
    const auto metrics = slurp(ev / "metrics.csv");
    CHECK(metrics.find("success_rate") != std::string::npos);
    CHECK(metrics.find("behavior_entropy") != std::string::npos);
    CHECK(fs::exists(ev / "trajectories.csv"));
}

TEST_CASE("compare grid emits one row per algorithm, component count and seed") {
    TempDir dir("compare");
    const std::string cfg = std::string(kMultibranchConfig) +
                            "\n[compare]\ncomponents = 1,2\nseeds = 0\n";
    spit(dir.path / "cfg.txt", cfg);
    const auto out = dir.path / "grid";
    REQUIRE(run_cli("compare --config " + (dir.path / "cfg.txt").string() + " --out " +
                    out.string()) == 0);
    std::istringstream csv(slurp(out / "compare.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line ==
          "algorithm,n_components,seed,success_rate,behavior_entropy,test_log_likelihood,"
          "mode_averaging,iterations,converged");
    std::size_t rows = 0, imc_rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        if (line.rfind("imc,", 0) == 0) ++imc_rows;
    }
    CHECK(rows == 4);
    CHECK(imc_rows == 2);
}
