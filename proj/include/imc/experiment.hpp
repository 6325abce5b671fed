#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/em.hpp"
#include "imc/imc.hpp"
#include "imc/synthdata.hpp"

namespace imc {

/// Key-value config with [section] headers, '#' comments, one `key = value`
/// per line.
struct KvConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static KvConfig parse_file(const std::filesystem::path& path);
    static KvConfig parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
};

enum class TaskType { multibranch, obstacle };

struct TaskSpec {
    TaskType type = TaskType::multibranch;
    std::uint64_t seed = 0;
    // multibranch
    std::size_t n_branches = 2;
    double offset_lo = -1.0;
    double offset_hi = 1.0;
    double noise_sd = 0.05;
    std::size_t n_samples = 200;
    // obstacle
    std::size_t gate_rows = 2;
    std::size_t demos_per_behavior = 25;
    double jitter_sd = 0.02;

    BranchTask branch_task() const;
    ObstacleCourse course() const;
    Dataset generate() const;
};

struct EvalSpec {
    std::size_t n_rollouts = 400;
    std::size_t horizon = 60;
    std::uint64_t eval_seed = 0;
    std::size_t n_start_groups = 1;  // > 1 spreads rollout starts into groups
    bool action_noise = false;       // sample expert actions instead of means
    std::size_t n_probe = 512;       // mode-fit probe count (multibranch)
    std::size_t n_eval_samples = 500;  // held-out set size (multibranch)
};

enum class Algorithm { imc, em, imc_single };

struct ExperimentConfig {
    TaskSpec task;
    Algorithm algorithm = Algorithm::imc;
    TrainConfig train;
    EvalSpec eval;
    std::string out_dir = "out";
    std::string dataset_path;  // train input; empty = <out>/dataset.csv
    std::string model_path;    // eval input; empty = <out>/model.json
    std::vector<std::size_t> compare_components = {1, 2, 4};
    std::vector<std::int64_t> compare_seeds = {0};

    static ExperimentConfig from_kv(const KvConfig& kv);
};

// Exit codes shared by the commands and the CLI.
constexpr int kExitOk = 0;
constexpr int kExitMaxIters = 2;
constexpr int kExitCollapse = 3;
constexpr int kExitIoError = 4;

/// Writes dataset.csv plus manifest.txt (a replayable [task] config).
int cmd_generate(const ExperimentConfig& cfg);

/// Trains per cfg.algorithm, writes model.json and history.csv. Returns
/// kExitOk on convergence, kExitMaxIters if the iteration cap hit (model is
/// still written), kExitCollapse on training collapse.
int cmd_train(const ExperimentConfig& cfg);

/// Rollout metrics (obstacle) or held-out likelihood and mode-fit flag
/// (multibranch); writes metrics.csv, metrics.json and trajectories.csv.
int cmd_eval(const ExperimentConfig& cfg);

/// IMC vs EM over the K x seed grid on one shared dataset; writes
/// compare.csv.
int cmd_compare(const ExperimentConfig& cfg);

/// The policy a trained model exposes to the simulator: z from the gating
/// net, action from expert z (mean unless action_noise).
Policy make_model_policy(const std::vector<GaussianExpert>& experts, const GatingNet& gating,
                         bool action_noise);

}  // namespace imc
