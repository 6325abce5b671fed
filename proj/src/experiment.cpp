#include "imc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "imc/errors.hpp"
#include "imc/metrics.hpp"
#include "imc/model_io.hpp"

namespace imc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InvalidInputError("config: bad number '" + s + "'");
    }
}

std::size_t to_size(const std::string& s) {
    const double v = to_double(s);
    if (v < 0 || v != std::floor(v)) throw InvalidInputError("config: bad integer '" + s + "'");
    return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& s) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw InvalidInputError("config: bad flag '" + s + "'");
}

template <class T, class F>
std::vector<T> to_list(const std::string& s, F&& conv) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(conv(trim(item)));
    return out;
}

}  // namespace

KvConfig KvConfig::parse_string(const std::string& text) {
    KvConfig kv;
    std::string section;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw InvalidInputError("config line " + std::to_string(lineno) +
                                        ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            kv.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidInputError("config line " + std::to_string(lineno) + ": expected key = value");
        kv.sections[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
}

std::string KvConfig::get(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw InvalidInputError("config: missing [" + section + "] " + key);
    return sections.at(section).at(key);
}

std::string KvConfig::get_or(const std::string& section, const std::string& key,
                             const std::string& fallback) const {
    return has(section, key) ? sections.at(section).at(key) : fallback;
}

BranchTask TaskSpec::branch_task() const {
    auto t = BranchTask::evenly_spaced(n_branches, offset_lo, offset_hi);
    t.noise_sd = noise_sd;
    return t;
}

ObstacleCourse TaskSpec::course() const {
    ObstacleCourse c;
    c.gate_rows = gate_rows;
    return c;
}

Dataset TaskSpec::generate() const {
    if (type == TaskType::multibranch) return gen_multibranch(branch_task(), n_samples, seed);
    return gen_obstacle_demos(course(), demos_per_behavior, jitter_sd, seed);
}

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
    ExperimentConfig cfg;

    const std::string task_type = kv.get_or("task", "type", "multibranch");
    if (task_type == "multibranch")
        cfg.task.type = TaskType::multibranch;
    else if (task_type == "obstacle")
        cfg.task.type = TaskType::obstacle;
    else
        throw InvalidInputError("config: unknown task type '" + task_type + "'");
    cfg.task.seed = to_size(kv.get_or("task", "seed", "0"));
    cfg.task.n_branches = to_size(kv.get_or("task", "branches", "2"));
    cfg.task.offset_lo = to_double(kv.get_or("task", "offset_lo", "-1"));
    cfg.task.offset_hi = to_double(kv.get_or("task", "offset_hi", "1"));
    cfg.task.noise_sd = to_double(kv.get_or("task", "noise_sd", "0.05"));
    cfg.task.n_samples = to_size(kv.get_or("task", "samples", "200"));
    cfg.task.gate_rows = to_size(kv.get_or("task", "gates", "2"));
    cfg.task.demos_per_behavior = to_size(kv.get_or("task", "demos_per_behavior", "25"));
    cfg.task.jitter_sd = to_double(kv.get_or("task", "jitter_sd", "0.02"));

    const std::string algo = kv.get_or("train", "algorithm", "imc");
    if (algo == "imc")
        cfg.algorithm = Algorithm::imc;
    else if (algo == "em")
        cfg.algorithm = Algorithm::em;
    else if (algo == "imc-single")
        cfg.algorithm = Algorithm::imc_single;
    else
        throw InvalidInputError("config: unknown algorithm '" + algo + "'");
    cfg.train.eta = to_double(kv.get_or("train", "eta", "1"));
    cfg.train.n_components = to_size(kv.get_or("train", "components", "2"));
    cfg.train.sigma_sq = to_double(kv.get_or("train", "sigma_sq", "1"));
    cfg.train.expert_lr = to_double(kv.get_or("train", "expert_lr", "1e-2"));
    cfg.train.expert_steps_per_m = to_size(kv.get_or("train", "expert_steps", "20"));
    cfg.train.gating_lr = to_double(kv.get_or("train", "gating_lr", "1e-3"));
    cfg.train.gating_epochs = to_size(kv.get_or("train", "gating_epochs", "200"));
    cfg.train.gating_hidden =
        to_list<std::size_t>(kv.get_or("train", "gating_hidden", "32"), to_size);
    cfg.train.max_iters = to_size(kv.get_or("train", "max_iters", "100"));
    cfg.train.epsilon = to_double(kv.get_or("train", "epsilon", "1e-6"));
    const std::string batch = kv.get_or("train", "batch_size", "full");
    cfg.train.batch_size = batch == "full" ? kFullBatch : to_size(batch);
    cfg.train.ridge_lambda = to_double(kv.get_or("train", "ridge_lambda", "1e-8"));
    cfg.train.seed = static_cast<std::int64_t>(to_double(kv.get_or("train", "seed", "0")));
    const std::string expert = kv.get_or("train", "expert", "linear");
    if (expert == "linear") {
        cfg.train.arch.kind = ExpertKind::linear;
    } else if (expert == "neural" || expert == "neural-multihead") {
        cfg.train.arch.kind = ExpertKind::neural;
        cfg.train.arch.multi_head = expert == "neural-multihead";
        cfg.train.arch.hidden = to_list<std::size_t>(kv.get_or("train", "hidden", "32"), to_size);
        cfg.train.arch.obs_dims = to_size(kv.get_or("train", "expert_obs", "0"));
    } else {
        throw InvalidInputError("config: unknown expert kind '" + expert + "'");
    }
    if (cfg.algorithm == Algorithm::imc_single) cfg.train.n_components = 1;

    cfg.eval.n_rollouts = to_size(kv.get_or("eval", "rollouts", "400"));
    cfg.eval.horizon = to_size(kv.get_or("eval", "horizon", "60"));
    cfg.eval.eval_seed = to_size(kv.get_or("eval", "seed", "1234"));
    cfg.eval.n_start_groups = to_size(kv.get_or("eval", "start_groups", "1"));
    cfg.eval.action_noise = to_bool(kv.get_or("eval", "action_noise", "off"));
    cfg.eval.n_probe = to_size(kv.get_or("eval", "probe", "512"));
    cfg.eval.n_eval_samples = to_size(kv.get_or("eval", "samples", "500"));

    cfg.out_dir = kv.get_or("output", "dir", "out");
    cfg.dataset_path = kv.get_or("train", "data", "");
    cfg.model_path = kv.get_or("eval", "model", "");
    if (kv.has("compare", "components"))
        cfg.compare_components =
            to_list<std::size_t>(kv.get("compare", "components"), to_size);
    if (kv.has("compare", "seeds"))
        cfg.compare_seeds = to_list<std::int64_t>(kv.get("compare", "seeds"), [](const std::string& s) {
            return static_cast<std::int64_t>(to_double(s));
        });
    return cfg;
}

namespace {

namespace fs = std::filesystem;

std::string task_manifest(const TaskSpec& t) {
    std::ostringstream out;
    out << "[task]\n";
    if (t.type == TaskType::multibranch) {
        out << "type = multibranch\n";
        out << "seed = " << t.seed << "\n";
        out << "branches = " << t.n_branches << "\n";
        out << "offset_lo = " << format_double(t.offset_lo) << "\n";
        out << "offset_hi = " << format_double(t.offset_hi) << "\n";
        out << "noise_sd = " << format_double(t.noise_sd) << "\n";
        out << "samples = " << t.n_samples << "\n";
    } else {
        out << "type = obstacle\n";
        out << "seed = " << t.seed << "\n";
        out << "gates = " << t.gate_rows << "\n";
        out << "demos_per_behavior = " << t.demos_per_behavior << "\n";
        out << "jitter_sd = " << format_double(t.jitter_sd) << "\n";
    }
    return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

fs::path dataset_file(const ExperimentConfig& cfg) {
    return cfg.dataset_path.empty() ? fs::path(cfg.out_dir) / "dataset.csv"
                                    : fs::path(cfg.dataset_path);
}

fs::path model_file(const ExperimentConfig& cfg) {
    return cfg.model_path.empty() ? fs::path(cfg.out_dir) / "model.json"
                                  : fs::path(cfg.model_path);
}

void write_imc_history(const fs::path& path, const ImcModel& model) {
    std::ostringstream out;
    out << "iteration,lower_bound,objective_j,kl_term,active_components\n";
    for (const auto& r : model.history)
        out << r.iteration << ',' << format_double(r.lower_bound) << ','
            << format_double(r.objective_j) << ',' << format_double(r.kl_term) << ','
            << r.active_components << '\n';
    write_text(path, out.str());
}

void write_em_history(const fs::path& path, const EmModel& model) {
    std::ostringstream out;
    out << "iteration,marginal_log_likelihood\n";
    for (const auto& r : model.history)
        out << r.iteration << ',' << format_double(r.marginal_log_likelihood) << '\n';
    write_text(path, out.str());
}

struct EvalMetrics {
    std::vector<std::pair<std::string, double>> values;  // emitted in order
};

void write_metrics(const fs::path& dir, const EvalMetrics& m) {
    std::ostringstream csv;
    csv << "metric,value\n";
    nlohmann::json j;
    for (const auto& [k, v] : m.values) {
        csv << k << ',' << format_double(v) << '\n';
        j[k] = v;
    }
    write_text(dir / "metrics.csv", csv.str());
    write_text(dir / "metrics.json", j.dump(1) + "\n");
}

struct LoadedModel {
    std::vector<GaussianExpert> experts;
    GatingNet gating;
    TrainConfig config;
};

LoadedModel load_any_model(const fs::path& path) {
    const auto algo = model_algorithm(path);
    if (algo == "imc") {
        auto m = load_imc_model(path);
        if (!m.gating.has_value()) throw IoError("model has no gating net: " + path.string());
        return {std::move(m.experts), std::move(*m.gating), m.config};
    }
    if (algo == "em") {
        auto m = load_em_model(path);
        if (!m.gating.has_value()) throw IoError("model has no gating net: " + path.string());
        return {std::move(m.experts), std::move(*m.gating), m.config};
    }
    throw IoError("unknown model algorithm in " + path.string());
}

// Train + distill per the configured algorithm; returns the exit code and
// writes model and history files.
int train_and_save(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir) {
    RngStream gating_rng(static_cast<std::uint64_t>(cfg.train.seed));
    if (cfg.algorithm == Algorithm::em) {
        EmModel model = em_train(data, cfg.train);
        LogCurriculum as_weights{Matrix(model.gating_table.rows(), model.gating_table.cols()), 0};
        for (std::size_t i = 0; i < model.gating_table.size(); ++i) {
            const double q = model.gating_table.data()[i];
            as_weights.log_weights.data()[i] =
                q > 0.0 ? std::log(q) : -std::numeric_limits<double>::infinity();
        }
        model.gating = fit_gating(as_weights, data.observations, cfg.train, gating_rng);
        save_em_model(out_dir / "model.json", model);
        write_em_history(out_dir / "history.csv", model);
        return model.converged ? kExitOk : kExitMaxIters;
    }

    ImcModel model;
    if (cfg.algorithm == Algorithm::imc_single) {
        TrainConfig tc = cfg.train;
        tc.n_components = 1;
        const auto single = train_single_expert(data, tc);
        model.config = tc;
        model.converged = single.converged;
        model.experts = {single.expert};
        model.log_curriculum = LogCurriculum{Matrix(data.size(), 1), single.objective_history.size()};
        for (std::size_t n = 0; n < data.size(); ++n)
            model.log_curriculum.log_weights(n, 0) =
                single.curriculum[n] > 0.0 ? std::log(single.curriculum[n])
                                           : -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < single.objective_history.size(); ++i)
            model.history.push_back(
                {i + 1, single.objective_history[i], single.objective_history[i], 0.0, 1, {1.0}});
    } else {
        const std::size_t n = data.size();
        const bool minibatch =
            cfg.train.batch_size != kFullBatch && cfg.train.batch_size < n;
        model = minibatch ? train_minibatch(data, cfg.train) : train(data, cfg.train);
    }
    model.gating = fit_gating(model.log_curriculum, data.observations, cfg.train, gating_rng);
    save_imc_model(out_dir / "model.json", model);
    write_imc_history(out_dir / "history.csv", model);
    return model.converged ? kExitOk : kExitMaxIters;
}

EvalMetrics eval_obstacle(const ExperimentConfig& cfg, const LoadedModel& model) {
    const ObstacleCourse course = cfg.task.course();
    course.validate();
    const auto policy_factory = [&](std::size_t) {
        return make_model_policy(model.experts, model.gating, cfg.eval.action_noise);
    };
    std::vector<std::array<double, 2>> starts;
    const std::size_t groups = std::max<std::size_t>(1, cfg.eval.n_start_groups);
    if (groups > 1) {
        for (std::size_t g = 0; g < groups; ++g) {
            const double f = static_cast<double>(g) / static_cast<double>(groups - 1);
            starts.push_back({0.4 + 0.2 * f, 0.0});
        }
    }
    const auto trajectories =
        rollout_many(policy_factory, course, cfg.eval.n_rollouts, cfg.eval.horizon,
                     cfg.eval.eval_seed, starts.empty() ? nullptr : &starts);
    save_trajectories(fs::path(cfg.out_dir) / "trajectories.csv", trajectories);

    std::vector<bool> flags;
    flags.reserve(trajectories.size());
    for (const auto& t : trajectories) flags.push_back(t.success);

    EvalMetrics metrics;
    metrics.values.emplace_back("success_rate", success_rate(flags));
    const auto counts = BehaviorCounts::from_trajectories(trajectories, course.n_behaviors());
    std::size_t successes = 0;
    for (auto c : counts.counts) successes += c;
    metrics.values.emplace_back("behavior_entropy",
                                successes > 0 ? behavior_entropy(counts) : 0.0);
    if (groups > 1) {
        std::vector<BehaviorCounts> per_start;
        for (std::size_t g = 0; g < groups; ++g) {
            std::vector<Trajectory> group;
            for (std::size_t i = g; i < trajectories.size(); i += groups)
                group.push_back(trajectories[i]);
            auto c = BehaviorCounts::from_trajectories(group, course.n_behaviors());
            std::size_t total = 0;
            for (auto v : c.counts) total += v;
            if (total > 0) per_start.push_back(std::move(c));
        }
        if (!per_start.empty())
            metrics.values.emplace_back("expected_conditional_entropy",
                                        expected_conditional_entropy(per_start));
    }
    return metrics;
}

EvalMetrics eval_multibranch(const ExperimentConfig& cfg, const LoadedModel& model) {
    TaskSpec held_out = cfg.task;
    held_out.seed = cfg.eval.eval_seed;
    held_out.n_samples = cfg.eval.n_eval_samples;
    const Dataset eval_data = held_out.generate();

    EvalMetrics metrics;
    metrics.values.emplace_back("test_log_likelihood",
                                test_log_likelihood(model.experts, model.gating, eval_data));
    const BranchTask task = cfg.task.branch_task();
    const bool noise = cfg.eval.action_noise;
    const auto sampler = [&](double o, RngStream& rng) {
        const double obs[1] = {o};
        return sample(model.experts, model.gating, obs, rng, !noise).action[0];
    };
    const auto fit = mode_fit_diagnostic(sampler, task, cfg.eval.n_probe, cfg.eval.eval_seed);
    metrics.values.emplace_back("mode_mean_distance", fit.mean_distance);
    metrics.values.emplace_back("mode_averaging", fit.averaging_flag ? 1.0 : 0.0);
    return metrics;
}

}  // namespace

Policy make_model_policy(const std::vector<GaussianExpert>& experts, const GatingNet& gating,
                         bool action_noise) {
    return [&experts, &gating, action_noise](std::array<double, 4> obs, RngStream& rng) {
        const auto s = sample(experts, gating, obs, rng, !action_noise);
        return std::array<double, 2>{s.action[0], s.action[1]};
    };
}

int cmd_generate(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const Dataset ds = cfg.task.generate();
    save_dataset(fs::path(cfg.out_dir) / "dataset.csv", ds);
    write_text(fs::path(cfg.out_dir) / "manifest.txt", task_manifest(cfg.task));
    return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const Dataset data = load_dataset(dataset_file(cfg));
    return train_and_save(cfg, data, cfg.out_dir);
}

int cmd_eval(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const LoadedModel model = load_any_model(model_file(cfg));
    const std::size_t model_d_o =
        model.experts.empty() ? 0
        : model.experts[0].is_linear()
            ? std::get<LinearMean>(model.experts[0].mean_model).w.cols() - 1
            : std::get<NeuralMean>(model.experts[0].mean_model).net->input_dim();
    const std::size_t task_d_o = cfg.task.type == TaskType::obstacle ? 4 : 1;
    if (model_d_o != task_d_o)
        throw InvalidInputError("eval: model expects d_o=" + std::to_string(model_d_o) +
                                " but task provides d_o=" + std::to_string(task_d_o));
    const EvalMetrics metrics = cfg.task.type == TaskType::obstacle
                                    ? eval_obstacle(cfg, model)
                                    : eval_multibranch(cfg, model);
    write_metrics(cfg.out_dir, metrics);
    return kExitOk;
}

int cmd_compare(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const Dataset data = cfg.task.generate();
    save_dataset(fs::path(cfg.out_dir) / "dataset.csv", data);

    std::ostringstream csv;
    csv << "algorithm,n_components,seed,success_rate,behavior_entropy,test_log_likelihood,"
           "mode_averaging,iterations,converged\n";
    for (const std::int64_t seed : cfg.compare_seeds) {
        for (const std::size_t k : cfg.compare_components) {
            for (const Algorithm algo : {Algorithm::imc, Algorithm::em}) {
                ExperimentConfig cell = cfg;
                cell.algorithm = algo;
                cell.train.n_components = k;
                cell.train.seed = seed;
                const fs::path cell_dir = fs::path(cfg.out_dir) /
                                          ((algo == Algorithm::imc ? "imc_k" : "em_k") +
                                           std::to_string(k) + "_s" + std::to_string(seed));
                fs::create_directories(cell_dir);
                const int code = train_and_save(cell, data, cell_dir);
                if (code == kExitCollapse) continue;
                cell.model_path = (cell_dir / "model.json").string();
                cell.out_dir = cell_dir.string();

                const LoadedModel model = load_any_model(cell_dir / "model.json");
                std::size_t iterations = 0;
                EvalMetrics metrics;
                if (cfg.task.type == TaskType::obstacle)
                    metrics = eval_obstacle(cell, model);
                else
                    metrics = eval_multibranch(cell, model);
                if (model_algorithm(cell_dir / "model.json") == "imc")
                    iterations = load_imc_model(cell_dir / "model.json").history.size();
                else
                    iterations = load_em_model(cell_dir / "model.json").history.size();

                auto find = [&](const std::string& key) {
                    for (const auto& [k2, v] : metrics.values)
                        if (k2 == key) return format_double(v);
                    return std::string();
                };
                std::string success = find("success_rate");
                if (success.empty() && !find("mode_averaging").empty())
                    success = format_double(1.0 - to_double(find("mode_averaging")));
                csv << (algo == Algorithm::imc ? "imc" : "em") << ',' << k << ',' << seed << ','
                    << success << ',' << find("behavior_entropy") << ','
                    << find("test_log_likelihood") << ',' << find("mode_averaging") << ','
                    << iterations << ',' << (code == kExitOk ? 1 : 0) << '\n';
            }
        }
    }
    write_text(fs::path(cfg.out_dir) / "compare.csv", csv.str());
    return kExitOk;
}

}  // namespace imc
