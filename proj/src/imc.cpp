#include "imc/imc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imc/errors.hpp"
#include "imc/logsum.hpp"
#include "imc/parallel.hpp"

namespace imc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInf = std::numeric_limits<double>::infinity();

// Substream ids for the trainer's independent random streams.
constexpr std::uint64_t kExpertStreamBase = 1000;
constexpr std::uint64_t kBatchStream = 2;

// Uniform-curriculum pre-fit for neural experts (the eta -> infinity limit
// of one M-step). Components start from the shared average flow and
// differentiate where that flow cannot fit, instead of locking onto the
// noise of their random initializations.
constexpr std::size_t kWarmStartSteps = 60;

std::vector<double> column_log_sums(const Matrix& lw) {
    std::vector<double> col_lse(lw.cols());
    par::for_n(lw.cols(), [&](std::size_t k) {
        double max = kNegInf;
        for (std::size_t n = 0; n < lw.rows(); ++n) max = std::max(max, lw(n, k));
        if (max == kNegInf) {
            col_lse[k] = kNegInf;
            return;
        }
        double sum = 0.0;
        for (std::size_t n = 0; n < lw.rows(); ++n) sum += std::exp(lw(n, k) - max);
        col_lse[k] = max + std::log(sum);
    });
    return col_lse;
}

bool stop_reached(double delta, double level, double epsilon) {
    return delta <= epsilon * std::max(1.0, std::abs(level));
}

}  // namespace

std::vector<GaussianExpert> init_experts(const Dataset& data, const TrainConfig& cfg) {
    const std::size_t k = cfg.n_components;
    RngStream root(static_cast<std::uint64_t>(cfg.seed));
    std::vector<GaussianExpert> experts;
    experts.reserve(k);
    const std::size_t obs_dims =
        cfg.arch.obs_dims > 0 && cfg.arch.obs_dims < data.d_o() ? cfg.arch.obs_dims : 0;
    const std::size_t d_in = obs_dims > 0 ? obs_dims : data.d_o();
    if (cfg.arch.kind == ExpertKind::linear) {
        for (std::size_t z = 0; z < k; ++z) {
            auto rng = root.substream(kExpertStreamBase + z);
            LinearMean lm{Matrix(data.d_a(), d_in + 1)};
            // small per-component noise so identical components can diverge
            for (std::size_t i = 0; i < lm.w.size(); ++i) lm.w.data()[i] = 1e-2 * rng.normal();
            experts.push_back(GaussianExpert{std::move(lm), cfg.sigma_sq, obs_dims});
        }
        return experts;
    }
    std::vector<std::size_t> sizes;
    sizes.push_back(d_in);
    sizes.insert(sizes.end(), cfg.arch.hidden.begin(), cfg.arch.hidden.end());
    if (cfg.arch.multi_head) {
        sizes.push_back(k * data.d_a());
        auto rng = root.substream(kExpertStreamBase);
        auto net = std::make_shared<nn::MlpParams>(
            nn::MlpParams::init(sizes, cfg.arch.activation, k, rng));
        for (std::size_t z = 0; z < k; ++z)
            experts.push_back(GaussianExpert{NeuralMean{net, z}, cfg.sigma_sq, obs_dims});
    } else {
        sizes.push_back(data.d_a());
        for (std::size_t z = 0; z < k; ++z) {
            auto rng = root.substream(kExpertStreamBase + z);
            auto net = std::make_shared<nn::MlpParams>(
                nn::MlpParams::init(sizes, cfg.arch.activation, 1, rng));
            experts.push_back(GaussianExpert{NeuralMean{net, 0}, cfg.sigma_sq, obs_dims});
        }
    }
    return experts;
}

Responsibilities e_step(const LogCurriculum& lc) {
    auto rn = row_log_normalize(lc.log_weights);
    Responsibilities r;
    r.q = Matrix(rn.normalized.rows(), rn.normalized.cols());
    par::for_n(rn.normalized.rows(), [&](std::size_t n) {
        for (std::size_t k = 0; k < rn.normalized.cols(); ++k)
            r.q(n, k) = std::exp(rn.normalized(n, k));
    });
    r.log_q = std::move(rn.normalized);
    return r;
}

LogCurriculum m_step_curricula(const Matrix& log_density, const Responsibilities& q, double eta,
                               std::size_t iteration) {
    if (!(eta > 0.0)) throw InvalidInputError("m_step_curricula: eta must be > 0");
    if (log_density.rows() != q.q.rows() || log_density.cols() != q.q.cols())
        throw InvalidInputError("m_step_curricula: shape mismatch");
    LogCurriculum lc{Matrix(log_density.rows(), log_density.cols()), iteration};
    std::vector<std::size_t> bad(log_density.rows(), 0);
    par::for_n(log_density.rows(), [&](std::size_t n) {
        for (std::size_t k = 0; k < log_density.cols(); ++k) {
            const double d = log_density(n, k);
            if (std::isnan(d)) {
                bad[n] = 1;
                return;
            }
            const double lq = q.log_q.has_value() ? (*q.log_q)(n, k)
                              : q.q(n, k) > 0.0   ? std::log(q.q(n, k))
                                                  : kNegInf;
            lc.log_weights(n, k) = d / eta + lq;
        }
    });
    for (std::size_t n = 0; n < log_density.rows(); ++n)
        if (bad[n]) throw InvalidInputError("m_step_curricula: NaN log-density at row " +
                                            std::to_string(n));
    return lc;
}

LogCurriculum m_step_curricula(std::span<const GaussianExpert> experts, const Dataset& data,
                               const Responsibilities& q, double eta, std::size_t iteration) {
    return m_step_curricula(log_density_matrix(experts, data), q, eta, iteration);
}

MStepReport m_step_experts(std::vector<GaussianExpert>& experts, const Dataset& data,
                           const LogCurriculum& lc, const TrainConfig& cfg,
                           std::vector<nn::OptimizerState>& opt_states) {
    const std::size_t n_rows = lc.log_weights.rows();
    const std::size_t k = experts.size();
    if (lc.log_weights.cols() != k || n_rows != data.size())
        throw InvalidInputError("m_step_experts: shape mismatch");

    // Per-component weights, max-normalized in the log domain. A component
    // whose column carries no mass is frozen.
    Matrix weights(n_rows, k);
    std::vector<std::size_t> dead;
    for (std::size_t z = 0; z < k; ++z) {
        double max = kNegInf;
        for (std::size_t n = 0; n < n_rows; ++n) max = std::max(max, lc.log_weights(n, z));
        if (max == kNegInf) {
            dead.push_back(z);
            continue;
        }
        for (std::size_t n = 0; n < n_rows; ++n)
            weights(n, z) = std::exp(lc.log_weights(n, z) - max);
    }
    if (dead.size() == k) throw TrainingCollapseError(lc.iteration);

    const bool multi_head = !experts.empty() && !experts[0].is_linear() &&
                            std::get<NeuralMean>(experts[0].mean_model).net->n_heads > 1;
    if (multi_head) {
        // One joint weighted loss over all heads; dead columns are zero.
        for (std::size_t z : dead)
            for (std::size_t n = 0; n < n_rows; ++n) weights(n, z) = 0.0;
        auto& net = *std::get<NeuralMean>(experts[0].mean_model).net;
        fit_neural_weighted_joint(net, data, weights, cfg.expert_steps_per_m, opt_states.at(0));
        return {std::move(dead)};
    }

    std::vector<char> is_dead(k, 0);
    for (std::size_t z : dead) is_dead[z] = 1;
    if (experts.empty() || experts[0].is_linear()) {
        const std::size_t slice = experts.empty() ? 0 : experts[0].obs_dims;
        Matrix inputs = data.observations;
        if (slice > 0 && slice < data.d_o()) {
            inputs = Matrix(n_rows, slice);
            for (std::size_t n = 0; n < n_rows; ++n)
                for (std::size_t c = 0; c < slice; ++c) inputs(n, c) = data.observations(n, c);
        }
        std::vector<LinearMean> fits(k);
        par::for_n(k, [&](std::size_t z) {
            if (is_dead[z]) return;
            std::vector<double> w(n_rows);
            for (std::size_t n = 0; n < n_rows; ++n) w[n] = weights(n, z);
            fits[z] = fit_linear_weighted(inputs, data.actions, w, cfg.ridge_lambda);
        });
        for (std::size_t z = 0; z < k; ++z)
            if (!is_dead[z]) experts[z].mean_model = std::move(fits[z]);
    } else {
        for (std::size_t z = 0; z < k; ++z) {
            if (is_dead[z]) continue;
            std::vector<double> w(n_rows);
            for (std::size_t n = 0; n < n_rows; ++n) w[n] = weights(n, z);
            fit_neural_weighted(experts[z], data, w, cfg.expert_steps_per_m, opt_states.at(z));
        }
    }
    return {std::move(dead)};
}

double lower_bound(const LogCurriculum& lc, double eta) {
    if (!(eta > 0.0)) throw InvalidInputError("lower_bound: eta must be > 0");
    const double lse = matrix_log_sum_exp(lc.log_weights);
    if (lse == kNegInf)
        throw InvalidInputError("lower_bound: curriculum has no mass anywhere");
    return eta * lse;
}

MixtureWeights mixture_weights(const LogCurriculum& lc) {
    const auto col_lse = column_log_sums(lc.log_weights);
    const double total = log_sum_exp(col_lse);
    if (total == kNegInf)
        throw InvalidInputError("mixture_weights: curriculum has no mass anywhere");
    MixtureWeights mw{std::vector<double>(col_lse.size())};
    for (std::size_t z = 0; z < col_lse.size(); ++z)
        mw.p_z[z] = col_lse[z] == kNegInf ? 0.0 : std::exp(col_lse[z] - total);
    return mw;
}

ObjectiveParts evaluate_objective(const Matrix& log_density, const LogCurriculum& lc,
                                  const Responsibilities& q, double eta) {
    const std::size_t n_rows = lc.log_weights.rows();
    const std::size_t k = lc.log_weights.cols();
    if (log_density.rows() != n_rows || log_density.cols() != k || q.q.rows() != n_rows ||
        q.q.cols() != k)
        throw InvalidInputError("evaluate_objective: shape mismatch");

    const auto posterior = row_log_normalize(lc.log_weights);  // log p(z|o_n,a_n)
    const auto col_lse = column_log_sums(lc.log_weights);
    const double total = log_sum_exp(col_lse);

    auto log_q_at = [&](std::size_t n, std::size_t z) {
        if (q.log_q.has_value()) return (*q.log_q)(n, z);
        return q.q(n, z) > 0.0 ? std::log(q.q(n, z)) : kNegInf;
    };

    // J (eq. form): E_{p(z)} E_{p(o,a|z)}[log p_theta] + eta * H(o,a)
    double e_term = 0.0;
    for (std::size_t z = 0; z < k; ++z) {
        if (col_lse[z] == kNegInf) continue;
        const double p_z = std::exp(col_lse[z] - total);
        if (p_z == 0.0) continue;
        double inner = 0.0;
        for (std::size_t n = 0; n < n_rows; ++n) {
            const double lp = lc.log_weights(n, z) - col_lse[z];
            const double p_nz = std::exp(lp);
            if (p_nz > 0.0) inner += p_nz * log_density(n, z);
        }
        e_term += p_z * inner;
    }
    double h_joint = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
        const double lp_n = posterior.row_lse[n] - total;
        const double p_n = std::exp(lp_n);
        if (p_n > 0.0) h_joint -= p_n * lp_n;
    }
    const double j = e_term + eta * h_joint;

    // L term by term: E_{p(z)}[ E_{p(o,a|z)}[R_z] + eta H(o,a|z) ] + eta H(z)
    double l = 0.0;
    for (std::size_t z = 0; z < k; ++z) {
        if (col_lse[z] == kNegInf) continue;
        const double log_p_z = col_lse[z] - total;
        const double p_z = std::exp(log_p_z);
        if (p_z == 0.0) continue;
        double inner = 0.0;
        for (std::size_t n = 0; n < n_rows; ++n) {
            const double lp = lc.log_weights(n, z) - col_lse[z];
            const double p_nz = std::exp(lp);
            if (p_nz == 0.0) continue;
            const double r_z = log_density(n, z) + eta * log_q_at(n, z);
            inner += p_nz * (r_z - eta * lp);
        }
        l += p_z * (inner - eta * log_p_z);
    }

    // eta * E_{p(o,a)} KL(p(z|o,a) || q)
    double kl = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
        const double p_n = std::exp(posterior.row_lse[n] - total);
        if (p_n == 0.0) continue;
        double row = 0.0;
        for (std::size_t z = 0; z < k; ++z) {
            const double lp = posterior.normalized(n, z);
            const double p = std::exp(lp);
            if (p > 0.0) row += p * (lp - log_q_at(n, z));
        }
        kl += p_n * row;
    }
    kl *= eta;

    return {j, l, kl};
}

ObjectiveParts evaluate_objective(const ImcModel& model, const Dataset& data,
                                  const Responsibilities& q) {
    return evaluate_objective(log_density_matrix(model.experts, data), model.log_curriculum, q,
                              model.config.eta);
}

namespace {

struct TrainerState {
    std::vector<GaussianExpert> experts;
    std::vector<nn::OptimizerState> opt_states;
};

TrainerState make_trainer_state(const Dataset& data, const TrainConfig& cfg) {
    TrainerState st;
    st.experts = init_experts(data, cfg);
    if (cfg.arch.kind == ExpertKind::neural) {
        const std::size_t n_opts = cfg.arch.multi_head ? 1 : cfg.n_components;
        st.opt_states.assign(n_opts, nn::OptimizerState::adam(cfg.expert_lr));
        if (cfg.arch.multi_head) {
            Matrix uniform(data.size(), cfg.n_components, 1.0);
            auto& net = *std::get<NeuralMean>(st.experts[0].mean_model).net;
            fit_neural_weighted_joint(net, data, uniform, kWarmStartSteps, st.opt_states[0]);
        } else {
            std::vector<double> uniform(data.size(), 1.0);
            for (std::size_t z = 0; z < cfg.n_components; ++z)
                fit_neural_weighted(st.experts[z], data, uniform, kWarmStartSteps,
                                    st.opt_states[z]);
        }
    }
    return st;
}

}  // namespace

ImcModel train(const Dataset& data, const TrainConfig& config) {
    data.validate();
    config.validate();
    const std::size_t n = data.size();
    const std::size_t k = config.n_components;

    auto st = make_trainer_state(data, config);
    ImcModel model;
    model.config = config;
    model.log_curriculum = LogCurriculum::initial(n, k);

    double l_prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
        const Matrix density = log_density_matrix(st.experts, data);
        Responsibilities q;
        try {
            q = e_step(model.log_curriculum);
        } catch (const DegenerateRowError& e) {
            throw DegenerateRowError(e.row, iter);
        }
        const auto parts = evaluate_objective(density, model.log_curriculum, q, config.eta);
        model.log_curriculum = m_step_curricula(density, q, config.eta, iter);
        const double lb = lower_bound(model.log_curriculum, config.eta);
        const auto rep =
            m_step_experts(st.experts, data, model.log_curriculum, config, st.opt_states);
        const auto mw = mixture_weights(model.log_curriculum);
        model.history.push_back({iter, lb, parts.j, parts.kl_term, k - rep.dead_components.size(),
                                 mw.p_z});
        const double delta = std::isnan(l_prev) ? kInf : std::abs(lb - l_prev);
        l_prev = lb;
        if (stop_reached(delta, lb, config.epsilon)) {
            model.converged = true;
            break;
        }
    }
    model.experts = std::move(st.experts);
    return model;
}

ImcModel train_minibatch(const Dataset& data, const TrainConfig& config) {
    data.validate();
    config.validate();
    const std::size_t n = data.size();
    const std::size_t k = config.n_components;
    const std::size_t batch =
        (config.batch_size == kFullBatch || config.batch_size >= n) ? n : config.batch_size;

    auto st = make_trainer_state(data, config);
    RngStream batch_rng = RngStream(static_cast<std::uint64_t>(config.seed)).substream(kBatchStream);

    ImcModel model;
    model.config = config;
    model.log_curriculum = LogCurriculum::initial(n, k);

    double smoothed = std::numeric_limits<double>::quiet_NaN();
    double smoothed_prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
        auto idx = batch_rng.sample_without_replacement(n, batch);
        std::sort(idx.begin(), idx.end());
        const Dataset batch_data = data.select(idx);
        const Matrix density = log_density_matrix(st.experts, batch_data);

        LogCurriculum lc_batch{Matrix(batch, k), model.log_curriculum.iteration};
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t z = 0; z < k; ++z)
                lc_batch.log_weights(r, z) = model.log_curriculum.log_weights(idx[r], z);

        Responsibilities q;
        try {
            q = e_step(lc_batch);
        } catch (const DegenerateRowError& e) {
            throw DegenerateRowError(idx[e.row], iter);
        }
        const auto parts = evaluate_objective(density, lc_batch, q, config.eta);
        lc_batch = m_step_curricula(density, q, config.eta, iter);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t z = 0; z < k; ++z)
                model.log_curriculum.log_weights(idx[r], z) = lc_batch.log_weights(r, z);
        model.log_curriculum.iteration = iter;

        const double lb = lower_bound(lc_batch, config.eta);
        const auto rep = m_step_experts(st.experts, batch_data, lc_batch, config, st.opt_states);
        const auto mw = mixture_weights(lc_batch);
        model.history.push_back({iter, lb, parts.j, parts.kl_term, k - rep.dead_components.size(),
                                 mw.p_z});

        smoothed = std::isnan(smoothed) ? lb : 0.9 * smoothed + 0.1 * lb;
        const double delta =
            std::isnan(smoothed_prev) ? kInf : std::abs(smoothed - smoothed_prev);
        smoothed_prev = smoothed;
        if (stop_reached(delta, smoothed, config.epsilon)) {
            model.converged = true;
            break;
        }
    }
    model.experts = std::move(st.experts);
    return model;
}

std::vector<double> single_expert_curriculum(std::span<const double> log_densities, double eta) {
    if (!(eta > 0.0)) throw InvalidInputError("single_expert_curriculum: eta must be > 0");
    std::vector<double> logw(log_densities.size());
    for (std::size_t i = 0; i < logw.size(); ++i) logw[i] = log_densities[i] / eta;
    const double lse = log_sum_exp(logw);
    std::vector<double> p(logw.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logw[i] - lse);
    return p;
}

SingleExpertResult train_single_expert(const Dataset& data, const TrainConfig& config) {
    data.validate();
    config.validate();
    if (config.n_components != 1)
        throw InvalidInputError("train_single_expert: n_components must be 1");
    const std::size_t n = data.size();

    auto st = make_trainer_state(data, config);
    if (st.experts[0].is_linear()) {
        // Prototype seeding: start as the constant map through one random
        // sample. A mid-data zero init sits on a saddle between modes.
        auto boot = RngStream(static_cast<std::uint64_t>(config.seed)).substream(kExpertStreamBase);
        const std::size_t j = boot.uniform_index(n);
        Matrix w(data.d_a(), data.d_o() + 1, 0.0);
        for (std::size_t r = 0; r < data.d_a(); ++r) w(r, data.d_o()) = data.actions(j, r);
        st.experts[0].mean_model = LinearMean{std::move(w)};
    }
    SingleExpertResult result;

    auto curriculum_of = [&](const Matrix& density) {
        return single_expert_curriculum({density.data(), n}, config.eta);
    };

    double j_prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
        const Matrix density = log_density_matrix({&st.experts[0], 1}, data);
        const auto p = curriculum_of(density);
        double j_tilde = 0.0;  // E_p[log p_theta] + eta H(p), summed directly
        for (std::size_t i = 0; i < n; ++i)
            if (p[i] > 0.0) j_tilde += p[i] * (density(i, 0) - config.eta * std::log(p[i]));
        result.objective_history.push_back(j_tilde);

        double max = kNegInf;
        for (std::size_t i = 0; i < n; ++i) max = std::max(max, density(i, 0));
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = std::exp((density(i, 0) - max) / config.eta);
        if (st.experts[0].is_linear()) {
            st.experts[0].mean_model =
                fit_linear_weighted(data.observations, data.actions, w, config.ridge_lambda);
        } else {
            fit_neural_weighted(st.experts[0], data, w, config.expert_steps_per_m,
                                st.opt_states.at(0));
        }

        const double delta = std::isnan(j_prev) ? kInf : std::abs(j_tilde - j_prev);
        j_prev = j_tilde;
        if (stop_reached(delta, j_tilde, config.epsilon)) {
            result.converged = true;
            break;
        }
    }
    const Matrix density = log_density_matrix({&st.experts[0], 1}, data);
    result.curriculum = curriculum_of(density);
    result.expert = std::move(st.experts[0]);
    return result;
}

}  // namespace imc
