#include "imc/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imc/errors.hpp"
#include "imc/imc.hpp"
#include "imc/logsum.hpp"
#include "imc/parallel.hpp"

namespace imc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

Responsibilities em_e_step(std::span<const GaussianExpert> experts, const Matrix& gating_table,
                           const Dataset& data) {
    const Matrix density = log_density_matrix(experts, data);
    if (gating_table.rows() != density.rows() || gating_table.cols() != density.cols())
        throw InvalidInputError("em_e_step: gating table shape mismatch");
    Matrix joint(density.rows(), density.cols());
    par::for_n(density.rows(), [&](std::size_t n) {
        for (std::size_t z = 0; z < density.cols(); ++z) {
            const double g = gating_table(n, z);
            joint(n, z) = g > 0.0 ? density(n, z) + std::log(g) : kNegInf;
        }
    });
    auto rn = row_log_normalize(joint);
    Responsibilities r;
    r.q = Matrix(joint.rows(), joint.cols());
    par::for_n(joint.rows(), [&](std::size_t n) {
        for (std::size_t z = 0; z < joint.cols(); ++z)
            r.q(n, z) = std::exp(rn.normalized(n, z));
    });
    r.log_q = std::move(rn.normalized);
    return r;
}

std::vector<std::size_t> em_m_step(std::vector<GaussianExpert>& experts, Matrix& gating_table,
                                   const Responsibilities& q, const Dataset& data,
                                   const TrainConfig& cfg,
                                   std::vector<nn::OptimizerState>& opt_states) {
    // The q table plays the role of the curriculum weights here; reuse the
    // shared M-step with log q as the weight matrix.
    LogCurriculum as_weights{Matrix(q.q.rows(), q.q.cols()), 0};
    par::for_n(q.q.rows(), [&](std::size_t n) {
        for (std::size_t z = 0; z < q.q.cols(); ++z)
            as_weights.log_weights(n, z) =
                q.log_q.has_value() ? (*q.log_q)(n, z)
                : q.q(n, z) > 0.0   ? std::log(q.q(n, z))
                                    : kNegInf;
    });
    auto report = m_step_experts(experts, data, as_weights, cfg, opt_states);
    gating_table = q.q;
    return std::move(report.dead_components);
}

double em_marginal_log_likelihood(std::span<const GaussianExpert> experts,
                                  const Matrix& gating_table, const Dataset& data) {
    const Matrix density = log_density_matrix(experts, data);
    std::vector<double> row_ll(density.rows());
    par::for_n(density.rows(), [&](std::size_t n) {
        std::vector<double> terms(density.cols());
        for (std::size_t z = 0; z < density.cols(); ++z) {
            const double g = gating_table(n, z);
            terms[z] = g > 0.0 ? density(n, z) + std::log(g) : kNegInf;
        }
        row_ll[n] = log_sum_exp(terms);
    });
    double total = 0.0;
    for (double v : row_ll) total += v;
    return total;
}

EmModel em_train(const Dataset& data, const TrainConfig& config) {
    data.validate();
    config.validate();
    const std::size_t n = data.size();
    const std::size_t k = config.n_components;

    EmModel model;
    model.config = config;
    model.experts = init_experts(data, config);
    model.gating_table = Matrix(n, k, 1.0 / static_cast<double>(k));
    std::vector<nn::OptimizerState> opt_states;
    if (config.arch.kind == ExpertKind::neural)
        opt_states.assign(config.arch.multi_head ? 1 : k,
                          nn::OptimizerState::adam(config.expert_lr));

    double ll_prev = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
        const double ll = em_marginal_log_likelihood(model.experts, model.gating_table, data);
        model.history.push_back({iter, ll});
        Responsibilities q;
        try {
            q = em_e_step(model.experts, model.gating_table, data);
        } catch (const DegenerateRowError& e) {
            throw DegenerateRowError(e.row, iter);
        }
        em_m_step(model.experts, model.gating_table, q, data, config, opt_states);
        const double delta = std::isnan(ll_prev) ? kInf : std::abs(ll - ll_prev);
        ll_prev = ll;
        if (delta <= config.epsilon * std::max(1.0, std::abs(ll))) {
            model.converged = true;
            break;
        }
    }
    return model;
}

}  // namespace imc
