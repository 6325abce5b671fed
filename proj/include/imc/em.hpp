#pragma once

#include <optional>
#include <span>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/experts.hpp"
#include "imc/gating.hpp"
#include "imc/matrix.hpp"

namespace imc {

struct EmIterationRecord {
    std::size_t iteration = 0;
    double marginal_log_likelihood = 0.0;
};

/// Mixture of experts trained by expectation maximization. The gating is a
/// nonparametric per-sample table during training; a parametric gating net
/// is only distilled afterwards.
struct EmModel {
    std::vector<GaussianExpert> experts;
    Matrix gating_table;  // N x K, row-stochastic p(z|o_n)
    TrainConfig config;
    std::vector<EmIterationRecord> history;
    bool converged = false;
    std::optional<GatingNet> gating;  // distilled from the final q table
};

/// q(z|o_n) proportional to p(a_n|o_n,z) * p(z|o_n), log-domain.
Responsibilities em_e_step(std::span<const GaussianExpert> experts, const Matrix& gating_table,
                           const Dataset& data);

/// Experts refit with q-column weights (max-normalized, dead components
/// frozen); the gating table is set to q exactly. Returns the indices of
/// dead components; all dead throws TrainingCollapseError.
std::vector<std::size_t> em_m_step(std::vector<GaussianExpert>& experts, Matrix& gating_table,
                                   const Responsibilities& q, const Dataset& data,
                                   const TrainConfig& cfg,
                                   std::vector<nn::OptimizerState>& opt_states);

/// sum_n log sum_z p(z|o_n) p(a_n|o_n,z).
double em_marginal_log_likelihood(std::span<const GaussianExpert> experts,
                                  const Matrix& gating_table, const Dataset& data);

/// Alternates E and M from a uniform gating table until the marginal
/// log-likelihood change drops below epsilon or max_iters is reached.
EmModel em_train(const Dataset& data, const TrainConfig& config);

}  // namespace imc
