#pragma once

#include <optional>
#include <span>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/experts.hpp"
#include "imc/gating.hpp"
#include "imc/matrix.hpp"

namespace imc {

struct IterationRecord {
    std::size_t iteration = 0;
    double lower_bound = 0.0;
    double objective_j = 0.0;
    double kl_term = 0.0;
    std::size_t active_components = 0;
    std::vector<double> component_mass;  // p(z)
};

/// The trained state: experts, their log-curricula, config, per-iteration
/// history, and (after distillation) the gating network.
struct ImcModel {
    std::vector<GaussianExpert> experts;
    LogCurriculum log_curriculum;
    TrainConfig config;
    std::vector<IterationRecord> history;
    bool converged = false;
    std::optional<GatingNet> gating;
};

/// q(z|o_n,a_n) = normalized exp(log_weights) rows; tightens the bound.
/// Throws DegenerateRowError (sample index) on an all-(-inf) row.
Responsibilities e_step(const LogCurriculum& lc);

/// log p~(o_n,a_n|z) = log_density(n,z)/eta + log q(n,z); q = 0 maps to
/// -inf. Advances the iteration counter.
LogCurriculum m_step_curricula(const Matrix& log_density, const Responsibilities& q, double eta,
                               std::size_t iteration);

/// Convenience form computing the density matrix from the experts.
LogCurriculum m_step_curricula(std::span<const GaussianExpert> experts, const Dataset& data,
                               const Responsibilities& q, double eta, std::size_t iteration);

struct MStepReport {
    std::vector<std::size_t> dead_components;  // zero total curriculum mass, frozen
};

/// Weighted-MLE refit of every live expert with its curriculum column
/// (weights max-normalized per component). Dead components are frozen and
/// reported; all dead throws TrainingCollapseError.
MStepReport m_step_experts(std::vector<GaussianExpert>& experts, const Dataset& data,
                           const LogCurriculum& lc, const TrainConfig& cfg,
                           std::vector<nn::OptimizerState>& opt_states);

/// L = eta * log sum_{z,n} p~(o_n,a_n|z). Throws on an all-(-inf) matrix.
double lower_bound(const LogCurriculum& lc, double eta);

/// p*(z) = sum_n p~(n|z) / sum_{z,n} p~(n|z), in the log domain.
MixtureWeights mixture_weights(const LogCurriculum& lc);

struct ObjectiveParts {
    double j = 0.0;
    double l = 0.0;
    double kl_term = 0.0;
};

/// Term-by-term evaluation of the objective decomposition for the model
/// whose curricula are lc and whose expert log-densities are given:
/// J = L + eta * E_{p(o,a)} KL(p(z|o,a) || q). kl_term is exactly zero when
/// q comes from e_step(lc).
ObjectiveParts evaluate_objective(const Matrix& log_density, const LogCurriculum& lc,
                                  const Responsibilities& q, double eta);

ObjectiveParts evaluate_objective(const ImcModel& model, const Dataset& data,
                                  const Responsibilities& q);

/// Full-batch training loop: E-step, curriculum M-step, expert M-step,
/// stop on |dL| <= epsilon * max(1, |L|) or max_iters.
ImcModel train(const Dataset& data, const TrainConfig& config);

/// Mini-batch variant: per iteration a batch without replacement updates
/// its rows of the persistent curriculum and refits experts on the batch.
/// Stopping uses an exponentially smoothed L (factor 0.9).
ImcModel train_minibatch(const Dataset& data, const TrainConfig& config);

struct SingleExpertResult {
    GaussianExpert expert;
    std::vector<double> curriculum;         // normalized, length N
    std::vector<double> objective_history;  // per-iteration J~
    bool converged = false;
};

/// Closed-form single-expert curriculum: p*(n) proportional to
/// exp(log_density_n / eta), normalized over the samples.
std::vector<double> single_expert_curriculum(std::span<const double> log_densities, double eta);

/// The single-expert special case: closed-form curriculum
/// p*(n) proportional to p(a_n|o_n)^(1/eta), alternated with weighted MLE.
SingleExpertResult train_single_expert(const Dataset& data, const TrainConfig& config);

/// Seeded expert initialization shared by the trainers: linear experts get
/// small per-component noise (symmetry breaking), neural experts are
/// Glorot-initialized per component or as one shared multi-head net.
std::vector<GaussianExpert> init_experts(const Dataset& data, const TrainConfig& cfg);

}  // namespace imc
