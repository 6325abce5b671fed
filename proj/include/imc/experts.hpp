#pragma once

#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/matrix.hpp"
#include "imc/nn.hpp"
#include "imc/rng.hpp"

namespace imc {

/// Linear mean with bias: mu(o) = W [o; 1].
struct LinearMean {
    Matrix w;  // d_a x (d_o + 1)
};

/// Neural mean; the net may be shared between experts (multi-head), in
/// which case head selects this expert's output block.
struct NeuralMean {
    std::shared_ptr<nn::MlpParams> net;
    std::size_t head = 0;
};

/// Conditional Gaussian N(a | mu(o), sigma_sq * I). The variance is fixed;
/// fitting only ever touches the mean. obs_dims > 0 restricts the mean to
/// the leading observation features (the gating may still see the rest).
struct GaussianExpert {
    std::variant<LinearMean, NeuralMean> mean_model;
    double sigma_sq = 1.0;
    std::size_t obs_dims = 0;  // 0 = use the full observation

    bool is_linear() const { return std::holds_alternative<LinearMean>(mean_model); }
    std::vector<double> mean(std::span<const double> o) const;
    std::size_t action_dim() const;
};

double log_density(const GaussianExpert& e, std::span<const double> o, std::span<const double> a);

/// N x K matrix of log p(a_n | o_n, z); the shared inner kernel of the
/// E-step, curriculum M-step and likelihood evaluations. Multi-head experts
/// share one trunk pass per row.
Matrix log_density_matrix(std::span<const GaussianExpert> experts, const Dataset& data);

/// argmin_W sum_n w_n |W [o_n;1] - a_n|^2 + lambda |W|_F^2 via normal
/// equations. Throws RankDeficiencyError when lambda == 0 and the normal
/// matrix is singular.
LinearMean fit_linear_weighted(const Matrix& observations, const Matrix& actions,
                               std::span<const double> weights, double ridge_lambda);

struct FitReport {
    double loss_before = 0.0;
    double loss_after = 0.0;
    std::size_t steps = 0;
};

/// `steps` optimizer steps on the weighted squared error for this expert's
/// head. Weights are consumed as given. Throws DivergenceError if the loss
/// goes non-finite.
FitReport fit_neural_weighted(GaussianExpert& e, const Dataset& data,
                              std::span<const double> weights, std::size_t steps,
                              nn::OptimizerState& opt);

/// Joint fit of a shared multi-head net: one weighted squared error over
/// all heads, weight column per head.
FitReport fit_neural_weighted_joint(nn::MlpParams& net, const Dataset& data,
                                    const Matrix& head_weights, std::size_t steps,
                                    nn::OptimizerState& opt);

/// mu(o) + sqrt(sigma_sq) * eps. deterministic skips the noise (the
/// sigma_sq -> 0 limit).
std::vector<double> sample_action(const GaussianExpert& e, std::span<const double> o,
                                  RngStream& rng, bool deterministic = false);

namespace ref {
Matrix log_density_matrix(std::span<const GaussianExpert> experts, const Dataset& data);
}

}  // namespace imc
