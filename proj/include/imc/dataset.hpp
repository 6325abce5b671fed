#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "imc/matrix.hpp"

namespace imc {

/// Paired observation/action records, optionally tagged with a behavior id
/// and a start-group id for conditional-entropy evaluation.
struct Dataset {
    Matrix observations;              // N x d_o
    Matrix actions;                   // N x d_a
    std::vector<int> behavior_labels; // empty, or length N; -1 = unlabeled
    std::vector<int> start_ids;       // empty, or length N
    int n_behaviors = 0;              // declared behavior count B (0 = undeclared)

    std::size_t size() const { return observations.rows(); }
    std::size_t d_o() const { return observations.cols(); }
    std::size_t d_a() const { return actions.cols(); }

    /// Throws InvalidInputError if any invariant is violated: empty data,
    /// non-finite entries, row-count mismatch, or a label >= n_behaviors.
    void validate() const;

    /// Row subset, order preserved.
    Dataset select(const std::vector<std::size_t>& rows) const;
};

enum class ExpertKind { linear, neural };
enum class Activation { tanh, relu };

/// How expert means are parameterized. Linear experts solve the weighted
/// fit in closed form; neural experts take gradient steps. multi_head shares
/// one trunk across all components.
struct ExpertArch {
    ExpertKind kind = ExpertKind::linear;
    std::vector<std::size_t> hidden;  // hidden layer widths (neural only)
    bool multi_head = false;
    Activation activation = Activation::tanh;
    std::size_t obs_dims = 0;  // experts see only the leading observation
                               // features when > 0; the gating sees all
};

constexpr std::size_t kFullBatch = 0;

struct TrainConfig {
    double eta = 1.0;                   // curriculum pacing
    std::size_t n_components = 50;
    double sigma_sq = 1.0;              // fixed expert variance
    double expert_lr = 1e-2;
    std::size_t expert_steps_per_m = 20;
    double gating_lr = 1e-3;
    std::size_t gating_epochs = 200;
    std::vector<std::size_t> gating_hidden = {32};
    std::size_t max_iters = 100;
    double epsilon = 1e-6;              // |dL| threshold, scaled by max(1, |L|)
    std::size_t batch_size = kFullBatch;
    double ridge_lambda = 1e-8;
    std::int64_t seed = 0;
    ExpertArch arch;

    void validate() const;  // throws InvalidInputError
};

/// Per-sample, per-component unnormalized curriculum weights, log domain.
/// -inf entries mean weight exactly zero; NaN is never stored.
struct LogCurriculum {
    Matrix log_weights;  // N x K
    std::size_t iteration = 0;

    /// All-zero log-weights: every curriculum weight starts at 1.
    static LogCurriculum initial(std::size_t n, std::size_t k) {
        return LogCurriculum{Matrix(n, k, 0.0), 0};
    }
};

/// Row-stochastic posterior over components. e_step also fills log_q so
/// downstream log-domain arithmetic reuses the exact normalized values
/// instead of re-taking logs.
struct Responsibilities {
    Matrix q;  // N x K
    std::optional<Matrix> log_q;

    /// Throws InvalidInputError unless every entry is in [0,1] and every
    /// row sums to 1 within 1e-9.
    void validate() const;
};

struct MixtureWeights {
    std::vector<double> p_z;

    void validate() const;  // simplex within 1e-9
};

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

/// CSV with header o_0,..,o_{d_o-1},a_0,..,a_{d_a-1}[,behavior][,start_id].
void save_dataset(const std::filesystem::path& path, const Dataset& ds);

/// Parses the header to recover the column layout. expected_behaviors > 0
/// declares B and makes labels >= B an error; otherwise B is inferred.
Dataset load_dataset(const std::filesystem::path& path, int expected_behaviors = 0);

}  // namespace imc
