#pragma once

#include <optional>
#include <span>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/matrix.hpp"
#include "imc/rng.hpp"

namespace imc::nn {

/// Weight/bias tensors shaped like an MLP's parameters; used for gradients
/// and optimizer moments.
struct Tensors {
    std::vector<Matrix> w;                 // per layer, out x in
    std::vector<std::vector<double>> b;    // per layer
};

/// Plain feed-forward net: identity output, tanh or relu hidden layers.
/// n_heads > 1 stacks per-component output blocks of equal width on the
/// final layer (one shared trunk, K heads).
struct MlpParams {
    std::vector<std::size_t> layer_sizes;  // input, hidden..., output
    std::vector<Matrix> weights;           // layer l: layer_sizes[l+1] x layer_sizes[l]
    std::vector<std::vector<double>> biases;
    Activation activation = Activation::tanh;
    std::size_t n_heads = 1;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t head_dim() const { return output_dim() / n_heads; }
    std::size_t n_layers() const { return weights.size(); }

    /// Glorot-uniform init, deterministic under the given stream.
    static MlpParams init(const std::vector<std::size_t>& layer_sizes, Activation act,
                          std::size_t n_heads, RngStream& rng);

    Tensors zeros_like() const;
    void check_consistent() const;  // throws InvalidInputError
};

/// Batch forward pass. head selects one output block and is required iff
/// n_heads > 1.
Matrix forward(const MlpParams& p, const Matrix& inputs,
               std::optional<std::size_t> head = std::nullopt);

/// Final-layer outputs (all heads, full width) for a single input row.
std::vector<double> forward_row_all(const MlpParams& p, std::span<const double> x);

struct LossGrad {
    double loss = 0.0;
    Tensors grads;
};

/// loss = sum_n w_n * |mu(o_n) - a_n|^2, with exact analytic gradients.
/// Zero-weight rows contribute nothing. Negative weights are an error.
LossGrad weighted_sq_loss_grad(const MlpParams& p, const Matrix& inputs, const Matrix& targets,
                               std::span<const double> sample_weights,
                               std::optional<std::size_t> head = std::nullopt);

/// Joint multi-head squared error: sum_k sum_n w(n,k) * |head_k(o_n) - a_n|^2.
/// One shared trunk fit for all components in a single pass.
LossGrad weighted_sq_loss_grad_joint(const MlpParams& p, const Matrix& inputs,
                                     const Matrix& targets, const Matrix& head_weights);

/// loss = -sum_n sum_k t(n,k) * log softmax_k(f(o_n)). Target weights need
/// not be normalized; all-zero rows contribute nothing.
LossGrad weighted_xent_loss_grad(const MlpParams& p, const Matrix& inputs,
                                 const Matrix& target_weights);

/// Adaptive-moment optimizer; beta1 = beta2 = 0 selects plain SGD steps
/// (params -= lr * grad, no moment machinery).
struct OptimizerState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_opt = 1e-8;
    std::size_t step_count = 0;
    Tensors m, v;
    bool initialized = false;

    static OptimizerState adam(double lr) {
        OptimizerState s;
        s.lr = lr;
        return s;
    }
    static OptimizerState sgd(double lr) {
        OptimizerState s;
        s.lr = lr;
        s.beta1 = 0.0;
        s.beta2 = 0.0;
        return s;
    }
    bool is_sgd() const { return beta1 == 0.0 && beta2 == 0.0; }
};

/// One optimizer step in place. Shapes must match; step_count increments.
void opt_step(MlpParams& p, const Tensors& grads, OptimizerState& state);

namespace ref {
// Serial layer-by-layer re-evaluation, the oracle for the parallel kernels.
Matrix forward(const MlpParams& p, const Matrix& inputs,
               std::optional<std::size_t> head = std::nullopt);
double weighted_sq_loss(const MlpParams& p, const Matrix& inputs, const Matrix& targets,
                        std::span<const double> sample_weights,
                        std::optional<std::size_t> head = std::nullopt);
double weighted_sq_loss_joint(const MlpParams& p, const Matrix& inputs, const Matrix& targets,
                              const Matrix& head_weights);
double weighted_xent_loss(const MlpParams& p, const Matrix& inputs, const Matrix& target_weights);
}  // namespace ref

}  // namespace imc::nn
