#include "imc/nn.hpp"

#include <cmath>

#include "imc/errors.hpp"
#include "imc/parallel.hpp"

namespace imc::nn {

namespace {

double act_apply(Activation a, double z) {
    return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through the activation value.
double act_deriv(Activation a, double out) {
    return a == Activation::tanh ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

// Forward one row, keeping every layer's output (acts[0] is the input).
void forward_row(const MlpParams& p, const double* x, std::vector<std::vector<double>>& acts) {
    acts.resize(p.n_layers() + 1);
    acts[0].assign(x, x + p.input_dim());
    for (std::size_t l = 0; l < p.n_layers(); ++l) {
        const Matrix& w = p.weights[l];
        const auto& prev = acts[l];
        auto& out = acts[l + 1];
        out.assign(w.rows(), 0.0);
        for (std::size_t j = 0; j < w.rows(); ++j) {
            double z = p.biases[l][j];
            const double* wrow = w.row(j);
            for (std::size_t i = 0; i < w.cols(); ++i) z += wrow[i] * prev[i];
            out[j] = l + 1 < p.n_layers() ? act_apply(p.activation, z) : z;
        }
    }
}

// Backpropagate delta (gradient w.r.t. the final linear output) into g.
void backward_row(const MlpParams& p, const std::vector<std::vector<double>>& acts,
                  std::vector<double>& delta, Tensors& g) {
    std::vector<double> prev_delta;
    for (std::size_t l = p.n_layers(); l-- > 0;) {
        const Matrix& w = p.weights[l];
        const auto& in = acts[l];
        Matrix& gw = g.w[l];
        auto& gb = g.b[l];
        for (std::size_t j = 0; j < w.rows(); ++j) {
            const double d = delta[j];
            if (d == 0.0) continue;
            gb[j] += d;
            double* grow = gw.row(j);
            for (std::size_t i = 0; i < w.cols(); ++i) grow[i] += d * in[i];
        }
        if (l == 0) break;
        prev_delta.assign(w.cols(), 0.0);
        for (std::size_t j = 0; j < w.rows(); ++j) {
            const double d = delta[j];
            if (d == 0.0) continue;
            const double* wrow = w.row(j);
            for (std::size_t i = 0; i < w.cols(); ++i) prev_delta[i] += d * wrow[i];
        }
        for (std::size_t i = 0; i < w.cols(); ++i)
            prev_delta[i] *= act_deriv(p.activation, acts[l][i]);
        delta = prev_delta;
    }
}

void add_tensors(Tensors& into, const Tensors& from) {
    for (std::size_t l = 0; l < into.w.size(); ++l) {
        for (std::size_t i = 0; i < into.w[l].size(); ++i)
            into.w[l].data()[i] += from.w[l].data()[i];
        for (std::size_t i = 0; i < into.b[l].size(); ++i) into.b[l][i] += from.b[l][i];
    }
}

std::size_t check_head(const MlpParams& p, std::optional<std::size_t> head) {
    if (p.n_heads > 1) {
        if (!head) throw InvalidInputError("head index required for a multi-head net");
        if (*head >= p.n_heads) throw InvalidInputError("head index out of range");
        return *head;
    }
    if (head && *head != 0) throw InvalidInputError("head index given for a single-head net");
    return 0;
}

// Shared driver: rows are processed in fixed chunks, each chunk accumulates
// its own partial loss and gradient tensors, and chunks are combined in
// order. Results are therefore independent of the thread count.
template <class RowFn>
LossGrad reduce_rows(const MlpParams& p, std::size_t n_rows, RowFn&& row_fn) {
    const std::size_t nc = par::chunk_count(n_rows);
    std::vector<double> partial_loss(nc, 0.0);
    std::vector<Tensors> partial_grads(nc);
    par::for_n(nc, [&](std::size_t c) {
        Tensors g = p.zeros_like();
        double loss = 0.0;
        std::vector<std::vector<double>> acts;
        std::vector<double> delta;
        auto [b, e] = par::chunk_range(c, n_rows);
        for (std::size_t n = b; n < e; ++n) loss += row_fn(n, acts, delta, g);
        partial_loss[c] = loss;
        partial_grads[c] = std::move(g);
    });
    LossGrad out{0.0, p.zeros_like()};
    for (std::size_t c = 0; c < nc; ++c) {
        out.loss += partial_loss[c];
        add_tensors(out.grads, partial_grads[c]);
    }
    return out;
}

}  // namespace

MlpParams MlpParams::init(const std::vector<std::size_t>& layer_sizes, Activation act,
                          std::size_t n_heads, RngStream& rng) {
    if (layer_sizes.size() < 2) throw InvalidInputError("mlp: need at least input and output");
    MlpParams p;
    p.layer_sizes = layer_sizes;
    p.activation = act;
    p.n_heads = n_heads == 0 ? 1 : n_heads;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const std::size_t fan_in = layer_sizes[l];
        const std::size_t fan_out = layer_sizes[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_out, fan_in);
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(fan_out, 0.0);
    }
    p.check_consistent();
    return p;
}

Tensors MlpParams::zeros_like() const {
    Tensors t;
    for (std::size_t l = 0; l < n_layers(); ++l) {
        t.w.emplace_back(weights[l].rows(), weights[l].cols());
        t.b.emplace_back(biases[l].size(), 0.0);
    }
    return t;
}

void MlpParams::check_consistent() const {
    if (weights.size() + 1 != layer_sizes.size() || biases.size() != weights.size())
        throw InvalidInputError("mlp: layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
            biases[l].size() != layer_sizes[l + 1])
            throw InvalidInputError("mlp: inconsistent layer dimensions");
        for (std::size_t i = 0; i < weights[l].size(); ++i)
            if (!std::isfinite(weights[l].data()[i]))
                throw InvalidInputError("mlp: non-finite weight");
        for (double b : biases[l])
            if (!std::isfinite(b)) throw InvalidInputError("mlp: non-finite bias");
    }
    if (output_dim() % n_heads != 0)
        throw InvalidInputError("mlp: output width not divisible by n_heads");
}

Matrix forward(const MlpParams& p, const Matrix& inputs, std::optional<std::size_t> head) {
    if (inputs.cols() != p.input_dim()) throw InvalidInputError("forward: input width mismatch");
    const std::size_t h = check_head(p, head);
    const std::size_t d = p.n_heads > 1 ? p.head_dim() : p.output_dim();
    const std::size_t offset = h * p.head_dim();
    Matrix out(inputs.rows(), d);
    par::for_n(inputs.rows(), [&](std::size_t n) {
        std::vector<std::vector<double>> acts;
        forward_row(p, inputs.row(n), acts);
        const auto& y = acts.back();
        for (std::size_t j = 0; j < d; ++j) out(n, j) = y[offset + j];
    });
    return out;
}

std::vector<double> forward_row_all(const MlpParams& p, std::span<const double> x) {
    if (x.size() != p.input_dim()) throw InvalidInputError("forward: input width mismatch");
    std::vector<std::vector<double>> acts;
    forward_row(p, x.data(), acts);
    return acts.back();
}

LossGrad weighted_sq_loss_grad(const MlpParams& p, const Matrix& inputs, const Matrix& targets,
                               std::span<const double> sample_weights,
                               std::optional<std::size_t> head) {
    const std::size_t h = check_head(p, head);
    const std::size_t d = p.head_dim();
    if (inputs.cols() != p.input_dim() || targets.cols() != d ||
        targets.rows() != inputs.rows() || sample_weights.size() != inputs.rows())
        throw InvalidInputError("weighted_sq_loss_grad: shape mismatch");
    for (double w : sample_weights)
        if (!(w >= 0.0) || !std::isfinite(w))
            throw InvalidInputError("weighted_sq_loss_grad: weights must be finite and >= 0");
    const std::size_t offset = h * d;
    return reduce_rows(p, inputs.rows(),
                       [&](std::size_t n, std::vector<std::vector<double>>& acts,
                           std::vector<double>& delta, Tensors& g) {
                           const double w = sample_weights[n];
                           if (w == 0.0) return 0.0;
                           forward_row(p, inputs.row(n), acts);
                           const auto& y = acts.back();
                           delta.assign(p.output_dim(), 0.0);
                           double loss = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                               const double r = y[offset + j] - targets(n, j);
                               loss += w * r * r;
                               delta[offset + j] = 2.0 * w * r;
                           }
                           backward_row(p, acts, delta, g);
                           return loss;
                       });
}

LossGrad weighted_sq_loss_grad_joint(const MlpParams& p, const Matrix& inputs,
                                     const Matrix& targets, const Matrix& head_weights) {
    const std::size_t d = p.head_dim();
    if (inputs.cols() != p.input_dim() || targets.cols() != d ||
        targets.rows() != inputs.rows() || head_weights.rows() != inputs.rows() ||
        head_weights.cols() != p.n_heads)
        throw InvalidInputError("weighted_sq_loss_grad_joint: shape mismatch");
    for (std::size_t i = 0; i < head_weights.size(); ++i)
        if (!(head_weights.data()[i] >= 0.0) || !std::isfinite(head_weights.data()[i]))
            throw InvalidInputError("weighted_sq_loss_grad_joint: weights must be finite and >= 0");
    return reduce_rows(p, inputs.rows(),
                       [&](std::size_t n, std::vector<std::vector<double>>& acts,
                           std::vector<double>& delta, Tensors& g) {
                           bool any = false;
                           for (std::size_t k = 0; k < p.n_heads; ++k)
                               if (head_weights(n, k) > 0.0) any = true;
                           if (!any) return 0.0;
                           forward_row(p, inputs.row(n), acts);
                           const auto& y = acts.back();
                           delta.assign(p.output_dim(), 0.0);
                           double loss = 0.0;
                           for (std::size_t k = 0; k < p.n_heads; ++k) {
                               const double w = head_weights(n, k);
                               if (w == 0.0) continue;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const double r = y[k * d + j] - targets(n, j);
                                   loss += w * r * r;
                                   delta[k * d + j] = 2.0 * w * r;
                               }
                           }
                           backward_row(p, acts, delta, g);
                           return loss;
                       });
}

LossGrad weighted_xent_loss_grad(const MlpParams& p, const Matrix& inputs,
                                 const Matrix& target_weights) {
    const std::size_t k_out = p.output_dim();
    if (inputs.cols() != p.input_dim() || target_weights.rows() != inputs.rows() ||
        target_weights.cols() != k_out)
        throw InvalidInputError("weighted_xent_loss_grad: shape mismatch");
    for (std::size_t i = 0; i < target_weights.size(); ++i)
        if (!(target_weights.data()[i] >= 0.0) || !std::isfinite(target_weights.data()[i]))
            throw InvalidInputError("weighted_xent_loss_grad: targets must be finite and >= 0");
    return reduce_rows(
        p, inputs.rows(),
        [&](std::size_t n, std::vector<std::vector<double>>& acts, std::vector<double>& delta,
            Tensors& g) {
            double t_sum = 0.0;
            for (std::size_t k = 0; k < k_out; ++k) t_sum += target_weights(n, k);
            if (t_sum == 0.0) return 0.0;
            forward_row(p, inputs.row(n), acts);
            const auto& y = acts.back();
            double max = y[0];
            for (std::size_t k = 1; k < k_out; ++k) max = std::max(max, y[k]);
            double z = 0.0;
            for (std::size_t k = 0; k < k_out; ++k) z += std::exp(y[k] - max);
            const double lse = max + std::log(z);
            double loss = 0.0;
            delta.assign(k_out, 0.0);
            for (std::size_t k = 0; k < k_out; ++k) {
                const double t = target_weights(n, k);
                if (t > 0.0) loss += t * (lse - y[k]);
                delta[k] = t_sum * std::exp(y[k] - lse) - t;
            }
            backward_row(p, acts, delta, g);
            return loss;
        });
}

void opt_step(MlpParams& p, const Tensors& grads, OptimizerState& state) {
    if (grads.w.size() != p.n_layers())
        throw InvalidInputError("opt_step: gradient shape mismatch");
    for (std::size_t l = 0; l < p.n_layers(); ++l)
        if (grads.w[l].rows() != p.weights[l].rows() || grads.w[l].cols() != p.weights[l].cols() ||
            grads.b[l].size() != p.biases[l].size())
            throw InvalidInputError("opt_step: gradient shape mismatch");

    ++state.step_count;
    if (state.is_sgd()) {
        for (std::size_t l = 0; l < p.n_layers(); ++l) {
            for (std::size_t i = 0; i < p.weights[l].size(); ++i)
                p.weights[l].data()[i] -= state.lr * grads.w[l].data()[i];
            for (std::size_t i = 0; i < p.biases[l].size(); ++i)
                p.biases[l][i] -= state.lr * grads.b[l][i];
        }
        return;
    }

    if (!state.initialized) {
        state.m = p.zeros_like();
        state.v = p.zeros_like();
        state.initialized = true;
    }
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    auto update = [&](double& param, double& m, double& v, double g) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        param -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps_opt);
    };
    for (std::size_t l = 0; l < p.n_layers(); ++l) {
        for (std::size_t i = 0; i < p.weights[l].size(); ++i)
            update(p.weights[l].data()[i], state.m.w[l].data()[i], state.v.w[l].data()[i],
                   grads.w[l].data()[i]);
        for (std::size_t i = 0; i < p.biases[l].size(); ++i)
            update(p.biases[l][i], state.m.b[l][i], state.v.b[l][i], grads.b[l][i]);
    }
}

namespace ref {

Matrix forward(const MlpParams& p, const Matrix& inputs, std::optional<std::size_t> head) {
    const std::size_t h = check_head(p, head);
    const std::size_t d = p.n_heads > 1 ? p.head_dim() : p.output_dim();
    const std::size_t offset = h * p.head_dim();
    Matrix out(inputs.rows(), d);
    std::vector<std::vector<double>> acts;
    for (std::size_t n = 0; n < inputs.rows(); ++n) {
        forward_row(p, inputs.row(n), acts);
        for (std::size_t j = 0; j < d; ++j) out(n, j) = acts.back()[offset + j];
    }
    return out;
}

double weighted_sq_loss(const MlpParams& p, const Matrix& inputs, const Matrix& targets,
                        std::span<const double> sample_weights, std::optional<std::size_t> head) {
    const Matrix y = ref::forward(p, inputs, head);
    double loss = 0.0;
    for (std::size_t n = 0; n < inputs.rows(); ++n)
        for (std::size_t j = 0; j < targets.cols(); ++j) {
            const double r = y(n, j) - targets(n, j);
            loss += sample_weights[n] * r * r;
        }
    return loss;
}

double weighted_sq_loss_joint(const MlpParams& p, const Matrix& inputs, const Matrix& targets,
                              const Matrix& head_weights) {
    double loss = 0.0;
    for (std::size_t k = 0; k < p.n_heads; ++k) {
        const Matrix y = ref::forward(p, inputs, k);
        for (std::size_t n = 0; n < inputs.rows(); ++n)
            for (std::size_t j = 0; j < targets.cols(); ++j) {
                const double r = y(n, j) - targets(n, j);
                loss += head_weights(n, k) * r * r;
            }
    }
    return loss;
}

double weighted_xent_loss(const MlpParams& p, const Matrix& inputs, const Matrix& target_weights) {
    const Matrix y = ref::forward(p, inputs);
    double loss = 0.0;
    for (std::size_t n = 0; n < inputs.rows(); ++n) {
        double max = y(n, 0);
        for (std::size_t k = 1; k < y.cols(); ++k) max = std::max(max, y(n, k));
        double z = 0.0;
        for (std::size_t k = 0; k < y.cols(); ++k) z += std::exp(y(n, k) - max);
        const double lse = max + std::log(z);
        for (std::size_t k = 0; k < y.cols(); ++k)
            if (target_weights(n, k) > 0.0) loss += target_weights(n, k) * (lse - y(n, k));
    }
    return loss;
}

}  // namespace ref

}  // namespace imc::nn
