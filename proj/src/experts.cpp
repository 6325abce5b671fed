#include "imc/experts.hpp"

#include <cmath>
#include <numbers>

#include "imc/errors.hpp"
#include "imc/parallel.hpp"

namespace imc {

namespace {

std::vector<double> linear_mean(const LinearMean& lm, std::span<const double> o) {
    std::vector<double> mu(lm.w.rows());
    for (std::size_t j = 0; j < lm.w.rows(); ++j) {
        const double* row = lm.w.row(j);
        double v = row[lm.w.cols() - 1];  // bias column
        for (std::size_t i = 0; i + 1 < lm.w.cols(); ++i) v += row[i] * o[i];
        mu[j] = v;
    }
    return mu;
}

double log_density_from_mean(std::span<const double> mu, std::span<const double> a,
                             double sigma_sq) {
    const double d = static_cast<double>(a.size());
    double sq = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double r = a[j] - mu[j];
        sq += r * r;
    }
    return -0.5 * d * std::log(2.0 * std::numbers::pi * sigma_sq) - sq / (2.0 * sigma_sq);
}

// Solve G x = b for positive semidefinite G in place. Zero pivots are
// skipped (the corresponding solution component is pinned to 0), which
// picks one least-squares solution when the normal matrix is singular;
// whether that solution is acceptable is checked afterwards against the
// objective's gradient.
void cholesky_solve_semidefinite(Matrix& g, Matrix& b) {
    const std::size_t n = g.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(g(i, i)));
    const double tol = 1e-12 * std::max(1.0, max_diag);
    std::vector<char> skip(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        double d = g(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= g(j, k) * g(j, k);
        if (!(d > tol)) {
            skip[j] = 1;
            for (std::size_t i = j; i < n; ++i) g(i, j) = 0.0;
            continue;
        }
        const double l = std::sqrt(d);
        g(j, j) = l;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = g(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= g(i, k) * g(j, k);
            g(i, j) = v / l;
        }
    }
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            if (skip[i]) {
                b(i, c) = 0.0;
                continue;
            }
            double v = b(i, c);
            for (std::size_t k = 0; k < i; ++k) v -= g(i, k) * b(k, c);
            b(i, c) = v / g(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            if (skip[i]) {
                b(i, c) = 0.0;
                continue;
            }
            double v = b(i, c);
            for (std::size_t k = i + 1; k < n; ++k) v -= g(k, i) * b(k, c);
            b(i, c) = v / g(i, i);
        }
    }
}

}  // namespace

std::vector<double> GaussianExpert::mean(std::span<const double> o) const {
    if (obs_dims > 0 && obs_dims < o.size()) o = o.first(obs_dims);
    if (const auto* lm = std::get_if<LinearMean>(&mean_model)) return linear_mean(*lm, o);
    const auto& nm = std::get<NeuralMean>(mean_model);
    const auto out = nn::forward_row_all(*nm.net, o);
    const std::size_t d = nm.net->head_dim();
    return std::vector<double>(out.begin() + nm.head * d, out.begin() + (nm.head + 1) * d);
}

std::size_t GaussianExpert::action_dim() const {
    if (const auto* lm = std::get_if<LinearMean>(&mean_model)) return lm->w.rows();
    return std::get<NeuralMean>(mean_model).net->head_dim();
}

double log_density(const GaussianExpert& e, std::span<const double> o, std::span<const double> a) {
    const auto mu = e.mean(o);
    if (mu.size() != a.size()) throw InvalidInputError("log_density: action width mismatch");
    return log_density_from_mean(mu, a, e.sigma_sq);
}

Matrix log_density_matrix(std::span<const GaussianExpert> experts, const Dataset& data) {
    const std::size_t n_rows = data.size();
    const std::size_t k = experts.size();
    Matrix out(n_rows, k);
    // Shared multi-head trunk: one forward pass serves every expert.
    const nn::MlpParams* shared = nullptr;
    std::size_t shared_slice = 0;
    if (!experts.empty() && !experts[0].is_linear()) {
        const auto& nm = std::get<NeuralMean>(experts[0].mean_model);
        if (nm.net->n_heads == k) {
            shared = nm.net.get();
            shared_slice = experts[0].obs_dims;
            for (const auto& e : experts)
                if (!e.is_linear() || true) {
                    if (e.is_linear() ||
                        std::get<NeuralMean>(e.mean_model).net.get() != shared ||
                        e.obs_dims != shared_slice)
                        shared = nullptr;
                }
        }
    }
    par::for_n(n_rows, [&](std::size_t n) {
        std::span<const double> o{data.observations.row(n), data.d_o()};
        const std::span<const double> a{data.actions.row(n), data.d_a()};
        if (shared) {
            auto so = o;
            if (shared_slice > 0 && shared_slice < so.size()) so = so.first(shared_slice);
            const auto y = nn::forward_row_all(*shared, so);
            const std::size_t d = shared->head_dim();
            for (std::size_t z = 0; z < k; ++z) {
                const std::size_t h = std::get<NeuralMean>(experts[z].mean_model).head;
                const std::span<const double> mu{y.data() + h * d, d};
                out(n, z) = log_density_from_mean(mu, a, experts[z].sigma_sq);
            }
        } else {
            for (std::size_t z = 0; z < k; ++z) {
                const auto mu = experts[z].mean(o);
                out(n, z) = log_density_from_mean(mu, a, experts[z].sigma_sq);
            }
        }
    });
    return out;
}

LinearMean fit_linear_weighted(const Matrix& observations, const Matrix& actions,
                               std::span<const double> weights, double ridge_lambda) {
    const std::size_t n_rows = observations.rows();
    const std::size_t d_in = observations.cols() + 1;  // augmented with 1
    const std::size_t d_out = actions.cols();
    if (actions.rows() != n_rows || weights.size() != n_rows)
        throw InvalidInputError("fit_linear_weighted: shape mismatch");
    double w_sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw InvalidInputError("fit_linear_weighted: weights must be finite and >= 0");
        w_sum += w;
    }
    if (!(w_sum > 0.0)) throw InvalidInputError("fit_linear_weighted: total weight is zero");

    // G = X^T diag(w) X + lambda I, B = X^T diag(w) A, accumulated over a
    // fixed chunk grid so results do not depend on the thread count.
    const std::size_t nc = par::chunk_count(n_rows);
    std::vector<Matrix> g_part(nc), b_part(nc);
    par::for_n(nc, [&](std::size_t c) {
        Matrix g(d_in, d_in), b(d_in, d_out);
        auto [lo, hi] = par::chunk_range(c, n_rows);
        std::vector<double> x(d_in);
        for (std::size_t n = lo; n < hi; ++n) {
            const double w = weights[n];
            if (w == 0.0) continue;
            for (std::size_t i = 0; i + 1 < d_in; ++i) x[i] = observations(n, i);
            x[d_in - 1] = 1.0;
            for (std::size_t i = 0; i < d_in; ++i) {
                const double wx = w * x[i];
                for (std::size_t j = 0; j < d_in; ++j) g(i, j) += wx * x[j];
                for (std::size_t j = 0; j < d_out; ++j) b(i, j) += wx * actions(n, j);
            }
        }
        g_part[c] = std::move(g);
        b_part[c] = std::move(b);
    });
    Matrix g(d_in, d_in), b(d_in, d_out);
    for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += g_part[c].data()[i];
        for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] += b_part[c].data()[i];
    }
    const Matrix g_saved = g;
    const Matrix b_saved = b;
    for (std::size_t i = 0; i < d_in; ++i) g(i, i) += ridge_lambda;

    cholesky_solve_semidefinite(g, b);
    LinearMean lm{Matrix(d_out, d_in)};
    for (std::size_t j = 0; j < d_out; ++j)
        for (std::size_t i = 0; i < d_in; ++i) lm.w(j, i) = b(i, j);

    // Gradient of the ridge objective at the returned W must vanish:
    // 2 (W G - B^T) + 2 lambda W, with G and B the data-only accumulators.
    // A singular system the skip-pivot solve could not resolve shows up
    // here; with lambda = 0 that is the rank-deficiency case.
    double grad_norm_sq = 0.0;
    for (std::size_t j = 0; j < d_out; ++j)
        for (std::size_t i = 0; i < d_in; ++i) {
            double v = ridge_lambda * lm.w(j, i);
            for (std::size_t t = 0; t < d_in; ++t) v += lm.w(j, t) * g_saved(t, i);
            v = 2.0 * (v - b_saved(i, j));
            grad_norm_sq += v * v;
        }
    if (std::sqrt(grad_norm_sq) >= 1e-8 * (1.0 + w_sum)) {
        if (ridge_lambda == 0.0) throw RankDeficiencyError();
        throw InvalidInputError("fit_linear_weighted: normal equations solve failed");
    }
    return lm;
}

namespace {

Matrix slice_cols(const Matrix& m, std::size_t cols) {
    if (cols == 0 || cols >= m.cols()) return m;
    Matrix out(m.rows(), cols);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) out(r, c) = m(r, c);
    return out;
}

}  // namespace

FitReport fit_neural_weighted(GaussianExpert& e, const Dataset& data,
                              std::span<const double> weights, std::size_t steps,
                              nn::OptimizerState& opt) {
    auto* nm = std::get_if<NeuralMean>(&e.mean_model);
    if (nm == nullptr) throw InvalidInputError("fit_neural_weighted: expert is not neural");
    nn::MlpParams& net = *nm->net;
    const std::optional<std::size_t> head =
        net.n_heads > 1 ? std::optional<std::size_t>(nm->head) : std::nullopt;
    const Matrix inputs = slice_cols(data.observations, e.obs_dims);

    FitReport report;
    auto lg = nn::weighted_sq_loss_grad(net, inputs, data.actions, weights, head);
    report.loss_before = lg.loss;
    report.loss_after = lg.loss;
    for (std::size_t s = 0; s < steps; ++s) {
        if (!std::isfinite(lg.loss)) throw DivergenceError(s);
        nn::opt_step(net, lg.grads, opt);
        lg = nn::weighted_sq_loss_grad(net, inputs, data.actions, weights, head);
        report.loss_after = lg.loss;
        ++report.steps;
    }
    if (!std::isfinite(report.loss_after)) throw DivergenceError(steps);
    return report;
}

FitReport fit_neural_weighted_joint(nn::MlpParams& net, const Dataset& data,
                                    const Matrix& head_weights, std::size_t steps,
                                    nn::OptimizerState& opt) {
    const Matrix inputs = slice_cols(data.observations, net.input_dim());
    FitReport report;
    auto lg = nn::weighted_sq_loss_grad_joint(net, inputs, data.actions, head_weights);
    report.loss_before = lg.loss;
    report.loss_after = lg.loss;
    for (std::size_t s = 0; s < steps; ++s) {
        if (!std::isfinite(lg.loss)) throw DivergenceError(s);
        nn::opt_step(net, lg.grads, opt);
        lg = nn::weighted_sq_loss_grad_joint(net, inputs, data.actions, head_weights);
        report.loss_after = lg.loss;
        ++report.steps;
    }
    if (!std::isfinite(report.loss_after)) throw DivergenceError(steps);
    return report;
}

std::vector<double> sample_action(const GaussianExpert& e, std::span<const double> o,
                                  RngStream& rng, bool deterministic) {
    auto mu = e.mean(o);
    if (deterministic) return mu;
    const double sd = std::sqrt(e.sigma_sq);
    for (double& v : mu) v += sd * rng.normal();
    return mu;
}

namespace ref {

Matrix log_density_matrix(std::span<const GaussianExpert> experts, const Dataset& data) {
    Matrix out(data.size(), experts.size());
    for (std::size_t n = 0; n < data.size(); ++n) {
        const std::span<const double> o{data.observations.row(n), data.d_o()};
        const std::span<const double> a{data.actions.row(n), data.d_a()};
        for (std::size_t z = 0; z < experts.size(); ++z)
            out(n, z) = imc::log_density(experts[z], o, a);
    }
    return out;
}

}  // namespace ref

}  // namespace imc
