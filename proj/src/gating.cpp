#include "imc/gating.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "imc/errors.hpp"
#include "imc/logsum.hpp"

namespace imc {

namespace {
constexpr std::uint64_t kGatingStream = 3;
}

std::uint64_t curriculum_fingerprint(const LogCurriculum& lc) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* p, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    const std::uint64_t dims[2] = {lc.log_weights.rows(), lc.log_weights.cols()};
    mix_bytes(dims, sizeof(dims));
    mix_bytes(lc.log_weights.data(), lc.log_weights.size() * sizeof(double));
    return h;
}

GatingNet fit_gating(const LogCurriculum& lc, const Matrix& observations, const TrainConfig& cfg,
                     RngStream& rng, GatingFitReport* report, nn::OptimizerState* opt) {
    const std::size_t n = lc.log_weights.rows();
    const std::size_t k = lc.log_weights.cols();
    if (observations.rows() != n) throw InvalidInputError("fit_gating: row count mismatch");

    // Corollary-3 targets: exp(log weights), globally max-normalized. The
    // objective is invariant to the global constant; normalizing keeps the
    // learning rate independent of the curriculum's scale.
    double max = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lc.log_weights.size(); ++i)
        max = std::max(max, lc.log_weights.data()[i]);
    if (max == -std::numeric_limits<double>::infinity())
        throw InvalidInputError("fit_gating: curriculum has no mass anywhere");
    Matrix targets(n, k);
    for (std::size_t i = 0; i < targets.size(); ++i)
        targets.data()[i] = std::exp(lc.log_weights.data()[i] - max);

    std::vector<std::size_t> sizes;
    sizes.push_back(observations.cols());
    sizes.insert(sizes.end(), cfg.gating_hidden.begin(), cfg.gating_hidden.end());
    sizes.push_back(k);
    auto sub = rng.substream(kGatingStream);
    GatingNet g{nn::MlpParams::init(sizes, Activation::tanh, 1, sub), curriculum_fingerprint(lc)};

    nn::OptimizerState local = nn::OptimizerState::adam(cfg.gating_lr);
    nn::OptimizerState& state = opt != nullptr ? *opt : local;
    auto lg = nn::weighted_xent_loss_grad(g.net, observations, targets);
    if (report != nullptr) report->loss_before = lg.loss;
    for (std::size_t epoch = 0; epoch < cfg.gating_epochs; ++epoch) {
        if (!std::isfinite(lg.loss)) throw DivergenceError(epoch);
        nn::opt_step(g.net, lg.grads, state);
        lg = nn::weighted_xent_loss_grad(g.net, observations, targets);
    }
    if (!std::isfinite(lg.loss)) throw DivergenceError(cfg.gating_epochs);
    if (report != nullptr) report->loss_after = lg.loss;
    return g;
}

std::vector<double> gating_log_predict(const GatingNet& g, std::span<const double> o) {
    auto logits = nn::forward_row_all(g.net, o);
    const double lse = log_sum_exp(logits);
    for (double& v : logits) v -= lse;
    return logits;
}

std::vector<double> gating_predict(const GatingNet& g, std::span<const double> o) {
    auto lp = gating_log_predict(g, o);
    for (double& v : lp) v = std::exp(v);
    return lp;
}

double mixture_log_density(std::span<const GaussianExpert> experts, const GatingNet& g,
                           std::span<const double> o, std::span<const double> a) {
    const auto lp = gating_log_predict(g, o);
    if (lp.size() != experts.size())
        throw InvalidInputError("mixture_log_density: gating width != expert count");
    std::vector<double> terms(experts.size());
    for (std::size_t z = 0; z < experts.size(); ++z)
        terms[z] = lp[z] + log_density(experts[z], o, a);
    return log_sum_exp(terms);
}

MixtureSample sample(std::span<const GaussianExpert> experts, const GatingNet& g,
                     std::span<const double> o, RngStream& rng, bool deterministic) {
    const auto p = gating_predict(g, o);
    const double u = rng.uniform();
    std::size_t z = p.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            z = i;
            break;
        }
    }
    return {z, sample_action(experts[z], o, rng, deterministic)};
}

}  // namespace imc
