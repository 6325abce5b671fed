#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/experts.hpp"
#include "imc/nn.hpp"

namespace imc {

/// Parametric inference network g(z|o): softmax over K outputs. trained_on
/// fingerprints the curriculum it was distilled from.
struct GatingNet {
    nn::MlpParams net;
    std::uint64_t trained_on = 0;
};

/// FNV-1a over the curriculum bytes; identifies what a gating net was
/// distilled from.
std::uint64_t curriculum_fingerprint(const LogCurriculum& lc);

struct GatingFitReport {
    double loss_before = 0.0;
    double loss_after = 0.0;
};

/// Distill the curriculum posterior into a gating net: gating_epochs
/// full-batch optimizer steps on the weighted cross-entropy with targets
/// exp(log_weights), globally max-normalized. Rows with zero total weight
/// drop out. `opt` overrides the default adaptive optimizer (tests use the
/// plain-SGD mode).
GatingNet fit_gating(const LogCurriculum& lc, const Matrix& observations, const TrainConfig& cfg,
                     RngStream& rng, GatingFitReport* report = nullptr,
                     nn::OptimizerState* opt = nullptr);

/// Softmax of the net outputs; a simplex for any finite input.
std::vector<double> gating_predict(const GatingNet& g, std::span<const double> o);

/// Log-softmax of the net outputs.
std::vector<double> gating_log_predict(const GatingNet& g, std::span<const double> o);

/// log p(a|o) = log sum_z g(z|o) p(a|o,z), evaluated in the log domain.
double mixture_log_density(std::span<const GaussianExpert> experts, const GatingNet& g,
                           std::span<const double> o, std::span<const double> a);

struct MixtureSample {
    std::size_t component = 0;
    std::vector<double> action;
};

/// Draw z' from the gating, then an action from expert z'. deterministic
/// keeps z' stochastic but returns the expert mean.
MixtureSample sample(std::span<const GaussianExpert> experts, const GatingNet& g,
                     std::span<const double> o, RngStream& rng, bool deterministic = false);

}  // namespace imc
