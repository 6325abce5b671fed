#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/experts.hpp"
#include "imc/gating.hpp"
#include "imc/rng.hpp"
#include "imc/synthdata.hpp"

namespace imc {

/// Empirical counts over B behaviors; the entropy base is B so the result
/// lands in [0, 1].
struct BehaviorCounts {
    std::vector<std::size_t> counts;
    std::size_t base = 0;  // B >= 2

    static BehaviorCounts from_trajectories(std::span<const Trajectory> trajectories,
                                            std::size_t n_behaviors);
};

/// H(beta) = -sum p log_B p, with 0 log 0 = 0. Throws on all-zero counts.
double behavior_entropy(const BehaviorCounts& c);

/// Mean of per-start-group entropies. Throws on an empty group.
double expected_conditional_entropy(std::span<const BehaviorCounts> per_start);

double success_rate(const std::vector<bool>& flags);

struct ModeFitResult {
    std::vector<double> per_branch_mean_distance;  // grouped by nearest branch
    double mean_distance = 0.0;
    bool averaging_flag = false;  // mean distance > 0.25 * adjacent gap
};

/// Samples actions at uniform probe observations and measures the distance
/// to the nearest branch curve. A sampler stuck between branches flags as
/// mode averaging.
ModeFitResult mode_fit_diagnostic(const std::function<double(double, RngStream&)>& sampler,
                                  const BranchTask& task, std::size_t n_probe,
                                  std::uint64_t seed);

/// Mean mixture log-density over a held-out set.
double test_log_likelihood(std::span<const GaussianExpert> experts, const GatingNet& gating,
                           const Dataset& data);

}  // namespace imc
