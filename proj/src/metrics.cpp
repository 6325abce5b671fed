#include "imc/metrics.hpp"

#include <cmath>

#include "imc/errors.hpp"
#include "imc/parallel.hpp"

namespace imc {

BehaviorCounts BehaviorCounts::from_trajectories(std::span<const Trajectory> trajectories,
                                                 std::size_t n_behaviors) {
    BehaviorCounts c{std::vector<std::size_t>(n_behaviors, 0), n_behaviors};
    for (const auto& t : trajectories)
        if (t.success && t.behavior >= 0 && static_cast<std::size_t>(t.behavior) < n_behaviors)
            ++c.counts[static_cast<std::size_t>(t.behavior)];
    return c;
}

double behavior_entropy(const BehaviorCounts& c) {
    if (c.base < 2) throw InvalidInputError("behavior_entropy: base must be >= 2");
    std::size_t total = 0;
    for (std::size_t v : c.counts) total += v;
    if (total == 0) throw InvalidInputError("behavior_entropy: all counts are zero");
    const double log_base = std::log(static_cast<double>(c.base));
    double h = 0.0;
    for (std::size_t v : c.counts) {
        if (v == 0) continue;
        const double p = static_cast<double>(v) / static_cast<double>(total);
        h -= p * std::log(p) / log_base;
    }
    return h;
}

double expected_conditional_entropy(std::span<const BehaviorCounts> per_start) {
    if (per_start.empty()) throw InvalidInputError("expected_conditional_entropy: no groups");
    double sum = 0.0;
    for (const auto& g : per_start) sum += behavior_entropy(g);
    return sum / static_cast<double>(per_start.size());
}

double success_rate(const std::vector<bool>& flags) {
    if (flags.empty()) throw InvalidInputError("success_rate: empty input");
    std::size_t ok = 0;
    for (bool f : flags) ok += f ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(flags.size());
}

ModeFitResult mode_fit_diagnostic(const std::function<double(double, RngStream&)>& sampler,
                                  const BranchTask& task, std::size_t n_probe,
                                  std::uint64_t seed) {
    task.validate();
    if (task.n_branches() < 2)
        throw InvalidInputError("mode_fit_diagnostic: need at least two branches");
    RngStream root(seed);
    std::vector<double> dist(n_probe);
    std::vector<std::size_t> nearest(n_probe);
    par::for_n(n_probe, [&](std::size_t i) {
        auto rng = root.substream(i);
        const double o = rng.uniform(-1.0, 1.0);
        const double a = sampler(o, rng);
        double best = std::abs(a - task.branch_value(o, 0));
        std::size_t best_b = 0;
        for (std::size_t b = 1; b < task.n_branches(); ++b) {
            const double d = std::abs(a - task.branch_value(o, b));
            if (d < best) {
                best = d;
                best_b = b;
            }
        }
        dist[i] = best;
        nearest[i] = best_b;
    });
    ModeFitResult r;
    r.per_branch_mean_distance.assign(task.n_branches(), 0.0);
    std::vector<std::size_t> counts(task.n_branches(), 0);
    double total = 0.0;
    for (std::size_t i = 0; i < n_probe; ++i) {
        total += dist[i];
        r.per_branch_mean_distance[nearest[i]] += dist[i];
        ++counts[nearest[i]];
    }
    for (std::size_t b = 0; b < task.n_branches(); ++b)
        if (counts[b] > 0) r.per_branch_mean_distance[b] /= static_cast<double>(counts[b]);
    r.mean_distance = total / static_cast<double>(n_probe);
    r.averaging_flag = r.mean_distance > 0.25 * task.gap();
    return r;
}

double test_log_likelihood(std::span<const GaussianExpert> experts, const GatingNet& gating,
                           const Dataset& data) {
    std::vector<double> row_ll(data.size());
    par::for_n(data.size(), [&](std::size_t n) {
        const std::span<const double> o{data.observations.row(n), data.d_o()};
        const std::span<const double> a{data.actions.row(n), data.d_a()};
        row_ll[n] = mixture_log_density(experts, gating, o, a);
    });
    double sum = 0.0;
    for (double v : row_ll) sum += v;
    return sum / static_cast<double>(data.size());
}

}  // namespace imc
