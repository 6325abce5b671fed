#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "imc/dataset.hpp"
#include "imc/rng.hpp"

namespace imc {

/// Multimodal regression task: a = 0.5 sin(2 pi o) + offset_b + noise, one
/// offset per branch.
struct BranchTask {
    std::vector<double> offsets;  // strictly increasing
    double noise_sd = 0.05;

    static BranchTask evenly_spaced(std::size_t n_branches, double lo = -1.0, double hi = 1.0);

    std::size_t n_branches() const { return offsets.size(); }
    double branch_value(double o, std::size_t b) const;
    /// Smallest adjacent offset gap (requires >= 2 branches).
    double gap() const;
    void validate() const;
};

/// o_i ~ U[-1,1], branch uniform, behavior labels attached.
Dataset gen_multibranch(const BranchTask& task, std::size_t n, std::uint64_t seed);

/// Planar corridor from (start_x, 0) to y = finish_y with one round obstacle
/// per gate row; passing left or right of each obstacle defines the
/// behavior bits (row 0 = LSB, right = 1).
struct ObstacleCourse {
    std::size_t gate_rows = 2;
    std::vector<double> obstacle_xs;  // one per gate row; default 0.5
    double obstacle_radius = 0.12;
    double step_len = 0.08;
    double start_x = 0.5;
    double finish_y = 1.0;
    double passage_offset = 0.3;    // demo waypoint distance from obstacle center
    double gate_approach = 0.1;     // vertical lead-in/out around each gate

    double gate_y(std::size_t i) const {
        return static_cast<double>(i + 1) / static_cast<double>(gate_rows + 1);
    }
    double obstacle_x(std::size_t i) const {
        return obstacle_xs.empty() ? 0.5 : obstacle_xs[i];
    }
    std::size_t n_behaviors() const { return std::size_t{1} << gate_rows; }
    void validate() const;  // passages must exist on both sides of every obstacle
};

constexpr int kBehaviorNone = -1;

struct Trajectory {
    std::vector<std::array<double, 2>> states;  // includes the start
    bool success = false;
    int behavior = kBehaviorNone;
};

/// Waypoint demonstrations, demos_per_behavior for each of the 2^M
/// behaviors, lateral jitter on the passage points. Rows are
/// (o = position plus incoming step scaled by 1/step_len, a = next
/// position); labels carry the behavior. The velocity half of the
/// observation is what lets a gating net distinguish flows that share a
/// position.
Dataset gen_obstacle_demos(const ObstacleCourse& course, std::size_t demos_per_behavior,
                           double jitter_sd, std::uint64_t seed);

/// The waypoint trail a single demo follows (exposed for replay tests).
std::vector<std::array<double, 2>> demo_trail(const ObstacleCourse& course, std::size_t behavior,
                                              double jitter_sd, RngStream& rng);

/// Policies see the same observation layout the demos record: x, y, and
/// the previous displacement over step_len (zero at rest).
using Policy = std::function<std::array<double, 2>(std::array<double, 4> obs, RngStream& rng)>;

/// Closed-loop rollout: repeatedly query the policy for a target, move
/// toward it clipped to step_len, fail on obstacle contact (segment
/// distance), succeed on reaching finish_y within the horizon.
Trajectory rollout(const Policy& policy, const ObstacleCourse& course, std::size_t horizon,
                   RngStream& rng, std::optional<std::array<double, 2>> start = std::nullopt);

/// Independent rollouts with per-index substreams; the factory builds one
/// policy per rollout so stateful policies stay confined to one thread.
std::vector<Trajectory> rollout_many(const std::function<Policy(std::size_t)>& policy_factory,
                                     const ObstacleCourse& course, std::size_t n_rollouts,
                                     std::size_t horizon, std::uint64_t seed,
                                     const std::vector<std::array<double, 2>>* starts = nullptr);

/// Behavior id from gate-side crossings; kBehaviorNone if some gate row is
/// never crossed.
int classify_behavior(const Trajectory& t, const ObstacleCourse& course);

/// CSV rows: rollout_id, step, x, y, success, behavior.
void save_trajectories(const std::filesystem::path& path,
                       std::span<const Trajectory> trajectories);

}  // namespace imc
