#include "imc/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "imc/errors.hpp"
#include "imc/parallel.hpp"

namespace imc {

BranchTask BranchTask::evenly_spaced(std::size_t n_branches, double lo, double hi) {
    BranchTask t;
    if (n_branches == 1) {
        t.offsets = {0.5 * (lo + hi)};
        return t;
    }
    for (std::size_t b = 0; b < n_branches; ++b)
        t.offsets.push_back(lo + (hi - lo) * static_cast<double>(b) /
                                     static_cast<double>(n_branches - 1));
    return t;
}

double BranchTask::branch_value(double o, std::size_t b) const {
    return 0.5 * std::sin(2.0 * std::numbers::pi * o) + offsets[b];
}

double BranchTask::gap() const {
    double g = offsets[1] - offsets[0];
    for (std::size_t b = 2; b < offsets.size(); ++b) g = std::min(g, offsets[b] - offsets[b - 1]);
    return g;
}

void BranchTask::validate() const {
    if (offsets.empty()) throw InvalidInputError("branch task: no branches");
    for (std::size_t b = 1; b < offsets.size(); ++b)
        if (!(offsets[b] > offsets[b - 1]))
            throw InvalidInputError("branch task: offsets must be strictly increasing");
    if (!(noise_sd >= 0.0)) throw InvalidInputError("branch task: noise_sd must be >= 0");
}

Dataset gen_multibranch(const BranchTask& task, std::size_t n, std::uint64_t seed) {
    task.validate();
    RngStream rng(seed);
    Dataset ds;
    ds.observations = Matrix(n, 1);
    ds.actions = Matrix(n, 1);
    ds.behavior_labels.resize(n);
    ds.n_behaviors = static_cast<int>(task.n_branches());
    for (std::size_t i = 0; i < n; ++i) {
        const double o = rng.uniform(-1.0, 1.0);
        const std::size_t b = rng.uniform_index(task.n_branches());
        ds.observations(i, 0) = o;
        ds.actions(i, 0) = task.branch_value(o, b) + task.noise_sd * rng.normal();
        ds.behavior_labels[i] = static_cast<int>(b);
    }
    ds.validate();
    return ds;
}

void ObstacleCourse::validate() const {
    if (gate_rows == 0) throw InvalidInputError("course: need at least one gate row");
    if (!obstacle_xs.empty() && obstacle_xs.size() != gate_rows)
        throw InvalidInputError("course: obstacle_xs size mismatch");
    for (std::size_t i = 0; i < gate_rows; ++i) {
        const double x = obstacle_x(i);
        if (!(x - obstacle_radius > 0.05) || !(x + obstacle_radius < 0.95))
            throw InvalidInputError("course: no passage on both sides of obstacle " +
                                    std::to_string(i));
        if (!(passage_offset > obstacle_radius))
            throw InvalidInputError("course: passage_offset must clear the obstacle radius");
    }
}

namespace {

double dist_point_segment(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len_sq = dx * dx + dy * dy;
    double t = 0.0;
    if (len_sq > 0.0) t = std::clamp(((px - ax) * dx + (py - ay) * dy) / len_sq, 0.0, 1.0);
    const double cx = ax + t * dx - px, cy = ay + t * dy - py;
    return std::sqrt(cx * cx + cy * cy);
}

bool segment_hits_obstacle(const ObstacleCourse& c, std::array<double, 2> a,
                           std::array<double, 2> b) {
    for (std::size_t i = 0; i < c.gate_rows; ++i)
        if (dist_point_segment(c.obstacle_x(i), c.gate_y(i), a[0], a[1], b[0], b[1]) <
            c.obstacle_radius)
            return true;
    return false;
}

}  // namespace

std::vector<std::array<double, 2>> demo_trail(const ObstacleCourse& course, std::size_t behavior,
                                              double jitter_sd, RngStream& rng) {
    // Waypoints: start, a lead-in/out through each chosen passage, then the
    // finish. Jitter moves the passage x, clamped so the trail keeps
    // clearing the obstacle. Between consecutive gates each continuation
    // leaves the lane immediately: same-side paths jog outward, crossings
    // take a direction-dependent transit height so opposite crossings never
    // intersect.
    std::vector<std::array<double, 2>> waypoints;
    waypoints.push_back({course.start_x, 0.0});
    double prev_x = 0.0;
    for (std::size_t i = 0; i < course.gate_rows; ++i) {
        const bool right = ((behavior >> i) & 1) != 0;
        const double side = right ? 1.0 : -1.0;
        double x = course.obstacle_x(i) + side * course.passage_offset;
        const double clearance = course.passage_offset - course.obstacle_radius;
        const double jitter = std::clamp(jitter_sd * rng.normal(), -0.6 * clearance,
                                         0.6 * clearance);
        x += jitter;
        if (i == 0) {
            // reach full lateral clearance early, well below the first gate
            const double split_y = std::min(0.15, course.gate_y(0) - course.gate_approach);
            waypoints.push_back({x, split_y});
        }
        if (i > 0) {
            const double y_prev = course.gate_y(i - 1) + course.gate_approach;
            const double y_next = course.gate_y(i) - course.gate_approach;
            const double gap = y_next - y_prev;
            const bool prev_right = ((behavior >> (i - 1)) & 1) != 0;
            if (prev_right == right) {
                const double jog_x = prev_x + side * 0.4 * course.passage_offset;
                waypoints.push_back({jog_x, 0.5 * (y_prev + y_next)});
            } else {
                // slow departure so the fork region sees as many crossing
                // samples as jogging ones, then a level transit along the
                // middle of the free band between the obstacle rows;
                // opposite transit directions are separated by velocity
                const double dir = x > prev_x ? 1.0 : -1.0;
                const double mid_y = y_prev + (0.5 - 0.05 * dir) * gap;
                waypoints.push_back({prev_x + dir * 0.08, y_prev + 0.25 * gap});
                waypoints.push_back({prev_x + dir * 0.2, mid_y});
                waypoints.push_back({x - dir * 0.2, mid_y});
            }
        }
        waypoints.push_back({x, course.gate_y(i) - course.gate_approach});
        waypoints.push_back({x, course.gate_y(i) + course.gate_approach});
        prev_x = x;
    }
    waypoints.push_back({course.start_x, course.finish_y});

    std::vector<std::array<double, 2>> trail;
    trail.push_back(waypoints[0]);
    for (std::size_t w = 1; w < waypoints.size(); ++w) {
        const auto& a = waypoints[w - 1];
        const auto& b = waypoints[w];
        const double dist = std::hypot(b[0] - a[0], b[1] - a[1]);
        const auto steps = static_cast<std::size_t>(std::ceil(dist / course.step_len));
        for (std::size_t s = 1; s <= steps; ++s) {
            const double t = static_cast<double>(s) / static_cast<double>(steps);
            trail.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
        }
    }
    return trail;
}

Dataset gen_obstacle_demos(const ObstacleCourse& course, std::size_t demos_per_behavior,
                           double jitter_sd, std::uint64_t seed) {
    course.validate();
    const std::size_t n_behaviors = course.n_behaviors();
    RngStream root(seed);
    std::vector<std::vector<double>> obs, act;
    std::vector<int> labels;
    std::vector<int> starts;
    for (std::size_t b = 0; b < n_behaviors; ++b) {
        for (std::size_t d = 0; d < demos_per_behavior; ++d) {
            auto rng = root.substream(b * demos_per_behavior + d);
            const auto trail = demo_trail(course, b, jitter_sd, rng);
            for (std::size_t t = 0; t + 1 < trail.size(); ++t) {
                double vx = 0.0, vy = 0.0;
                if (t > 0) {
                    vx = (trail[t][0] - trail[t - 1][0]) / course.step_len;
                    vy = (trail[t][1] - trail[t - 1][1]) / course.step_len;
                }
                obs.push_back({trail[t][0], trail[t][1], vx, vy});
                act.push_back({trail[t + 1][0], trail[t + 1][1]});
                labels.push_back(static_cast<int>(b));
                starts.push_back(0);  // single shared start position
            }
        }
    }
    Dataset ds;
    ds.observations = Matrix::from_rows(obs);
    ds.actions = Matrix::from_rows(act);
    ds.behavior_labels = std::move(labels);
    ds.start_ids = std::move(starts);
    ds.n_behaviors = static_cast<int>(n_behaviors);
    ds.validate();
    return ds;
}

Trajectory rollout(const Policy& policy, const ObstacleCourse& course, std::size_t horizon,
                   RngStream& rng, std::optional<std::array<double, 2>> start) {
    Trajectory traj;
    std::array<double, 2> pos = start.value_or(std::array<double, 2>{course.start_x, 0.0});
    traj.states.push_back(pos);
    std::array<double, 2> last_step{0.0, 0.0};
    for (std::size_t t = 0; t < horizon; ++t) {
        const std::array<double, 4> obs{pos[0], pos[1], last_step[0] / course.step_len,
                                        last_step[1] / course.step_len};
        const auto target = policy(obs, rng);
        double dx = target[0] - pos[0];
        double dy = target[1] - pos[1];
        const double dist = std::hypot(dx, dy);
        if (dist > course.step_len) {
            dx *= course.step_len / dist;
            dy *= course.step_len / dist;
        }
        const std::array<double, 2> next{pos[0] + dx, pos[1] + dy};
        last_step = {dx, dy};
        if (segment_hits_obstacle(course, pos, next)) {
            traj.states.push_back(next);
            traj.success = false;
            traj.behavior = classify_behavior(traj, course);
            return traj;
        }
        pos = next;
        traj.states.push_back(pos);
        if (pos[1] >= course.finish_y) {
            traj.success = true;
            traj.behavior = classify_behavior(traj, course);
            return traj;
        }
    }
    traj.success = false;
    traj.behavior = classify_behavior(traj, course);
    return traj;
}

std::vector<Trajectory> rollout_many(const std::function<Policy(std::size_t)>& policy_factory,
                                     const ObstacleCourse& course, std::size_t n_rollouts,
                                     std::size_t horizon, std::uint64_t seed,
                                     const std::vector<std::array<double, 2>>* starts) {
    std::vector<Trajectory> out(n_rollouts);
    RngStream root(seed);
    par::for_n(n_rollouts, [&](std::size_t i) {
        auto rng = root.substream(i);
        auto policy = policy_factory(i);
        std::optional<std::array<double, 2>> start;
        if (starts != nullptr && !starts->empty()) start = (*starts)[i % starts->size()];
        out[i] = rollout(policy, course, horizon, rng, start);
    });
    return out;
}

void save_trajectories(const std::filesystem::path& path,
                       std::span<const Trajectory> trajectories) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << "rollout_id,step,x,y,success,behavior\n";
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& t = trajectories[i];
        for (std::size_t s = 0; s < t.states.size(); ++s)
            f << i << ',' << s << ',' << format_double(t.states[s][0]) << ','
              << format_double(t.states[s][1]) << ',' << (t.success ? 1 : 0) << ','
              << t.behavior << '\n';
    }
    if (!f) throw IoError("write failed: " + path.string());
}

int classify_behavior(const Trajectory& t, const ObstacleCourse& course) {
    int behavior = 0;
    for (std::size_t i = 0; i < course.gate_rows; ++i) {
        const double gy = course.gate_y(i);
        bool crossed = false;
        for (std::size_t s = 0; s + 1 < t.states.size(); ++s) {
            const double y0 = t.states[s][1];
            const double y1 = t.states[s + 1][1];
            if (y0 < gy && y1 >= gy) {
                const double f = (gy - y0) / (y1 - y0);
                const double x = t.states[s][0] + f * (t.states[s + 1][0] - t.states[s][0]);
                if (x > course.obstacle_x(i)) behavior |= 1 << i;
                crossed = true;
                break;
            }
        }
        if (!crossed) return kBehaviorNone;
    }
    return behavior;
}

}  // namespace imc
