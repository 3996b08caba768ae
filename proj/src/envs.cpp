#include "spar/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "spar/errors.hpp"

namespace spar {

namespace {

constexpr double kPi = 3.14159265358979323846;

// narrow-ridge shape: steep falloff off the ridge, gentle preference along it.
constexpr double kRidgeOffGain = 25.0;
constexpr double kRidgeAlongGain = 2.0;
constexpr double kRidgeOffNoise = 0.015;

// bimodal-bandit bump width.
constexpr double kBumpWidth = 0.2;

// branch-maze: step scale, value decay per step-equivalent of distance.
constexpr double kMazeStep = 0.1;
constexpr double kMazeGamma = 0.9;
constexpr double kCorridorRadius = 0.12;
constexpr double kGoalRadius = 0.15;

struct Vec2 {
    double x, y;
};

constexpr std::array<Vec2, 4> kMazeNodes = {{
    {0.0, -0.9},  // trunk bottom
    {0.0, 0.0},   // junction
    {-0.8, 0.6},  // left end (goal)
    {0.8, 0.6},   // right end
}};

struct MazeSegment {
    int n0, n1;
    double length;
};

constexpr std::array<MazeSegment, 3> kMazeSegments = {{
    {0, 1, 0.9},
    {1, 2, 1.0},
    {1, 3, 1.0},
}};

// Network distance from each node to the goal node (index 2).
constexpr std::array<double, 4> kNodeGoalDist = {1.9, 1.0, 0.0, 2.0};

double clip1(double v) { return std::clamp(v, -1.0, 1.0); }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::uint64_t env_mix_seed(EnvName name) {
    return mix64(0x53504152u, static_cast<std::uint64_t>(name) + 11);
}

double point_segment_distance(double px, double py, const Vec2& a, const Vec2& b, double len,
                              double* arc_from_a) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    double t = ((px - a.x) * dx + (py - a.y) * dy) / (len * len);
    t = std::clamp(t, 0.0, 1.0);
    const double qx = a.x + t * dx, qy = a.y + t * dy;
    if (arc_from_a) *arc_from_a = t * len;
    return std::hypot(px - qx, py - qy);
}

}  // namespace

EnvName env_name_from_string(const std::string& s) {
    if (s == "unimodal-quad") return EnvName::unimodal_quad;
    if (s == "bimodal-bandit") return EnvName::bimodal_bandit;
    if (s == "narrow-ridge") return EnvName::narrow_ridge;
    if (s == "branch-maze") return EnvName::branch_maze;
    throw ConfigError("unknown environment '" + s + "'");
}

std::string to_string(EnvName n) {
    switch (n) {
        case EnvName::unimodal_quad: return "unimodal-quad";
        case EnvName::bimodal_bandit: return "bimodal-bandit";
        case EnvName::narrow_ridge: return "narrow-ridge";
        case EnvName::branch_maze: return "branch-maze";
    }
    throw ConfigError("invalid environment enum");
}

BehaviorTier behavior_from_string(const std::string& s) {
    if (s == "medium") return BehaviorTier::medium;
    if (s == "medium-replay-like") return BehaviorTier::medium_replay_like;
    if (s == "mixture-expert") return BehaviorTier::mixture_expert;
    if (s == "sparse-diverse") return BehaviorTier::sparse_diverse;
    throw ConfigError("unknown behavior tier '" + s + "'");
}

std::string to_string(BehaviorTier t) {
    switch (t) {
        case BehaviorTier::medium: return "medium";
        case BehaviorTier::medium_replay_like: return "medium-replay-like";
        case BehaviorTier::mixture_expert: return "mixture-expert";
        case BehaviorTier::sparse_diverse: return "sparse-diverse";
    }
    throw ConfigError("invalid behavior enum");
}

OracleEnv::OracleEnv(EnvName name) : name_(name) {
    const std::uint64_t seed = env_mix_seed(name);
    switch (name) {
        case EnvName::unimodal_quad:
            d_s_ = 2;
            d_a_ = 2;
            horizon_ = 1;
            lipschitz_L_ = 4.0;
            mat_a_.resize(4);
            for (int i = 0; i < 4; ++i) mat_a_[i] = counter_uniform(seed, i, 1.2);
            break;
        case EnvName::bimodal_bandit:
            d_s_ = 2;
            d_a_ = 2;
            horizon_ = 1;
            lipschitz_L_ = 6.5;
            mat_a_.resize(4);
            for (int i = 0; i < 4; ++i) mat_a_[i] = counter_uniform(seed, i, 1.5);
            break;
        case EnvName::narrow_ridge:
            d_s_ = 2;
            d_a_ = 4;
            horizon_ = 1;
            lipschitz_L_ = 400.0;
            mat_a_.resize(2);
            for (int i = 0; i < 2; ++i) mat_a_[i] = counter_uniform(seed, i, 1.2);
            break;
        case EnvName::branch_maze:
            d_s_ = 2;
            d_a_ = 2;
            horizon_ = 60;
            lipschitz_L_ = 0.5;
            break;
    }
}

std::vector<double> OracleEnv::target_action_raw(std::span<const double> s) const {
    switch (name_) {
        case EnvName::unimodal_quad: {
            std::vector<double> a(2);
            for (int i = 0; i < 2; ++i)
                a[i] = 0.4 * std::tanh(mat_a_[2 * i] * s[0] + mat_a_[2 * i + 1] * s[1]);
            return a;
        }
        case EnvName::bimodal_bandit: {
            std::vector<double> a(2);
            for (int i = 0; i < 2; ++i)
                a[i] = 0.25 + 0.3 * sigmoid(mat_a_[2 * i] * s[0] + mat_a_[2 * i + 1] * s[1]);
            return a;
        }
        case EnvName::narrow_ridge: {
            const double t = 0.7 * std::tanh(mat_a_[0] * s[0] + mat_a_[1] * s[1]);
            return {t};
        }
        case EnvName::branch_maze:
            return {};
    }
    return {};
}

std::vector<double> OracleEnv::ridge_point(double t) const {
    return {t, 0.45 * std::sin(kPi * t), 0.45 * std::cos(kPi * t) - 0.45, 0.35 * t};
}

double OracleEnv::ridge_distance(std::span<const double> a) const {
    // Dense scan over the ridge parameter, then parabolic refinement.
    auto sq_dist = [&](double t) {
        const auto r = ridge_point(t);
        double d = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double diff = a[i] - r[i];
            d += diff * diff;
        }
        return d;
    };
    const int n = 2000;
    double best_t = -1.0, best = sq_dist(-1.0);
    for (int i = 1; i <= n; ++i) {
        const double t = -1.0 + 2.0 * i / n;
        const double d = sq_dist(t);
        if (d < best) {
            best = d;
            best_t = t;
        }
    }
    double lo = std::max(-1.0, best_t - 2.0 / n), hi = std::min(1.0, best_t + 2.0 / n);
    for (int it = 0; it < 60; ++it) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (sq_dist(m1) < sq_dist(m2))
            hi = m2;
        else
            lo = m1;
    }
    return std::sqrt(sq_dist(0.5 * (lo + hi)));
}

double OracleEnv::geodesic_to_goal(std::span<const double> pos) const {
    double best = 1e30;
    for (const auto& seg : kMazeSegments) {
        double arc = 0.0;
        const double off = point_segment_distance(pos[0], pos[1], kMazeNodes[seg.n0],
                                                  kMazeNodes[seg.n1], seg.length, &arc);
        const double along = std::min(arc + kNodeGoalDist[seg.n0],
                                      (seg.length - arc) + kNodeGoalDist[seg.n1]);
        best = std::min(best, off + along);
    }
    return best;
}

bool OracleEnv::at_goal(std::span<const double> pos) const {
    return std::hypot(pos[0] - kMazeNodes[2].x, pos[1] - kMazeNodes[2].y) <= kGoalRadius;
}

double OracleEnv::q_star(std::span<const double> s, std::span<const double> a) const {
    if (static_cast<int>(s.size()) != d_s_ || static_cast<int>(a.size()) != d_a_)
        throw DimensionError("q_star: state/action dimension mismatch for " + to_string(name_));
    switch (name_) {
        case EnvName::unimodal_quad: {
            const auto t = target_action_raw(s);
            double d = 0.0;
            for (int i = 0; i < 2; ++i) d += (a[i] - t[i]) * (a[i] - t[i]);
            return -d;
        }
        case EnvName::bimodal_bandit: {
            const auto t = target_action_raw(s);
            double dp = 0.0, dm = 0.0;
            for (int i = 0; i < 2; ++i) {
                dp += (a[i] - t[i]) * (a[i] - t[i]);
                dm += (a[i] + t[i]) * (a[i] + t[i]);
            }
            const double k = 1.0 / (2.0 * kBumpWidth * kBumpWidth);
            return std::exp(-dp * k) + std::exp(-dm * k);
        }
        case EnvName::narrow_ridge: {
            const double tstar = target_action_raw(s)[0];
            const auto r = ridge_point(a[0]);
            double off = 0.0;
            for (int i = 1; i < 4; ++i) off += (a[i] - r[i]) * (a[i] - r[i]);
            const double dt = a[0] - tstar;
            return -kRidgeOffGain * off - kRidgeAlongGain * dt * dt;
        }
        case EnvName::branch_maze: {
            double px = clip1(s[0] + kMazeStep * a[0]);
            double py = clip1(s[1] + kMazeStep * a[1]);
            const double d = geodesic_to_goal(std::array<double, 2>{px, py});
            return std::pow(kMazeGamma, d / kMazeStep);
        }
    }
    return 0.0;
}

std::vector<double> OracleEnv::maze_behavior_direction(std::span<const double> pos,
                                                       int waypoint) const {
    const Vec2 w = kMazeNodes[static_cast<std::size_t>(waypoint)];
    if (std::hypot(pos[0] - w.x, pos[1] - w.y) < 0.12) return {0.0, 0.0};

    // Nearest segment decides routing; all segments meet at the junction.
    int best_seg = 0;
    double best = 1e30;
    for (int k = 0; k < 3; ++k) {
        const auto& seg = kMazeSegments[static_cast<std::size_t>(k)];
        const double d = point_segment_distance(pos[0], pos[1], kMazeNodes[seg.n0],
                                                kMazeNodes[seg.n1], seg.length, nullptr);
        if (d < best) {
            best = d;
            best_seg = k;
        }
    }
    const auto& seg = kMazeSegments[static_cast<std::size_t>(best_seg)];
    int target = (seg.n0 == waypoint || seg.n1 == waypoint) ? waypoint : 1;
    if (target == 1 && std::hypot(pos[0] - kMazeNodes[1].x, pos[1] - kMazeNodes[1].y) < 0.1)
        target = waypoint;
    const Vec2 tp = kMazeNodes[static_cast<std::size_t>(target)];
    const double dx = tp.x - pos[0], dy = tp.y - pos[1];
    const double norm = std::max(std::abs(dx), std::abs(dy));
    if (norm < 1e-12) return {0.0, 0.0};
    return {dx / norm, dy / norm};
}

std::vector<double> OracleEnv::optimal_action(std::span<const double> s) const {
    switch (name_) {
        case EnvName::unimodal_quad:
        case EnvName::bimodal_bandit:
            return target_action_raw(s);
        case EnvName::narrow_ridge: {
            const double t = target_action_raw(s)[0];
            return ridge_point(t);
        }
        case EnvName::branch_maze:
            return maze_behavior_direction(s, 2);
    }
    return {};
}

double OracleEnv::optimal_value(std::span<const double> s) const {
    const auto a = optimal_action(s);
    return q_star(s, a);
}

std::vector<double> OracleEnv::initial_state(Rng& rng) const {
    if (name_ == EnvName::branch_maze) {
        return {rng.uniform(-0.05, 0.05), -0.85 + rng.uniform(-0.04, 0.04)};
    }
    std::vector<double> s(static_cast<std::size_t>(d_s_));
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    return s;
}

StepResult OracleEnv::step(std::span<const double> s, std::span<const double> a, Rng& rng) const {
    StepResult r;
    if (name_ != EnvName::branch_maze) {
        r.reward = q_star(s, a);
        r.done = true;
        r.next_state = initial_state(rng);
        return r;
    }
    // Ray march with wall stop: advance in substeps, keep the last position
    // inside the corridor region, then refine at the blocking boundary.
    const double step_x = kMazeStep * clip1(a[0]);
    const double step_y = kMazeStep * clip1(a[1]);
    auto in_corridor = [&](double x, double y) {
        double best = 1e30;
        for (const auto& seg : kMazeSegments) {
            best = std::min(best, point_segment_distance(x, y, kMazeNodes[seg.n0],
                                                         kMazeNodes[seg.n1], seg.length, nullptr));
        }
        return best <= kCorridorRadius;
    };
    double t_ok = 0.0;
    const int substeps = 8;
    for (int i = 1; i <= substeps; ++i) {
        const double t = static_cast<double>(i) / substeps;
        if (in_corridor(s[0] + t * step_x, s[1] + t * step_y))
            t_ok = t;
        else
            break;
    }
    if (t_ok < 1.0) {
        double lo = t_ok, hi = t_ok + 1.0 / substeps;
        for (int it = 0; it < 30; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (in_corridor(s[0] + mid * step_x, s[1] + mid * step_y))
                lo = mid;
            else
                hi = mid;
        }
        t_ok = lo;
    }
    r.next_state = {s[0] + t_ok * step_x, s[1] + t_ok * step_y};
    r.done = at_goal(r.next_state);
    r.reward = r.done ? 1.0 : 0.0;
    return r;
}

OracleEnv::EpisodeContext OracleEnv::behavior_reset(BehaviorTier tier, Rng& rng) const {
    EpisodeContext ctx;
    if (name_ == EnvName::branch_maze) {
        // mode = waypoint node index.
        switch (tier) {
            case BehaviorTier::medium:
                ctx.mode = 2;
                ctx.noise = 0.35;
                break;
            case BehaviorTier::medium_replay_like: {
                static constexpr double noises[4] = {0.5, 0.35, 0.25, 0.15};
                ctx.mode = 2;
                ctx.noise = noises[rng.below(4)];
                break;
            }
            case BehaviorTier::mixture_expert:
                ctx.mode = 2;
                ctx.noise = rng.uniform() < 0.5 ? 0.15 : 0.45;
                break;
            case BehaviorTier::sparse_diverse: {
                const double u = rng.uniform();
                ctx.mode = u < 0.45 ? 2 : (u < 0.70 ? 3 : (u < 0.85 ? 1 : 0));
                ctx.noise = 0.35;
                break;
            }
        }
        return ctx;
    }
    switch (tier) {
        case BehaviorTier::medium:
            ctx.shrink = 0.7;
            ctx.noise = 0.25;
            break;
        case BehaviorTier::medium_replay_like: {
            static constexpr double shrinks[4] = {0.4, 0.6, 0.75, 0.9};
            static constexpr double noises[4] = {0.45, 0.3, 0.2, 0.12};
            const auto i = rng.below(4);
            ctx.shrink = shrinks[i];
            ctx.noise = noises[i];
            break;
        }
        case BehaviorTier::mixture_expert:
            if (rng.uniform() < 0.5) {
                ctx.shrink = 1.0;
                ctx.noise = 0.08;
            } else {
                ctx.shrink = 0.7;
                ctx.noise = 0.25;
            }
            break;
        case BehaviorTier::sparse_diverse:
            if (rng.uniform() < 0.5) {
                ctx.shrink = 0.0;  // uniform wander
                ctx.noise = 0.6;
            } else {
                ctx.shrink = 1.0;
                ctx.noise = 0.3;
            }
            break;
    }
    // Mixture mode for the bimodal task: which bump this episode imitates.
    ctx.mode = rng.uniform() < 0.5 ? 1 : -1;
    return ctx;
}

std::vector<double> OracleEnv::behavior_action(BehaviorTier tier, const EpisodeContext& ctx,
                                               std::span<const double> s, Rng& rng) const {
    (void)tier;
    switch (name_) {
        case EnvName::unimodal_quad: {
            const auto t = target_action_raw(s);
            return {clip1(ctx.shrink * t[0] + ctx.noise * rng.normal()),
                    clip1(ctx.shrink * t[1] + ctx.noise * rng.normal())};
        }
        case EnvName::bimodal_bandit: {
            const auto t = target_action_raw(s);
            const double sign = ctx.mode >= 0 ? 1.0 : -1.0;
            return {clip1(sign * ctx.shrink * t[0] + ctx.noise * rng.normal()),
                    clip1(sign * ctx.shrink * t[1] + ctx.noise * rng.normal())};
        }
        case EnvName::narrow_ridge: {
            const double tstar = target_action_raw(s)[0];
            const double t = std::clamp(ctx.shrink * tstar + 0.5 * ctx.noise * rng.normal(),
                                        -1.0, 1.0);
            auto a = ridge_point(t);
            for (int i = 1; i < 4; ++i) a[static_cast<std::size_t>(i)] =
                clip1(a[static_cast<std::size_t>(i)] + kRidgeOffNoise * rng.normal());
            return a;
        }
        case EnvName::branch_maze: {
            auto dir = maze_behavior_direction(s, ctx.mode);
            return {clip1(dir[0] + ctx.noise * rng.normal()),
                    clip1(dir[1] + ctx.noise * rng.normal())};
        }
    }
    return {};
}

OracleEnv make_env(EnvName name) { return OracleEnv(name); }

OracleEnv make_env(const std::string& name) { return OracleEnv(env_name_from_string(name)); }

}  // namespace spar
