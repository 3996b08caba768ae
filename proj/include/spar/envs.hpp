#pragma once

#include <span>
#include <string>
#include <vector>

#include "spar/rng.hpp"

namespace spar {

enum class EnvName : int {
    unimodal_quad = 0,
    bimodal_bandit = 1,
    narrow_ridge = 2,
    branch_maze = 3,
};

EnvName env_name_from_string(const std::string& s);
std::string to_string(EnvName n);

enum class BehaviorTier : int {
    medium = 0,
    medium_replay_like = 1,
    mixture_expert = 2,
    sparse_diverse = 3,
};

BehaviorTier behavior_from_string(const std::string& s);
std::string to_string(BehaviorTier t);

struct StepResult {
    std::vector<double> next_state;
    double reward = 0.0;
    bool done = false;
};

// Synthetic continuous-action environment with a closed-form oracle value.
// The bandit-style tasks (unimodal-quad, bimodal-bandit, narrow-ridge) have
// horizon 1 and reward == q_star; branch-maze is episodic with sparse reward
// and a geodesic-potential surrogate as its oracle.
class OracleEnv {
  public:
    explicit OracleEnv(EnvName name);

    EnvName name() const { return name_; }
    int state_dim() const { return d_s_; }
    int action_dim() const { return d_a_; }
    int horizon() const { return horizon_; }
    double lipschitz_bound() const { return lipschitz_L_; }
    double diameter() const { return diameter_D_; }
    bool episodic() const { return name_ == EnvName::branch_maze; }
    // Stored branch-maze rewards are shifted by -1 per step.
    double reward_shift() const { return episodic() ? -1.0 : 0.0; }

    double q_star(std::span<const double> s, std::span<const double> a) const;
    // A canonical maximizer of q_star(s, .); for bimodal-bandit this is the
    // positive mode (the negative mode scores identically).
    std::vector<double> optimal_action(std::span<const double> s) const;
    double optimal_value(std::span<const double> s) const;

    std::vector<double> initial_state(Rng& rng) const;
    StepResult step(std::span<const double> s, std::span<const double> a, Rng& rng) const;

    // Suboptimal logging policy for dataset generation. `episode_mode` carries
    // per-episode latent choices (mixture mode, waypoint) fixed at reset.
    struct EpisodeContext {
        int mode = 0;
        double shrink = 0.7;
        double noise = 0.25;
    };
    EpisodeContext behavior_reset(BehaviorTier tier, Rng& rng) const;
    std::vector<double> behavior_action(BehaviorTier tier, const EpisodeContext& ctx,
                                        std::span<const double> s, Rng& rng) const;

    // narrow-ridge geometry: the ridge is the graph {(t, g(t)) : t in [-1,1]}.
    std::vector<double> ridge_point(double t) const;
    // Exact distance from an action to the ridge via dense sampling + local
    // refinement; the independent oracle for ridge-support checks.
    double ridge_distance(std::span<const double> a) const;

    // branch-maze geometry: geodesic distance-to-goal potential, continuous
    // over the whole box (distance to corridor network + along-network path).
    double geodesic_to_goal(std::span<const double> pos) const;
    bool at_goal(std::span<const double> pos) const;

  private:
    EnvName name_;
    int d_s_ = 2;
    int d_a_ = 2;
    int horizon_ = 1;
    double lipschitz_L_ = 0.0;
    double diameter_D_ = 2.0;

    // Fixed seeded mixing matrices (row-major d_a x d_s).
    std::vector<double> mat_a_;

    std::vector<double> target_action_raw(std::span<const double> s) const;
    std::vector<double> maze_behavior_direction(std::span<const double> pos, int waypoint) const;
};

OracleEnv make_env(EnvName name);
OracleEnv make_env(const std::string& name);

}  // namespace spar
