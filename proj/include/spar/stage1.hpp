#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spar/checkpoint.hpp"
#include "spar/dataset.hpp"
#include "spar/nn.hpp"

namespace spar {

enum class CriticSubset : int { data = 0, guide = 1, rect = 2 };

// Asymmetric squared loss |tau - 1{u<0}| * u^2.
double expectile_loss(double residual, double tau);

struct QStats {
    double mean = 0.0;
    double std_dev = 0.0;  // population std (ddof = 0)
    double lcb = 0.0;
};

struct CriticEnsemble {
    std::vector<nn::ParamGraph> members;  // (s_norm, a) -> scalar
    std::vector<nn::ParamGraph> targets;  // Polyak copies
    std::array<std::vector<int>, 3> subsets;
    double gamma = 0.99;
    double expectile_tau = 0.5;

    int size() const { return static_cast<int>(members.size()); }
    const std::vector<int>& subset(CriticSubset s) const {
        return subsets[static_cast<std::size_t>(s)];
    }
};

struct Stage1Config {
    int steps = 1'000'000;
    int batch = 256;
    double learning_rate = 3e-4;
    double grad_clip = 1.0;
    double polyak_tau = 0.005;
    double gamma = 0.99;
    double expectile_tau = 0.5;
    double value_expectile = 0.7;
    double lambda_u = 0.5;
    int num_critics = 10;
    std::vector<int> hidden = {256, 256};
    bool gaussian_policy = false;
    int max_consecutive_errors = 10;
    std::uint64_t seed = 0;
};

// Frozen Stage-I artifacts. All methods take raw (unnormalized) states; the
// bundle applies the dataset normalization itself.
class AnchorBundle {
  public:
    AnchorBundle() = default;
    AnchorBundle(nn::ParamGraph base_policy, bool gaussian, CriticEnsemble critics,
                 nn::ParamGraph value_net, double lambda_u, std::vector<double> state_mean,
                 std::vector<double> state_std);

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    int state_dim() const { return static_cast<int>(state_mean_.size()); }
    int action_dim() const { return action_dim_; }
    double lambda_u() const { return lambda_u_; }
    bool gaussian_policy() const { return gaussian_; }

    const nn::ParamGraph& base_policy() const { return base_policy_; }
    const CriticEnsemble& critics() const { return critics_; }
    const nn::ParamGraph& value_net() const { return value_net_; }
    const std::vector<double>& state_mean() const { return state_mean_; }
    const std::vector<double>& state_std() const { return state_std_; }

    // Mutation is rejected once frozen.
    nn::ParamGraph& mutable_base_policy();
    CriticEnsemble& mutable_critics();
    nn::ParamGraph& mutable_value_net();

    std::vector<double> normalize_state(std::span<const double> raw_s) const;
    // Deterministic action (Gaussian head mean), clipped to [-1,1].
    std::vector<double> base_action(std::span<const double> raw_s) const;

    QStats q_rob(std::span<const double> raw_s, std::span<const double> a,
                 CriticSubset subset) const;
    // (lcb(s,a) - lcb(s,a_base)) / max(sigma(s,a_base), 1e-6), guide subset.
    double normalized_advantage(std::span<const double> raw_s, std::span<const double> a,
                                std::span<const double> a_base) const;

    // Batched LCB over a subset on prebuilt inputs (batch x (d_s + d_a),
    // normalized state columns). If grad_action is non-null it receives
    // d(lcb)/d(action) rows (batch x d_a).
    void lcb_batch(CriticSubset subset, const double* inputs, int batch, double* lcb_out,
                   double* grad_action) const;

    // Batched ensemble mean/std over a subset on prebuilt inputs.
    void stats_batch(CriticSubset subset, const double* inputs, int batch, double* mean_out,
                     double* std_out) const;

    // Concatenated parameter bytes; used by freeze-contract checks.
    std::vector<double> parameter_snapshot() const;

    Checkpoint to_checkpoint() const;
    static AnchorBundle from_checkpoint(const Checkpoint& ck);

  private:
    nn::ParamGraph base_policy_;
    bool gaussian_ = false;
    int action_dim_ = 0;
    CriticEnsemble critics_;
    nn::ParamGraph value_net_;
    double lambda_u_ = 0.5;
    std::vector<double> state_mean_, state_std_;
    bool frozen_ = false;

    QStats subset_stats(const std::vector<int>& idx, std::span<const double> input) const;
};

struct Stage1Hooks {
    // tag is "td_target" (queries at (s', pi_base(s'))) or "value_target"
    // (queries at dataset (s, a)).
    std::function<void(const char* tag, const double* s_norm, const double* actions, int batch,
                       int d_s, int d_a)>
        critic_query = nullptr;
    // Called after every step with the latest loss components.
    std::function<void(int step, double bc_loss, double critic_loss, double value_loss)>
        on_step = nullptr;
};

class Stage1Trainer {
  public:
    Stage1Trainer(const OfflineDataset& ds, Stage1Config cfg, Stage1Hooks hooks = {});

    void step();
    void run(int steps);
    int current_step() const { return step_; }

    double last_bc_loss() const { return last_bc_loss_; }
    double last_critic_loss() const { return last_critic_loss_; }
    double last_value_loss() const { return last_value_loss_; }

    // Live (unfrozen) base action for periodic evaluation.
    std::vector<double> base_action(std::span<const double> raw_s) const;

    // Freezes and returns the bundle; the trainer is spent afterwards.
    AnchorBundle finish();

  private:
    const OfflineDataset& ds_;
    Stage1Config cfg_;
    Stage1Hooks hooks_;
    Rng data_rng_;

    nn::ParamGraph base_;
    std::vector<nn::ParamGraph> critics_, targets_;
    nn::ParamGraph value_;
    nn::AdamState base_opt_, value_opt_;
    std::vector<nn::AdamState> critic_opts_;

    int step_ = 0;
    int consecutive_errors_ = 0;
    double last_bc_loss_ = 0.0, last_critic_loss_ = 0.0, last_value_loss_ = 0.0;

    // reusable buffers
    std::vector<int> batch_idx_;
    std::vector<double> xs_, xa_, xs2_, rewards_, not_done_;
    std::vector<double> sa_, sa2_, base_out2_, y_;
    nn::BatchTrace base_trace_, value_trace_;
    std::vector<nn::BatchTrace> critic_traces_, target_traces_;
    std::vector<double> grad_buf_, upstream_;

    void assemble_batch();
};

AnchorBundle train_stage1(const OfflineDataset& ds, const Stage1Config& cfg,
                          Stage1Hooks hooks = {});

}  // namespace spar
