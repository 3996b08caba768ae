#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spar/checkpoint.hpp"
#include "spar/dataset.hpp"
#include "spar/nn.hpp"
#include "spar/rng.hpp"
#include "spar/stage1.hpp"
#include "spar/weighting.hpp"

namespace spar {

enum class Stage2Variant : int { mlp = 0, cvae = 1, plas = 2, proj = 3 };

Stage2Variant variant_from_string(const std::string& s);
std::string to_string(Stage2Variant v);

struct Stage2Config {
    Stage2Variant variant = Stage2Variant::proj;
    int steps = 1'000'000;
    int batch = 256;
    double learning_rate = 3e-4;
    double grad_clip = 1.0;
    double lambda_g = 0.5;
    WeightingConfig weighting;
    int latent_dim = 16;
    double beta_kl = 0.5;
    double recon_weight = 1.0;
    int candidates = 64;  // K
    int projection_period = 10;
    double ema_tau = 0.005;
    std::vector<int> hidden = {256, 256};
    std::vector<int> cvae_hidden = {256, 256, 256};
    double residual_clip = 2.0;   // inf-norm bound on fit targets
    double latent_limit = 2.0;    // PLAS latent box scale
    int plas_phase1_steps = -1;   // -1: steps/2 (equal total budget with PROJ)
    int max_consecutive_errors = 10;
    std::uint64_t seed = 0;
};

struct ResidualMlp {
    nn::ParamGraph net;  // (s_norm, a_base) -> delta_a
    double lambda_g = 0.5;
};

struct ResidualCvae {
    nn::ParamGraph encoder;  // (s_norm, delta_a) -> [mu_z, log_sigma_z]
    nn::ParamGraph decoder;  // (s_norm, a_base, z) -> delta_a
    int latent_dim = 16;
    double kl_weight = 0.5;
    double recon_weight = 1.0;

    static constexpr double kLogStdLo = -8.0;
    static constexpr double kLogStdHi = 4.0;
};

struct ProjState {
    ResidualCvae online;
    ResidualCvae target;  // EMA copy; decodes self-imitation candidates
    int candidates = 64;
    int projection_period = 10;
    double ema_tau = 0.005;
    WeightingConfig weighting;
    double lambda_g = 0.5;
};

struct PlasActor {
    nn::ParamGraph latent_policy;  // (s_norm, a_base) -> tanh output, scaled by latent_limit
    ResidualCvae cvae;             // decoder frozen during phase 2
    double lambda_g = 0.5;
    double latent_limit = 2.0;
};

struct CvaeLossParts {
    double recon = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

// Single-sample weighted ELBO: z ~ q(.|s, delta_gt) via reparameterization,
// recon = w * recon_weight * ||dec(s, a_base, z) - delta_gt||^2, KL unweighted.
CvaeLossParts cvae_loss(const ResidualCvae& model, std::span<const double> s_norm,
                        std::span<const double> a_base, std::span<const double> delta_gt,
                        double w, Rng& rng);

// Per-row quantities that are fixed for the whole of Stage II (the bundle is
// frozen and the dataset immutable); computed once per run.
struct RowCache {
    int n = 0, d_s = 0, d_a = 0;
    std::vector<double> s_norm;      // n x d_s
    std::vector<double> a_base;      // n x d_a, clipped to the action box
    std::vector<double> delta_gt;    // n x d_a, inf-norm clipped
    std::vector<double> a_tilde;     // n
    std::vector<double> fit_weight;  // n
    std::vector<double> lcb_base;    // n (guide subset at (s, a_base))
    std::vector<double> sigma_base;  // n (guide subset std, floored)
};

RowCache build_row_cache(const OfflineDataset& ds, const AnchorBundle& bundle,
                         const WeightingConfig& weighting);

// View of cached rows used by the self-imitation machinery.
struct StateBatchView {
    const RowCache* cache = nullptr;
    std::span<const int> rows;
};

struct SelfImitationEval {
    double loss = 0.0;
    std::vector<double> decoder_grad;  // w.r.t. online decoder params, unscaled
    std::vector<double> a_tilde;       // rows x K
    std::vector<double> omega;         // rows x K
    std::vector<double> candidate_delta;  // rows x K x d_a (target-decoded)
};

// Decodes K prior samples with the target decoder, scores them with the
// frozen critics, and regresses the online decoder toward the omega-weighted
// candidates (omega and candidates held constant). Pure: no state mutated.
SelfImitationEval latent_self_imitation_eval(const ResidualCvae& online,
                                             const ResidualCvae& target,
                                             const AnchorBundle& bundle, StateBatchView batch,
                                             const WeightingConfig& weighting, int k, Rng& rng);

// One full step: lambda_g-scaled Adam update of the online decoder followed by
// the EMA target update. Returns the (unscaled) guidance loss.
double latent_self_imitation_step(ProjState& ps, const AnchorBundle& bundle, StateBatchView batch,
                                  nn::AdamState& decoder_opt, Rng& rng);

class MlpTrainer {
  public:
    MlpTrainer(const AnchorBundle& bundle, const OfflineDataset& ds, Stage2Config cfg);

    void step();
    void run(int steps);
    int current_step() const { return step_; }
    double last_fit_loss() const { return last_fit_; }
    double last_guide_value() const { return last_guide_; }

    ResidualMlp finish() const;
    const nn::ParamGraph& net() const { return net_; }
    const nn::AdamState& optimizer() const { return opt_; }
    const RowCache& rows() const { return cache_; }

    double fit_loss_at(std::span<const int> rows, std::span<const double> shift) const;
    std::vector<double> fit_grad(std::span<const int> rows) const;
    std::vector<double> guidance_delta(std::span<const int> rows) const;

  private:
    const AnchorBundle& bundle_;
    Stage2Config cfg_;
    RowCache cache_;
    nn::ParamGraph net_;
    nn::AdamState opt_;
    Rng data_rng_;
    int step_ = 0;
    int consecutive_errors_ = 0;
    double last_fit_ = 0.0, last_guide_ = 0.0;
    std::vector<int> batch_rows_;

    void compute_losses(const nn::ParamGraph& net, std::span<const int> rows, double* fit_loss,
                        double* guide_value, std::vector<double>* fit_grad,
                        std::vector<double>* guide_grad) const;
};

// Trains the CVAE fit objective every step; for variant proj, additionally a
// lambda_g-scaled self-imitation step every projection_period steps (variant
// cvae is exactly this loop with lambda_g = 0).
class ProjTrainer {
  public:
    ProjTrainer(const AnchorBundle& bundle, const OfflineDataset& ds, Stage2Config cfg);

    void step();
    void run(int steps);
    int current_step() const { return step_; }
    double last_recon() const { return last_recon_; }
    double last_kl() const { return last_kl_; }
    double last_guide_loss() const { return last_guide_; }
    double mean_kl() const { return kl_steps_ ? kl_sum_ / kl_steps_ : 0.0; }

    ProjState finish() const;
    const ProjState& state() const { return ps_; }
    const nn::AdamState& decoder_optimizer() const { return dec_opt_; }
    const RowCache& rows() const { return cache_; }

    // Conflict-probe surface over the online decoder parameters. The fit loss
    // is the dataset weighted reconstruction term (KL excluded).
    double fit_loss_at(std::span<const int> rows, std::uint64_t noise_seed,
                       std::span<const double> decoder_shift) const;
    std::vector<double> fit_grad(std::span<const int> rows, std::uint64_t noise_seed) const;
    std::vector<double> guidance_delta(std::span<const int> rows, std::uint64_t noise_seed) const;

  private:
    const AnchorBundle& bundle_;
    Stage2Config cfg_;
    RowCache cache_;
    ProjState ps_;
    nn::AdamState enc_opt_, dec_opt_;
    Rng data_rng_, reparam_rng_, candidate_rng_;
    int step_ = 0;
    int consecutive_errors_ = 0;
    double last_recon_ = 0.0, last_kl_ = 0.0, last_guide_ = 0.0;
    double kl_sum_ = 0.0;
    int kl_steps_ = 0;
    std::vector<int> batch_rows_;

    struct FitGrads {
        double recon = 0.0, kl = 0.0;
        std::vector<double> encoder;
        std::vector<double> decoder;
    };
    FitGrads fit_pass(const ResidualCvae& model, std::span<const int> rows,
                      std::span<const double> eps, bool want_grads) const;
};

class PlasTrainer {
  public:
    PlasTrainer(const AnchorBundle& bundle, const OfflineDataset& ds, Stage2Config cfg);

    void run_phase1(int steps);
    void phase2_step();
    void run_phase2(int steps);
    // Full schedule: phase 1 then phase 2 per cfg.
    void run(int total_steps);

    int phase1_steps_done() const;
    int phase2_steps_done() const { return phase2_step_; }
    double last_guide_value() const { return last_guide_; }

    PlasActor finish() const;
    const nn::ParamGraph& latent_policy() const { return latent_; }
    const ResidualCvae& cvae() const;
    const nn::AdamState& latent_optimizer() const { return latent_opt_; }
    const RowCache& rows() const;

    // Conflict-probe surface over the latent-policy parameters. The fit loss
    // is the weighted reconstruction of dataset residuals through the frozen
    // decoder driven by the latent policy.
    double fit_loss_at(std::span<const int> rows, std::span<const double> latent_shift) const;
    std::vector<double> fit_grad(std::span<const int> rows) const;
    std::vector<double> guidance_delta(std::span<const int> rows) const;

  private:
    const AnchorBundle& bundle_;
    Stage2Config cfg_;
    ProjTrainer phase1_;
    nn::ParamGraph latent_;
    nn::AdamState latent_opt_;
    Rng data_rng_;
    int phase2_step_ = 0;
    double last_guide_ = 0.0;
    std::vector<int> batch_rows_;

    void compute_guidance(const nn::ParamGraph& latent, std::span<const int> rows,
                          double* guide_value, std::vector<double>* latent_grad) const;
    void compute_fit(const nn::ParamGraph& latent, std::span<const int> rows, double* fit_loss,
                     std::vector<double>* latent_grad) const;
};

// Variant-tagged deployment policy.
struct ResidualPolicy {
    Stage2Variant variant = Stage2Variant::mlp;
    std::optional<ResidualMlp> mlp;
    std::optional<ProjState> proj;  // also used for variant cvae
    std::optional<PlasActor> plas;

    int action_dim(const AnchorBundle& bundle) const;
    // Candidate residuals for one state: 1 for mlp/plas, k for cvae/proj.
    std::vector<std::vector<double>> sample_deltas(const AnchorBundle& bundle,
                                                   std::span<const double> raw_s,
                                                   std::span<const double> a_base, int k,
                                                   Rng& rng) const;

    Checkpoint to_checkpoint() const;
    static ResidualPolicy from_checkpoint(const Checkpoint& ck);
};

ResidualMlp train_spar_mlp(const AnchorBundle& bundle, const OfflineDataset& ds,
                           const Stage2Config& cfg);
ProjState train_spar_cvae(const AnchorBundle& bundle, const OfflineDataset& ds,
                          const Stage2Config& cfg);
ProjState train_spar_proj(const AnchorBundle& bundle, const OfflineDataset& ds,
                          const Stage2Config& cfg);
PlasActor train_spar_plas(const AnchorBundle& bundle, const OfflineDataset& ds,
                          const Stage2Config& cfg);

ResidualPolicy train_stage2(const AnchorBundle& bundle, const OfflineDataset& ds,
                            const Stage2Config& cfg);

}  // namespace spar
