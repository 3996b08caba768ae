#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spar/dataset.hpp"
#include "spar/stage2.hpp"

namespace spar {

struct ConflictReport {
    double dd = 0.0;   // <grad L_fit, delta_theta>; positive = update opposes fit
    double vsd = 0.0;  // L_fit(theta + delta) - L_fit(theta)
    Stage2Variant variant = Stage2Variant::mlp;
    int step = 0;
    double fit_loss_before = 0.0;
    double fit_loss_after = 0.0;
};

// Uniform probe surface over the module that receives value guidance.
class ConflictProbe {
  public:
    virtual ~ConflictProbe() = default;
    virtual Stage2Variant variant() const = 0;
    virtual int step() const = 0;
    virtual int row_count() const = 0;
    virtual double fit_loss(std::span<const int> rows, std::uint64_t noise_seed,
                            std::span<const double> shift) const = 0;
    virtual std::vector<double> fit_grad(std::span<const int> rows,
                                         std::uint64_t noise_seed) const = 0;
    virtual std::vector<double> guidance_delta(std::span<const int> rows,
                                               std::uint64_t noise_seed) const = 0;
    // Parameter + optimizer fingerprint; measure_conflict must not change it.
    virtual std::vector<double> fingerprint() const = 0;
};

class MlpConflictProbe : public ConflictProbe {
  public:
    explicit MlpConflictProbe(const MlpTrainer& t) : t_(t) {}
    Stage2Variant variant() const override { return Stage2Variant::mlp; }
    int step() const override { return t_.current_step(); }
    int row_count() const override { return t_.rows().n; }
    double fit_loss(std::span<const int> rows, std::uint64_t,
                    std::span<const double> shift) const override {
        return t_.fit_loss_at(rows, shift);
    }
    std::vector<double> fit_grad(std::span<const int> rows, std::uint64_t) const override {
        return t_.fit_grad(rows);
    }
    std::vector<double> guidance_delta(std::span<const int> rows, std::uint64_t) const override {
        return t_.guidance_delta(rows);
    }
    std::vector<double> fingerprint() const override;

  private:
    const MlpTrainer& t_;
};

class ProjConflictProbe : public ConflictProbe {
  public:
    explicit ProjConflictProbe(const ProjTrainer& t) : t_(t) {}
    Stage2Variant variant() const override;
    int step() const override { return t_.current_step(); }
    int row_count() const override { return t_.rows().n; }
    double fit_loss(std::span<const int> rows, std::uint64_t noise_seed,
                    std::span<const double> shift) const override {
        return t_.fit_loss_at(rows, noise_seed, shift);
    }
    std::vector<double> fit_grad(std::span<const int> rows,
                                 std::uint64_t noise_seed) const override {
        return t_.fit_grad(rows, noise_seed);
    }
    std::vector<double> guidance_delta(std::span<const int> rows,
                                       std::uint64_t noise_seed) const override {
        return t_.guidance_delta(rows, noise_seed);
    }
    std::vector<double> fingerprint() const override;

  private:
    const ProjTrainer& t_;
};

class PlasConflictProbe : public ConflictProbe {
  public:
    explicit PlasConflictProbe(const PlasTrainer& t) : t_(t) {}
    Stage2Variant variant() const override { return Stage2Variant::plas; }
    int step() const override { return t_.phase2_steps_done(); }
    int row_count() const override { return t_.rows().n; }
    double fit_loss(std::span<const int> rows, std::uint64_t,
                    std::span<const double> shift) const override {
        return t_.fit_loss_at(rows, shift);
    }
    std::vector<double> fit_grad(std::span<const int> rows, std::uint64_t) const override {
        return t_.fit_grad(rows);
    }
    std::vector<double> guidance_delta(std::span<const int> rows, std::uint64_t) const override {
        return t_.guidance_delta(rows);
    }
    std::vector<double> fingerprint() const override;

  private:
    const PlasTrainer& t_;
};

// One probe: DD and VSD for a single guidance-only optimizer step on a scratch
// copy. Side-effect free (verified against the fingerprint).
ConflictReport measure_conflict(const ConflictProbe& probe, int batch, std::uint64_t seed);

struct SupportReport {
    double ratio_q95 = 0.0;
    int k = 5;
    double boundary = 0.0;  // dataset q95 leave-one-out kNN distance
    int n_probe = 0;
    double probe_q95 = 0.0;
};

// Exact kNN in the original action space. For each probe action: mean distance
// to its k nearest dataset actions; ratio_q95 = q95(probe) / q95(dataset
// leave-one-out self-distances over a seeded subsample).
SupportReport support_distance_ratio(const OfflineDataset& ds,
                                     const std::vector<std::vector<double>>& actions, int k);

struct GeometrySummary {
    int mode_count_estimate = 0;
    std::vector<int> cluster_sizes;  // descending, clusters >= 1% of sample
    double magnitude_q50 = 0.0;
    double magnitude_q90 = 0.0;
    double magnitude_q95 = 0.0;
    double magnitude_q99 = 0.0;
    double cluster_radius = 0.0;
    int sample_size = 0;
};

// Density-based clustering of dataset residuals (radius = median pairwise
// distance / 4, min cluster 1% of the sample); no dimensionality reduction.
GeometrySummary residual_geometry_summary(const OfflineDataset& ds, const AnchorBundle& bundle);

// Policy actions at dataset states for support diagnostics (ungated; one
// sample per state for generative variants).
std::vector<std::vector<double>> sample_policy_actions(const OfflineDataset& ds,
                                                       const AnchorBundle& bundle,
                                                       const ResidualPolicy& policy, int n_probe,
                                                       std::uint64_t seed);

}  // namespace spar
