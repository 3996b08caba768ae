#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "spar/dataset.hpp"
#include "spar/envs.hpp"

namespace spar {

// Explicit r-cover of a box [-half_width, half_width]^d or an origin-centered
// ball: axis lattice of pitch 2r/sqrt(d), ball points projected inward.
struct CoveringInstance {
    int d = 1;
    bool ball = false;        // false: box
    double extent = 1.0;      // half width (box) or radius (ball)
    double resolution = 0.0;  // r
    std::vector<std::vector<double>> grid;

    int size() const { return static_cast<int>(grid.size()); }
};

CoveringInstance build_box_cover(int d, double half_width, double r);
CoveringInstance build_ball_cover(int d, double radius, double r);

// Max distance from `probes` random region points to the cover; an r-cover
// keeps this <= r.
double cover_worst_gap(const CoveringInstance& cover, int probes, std::uint64_t seed);

struct ComplexityConfig {
    int d = 1;
    double diameter = 2.0;   // D (global box [-D/2, D/2]^d)
    double delta_rho = 0.5;  // residual ball radius
    double lipschitz = 1.0;  // L
    double eps = 0.2;
    double beta = 0.1;
    double sigma = 0.1;
    int trials = 200;
    std::uint64_t seed = 0;
};

struct RegionOutcome {
    int cover_size = 0;
    long long samples_per_point = 0;
    long long total_samples = 0;
    int failures = 0;
    int trials = 0;
};

struct ComplexityReport {
    RegionOutcome global;
    RegionOutcome residual;
    double measured_ratio = 0.0;
    double predicted_ratio = 0.0;
    double beta = 0.0;
};

// Runs the covering-and-concentration procedure on an L-Lipschitz objective
// with truncated-Gaussian observation noise, separately on the global box and
// the residual ball, and reports empirical failure rates and sample totals.
// `f` defaults to the cone -L*||a - a0|| with a0 inside the residual ball.
ComplexityReport verify_sample_complexity(const ComplexityConfig& cfg,
                                          std::function<double(std::span<const double>)> f = {});

struct BiasProbe {
    double distance = 0.0;  // ||a_mu - a_base||
    double measured = 0.0;  // eps_loc via grid maximization
    double bound = 0.0;     // L * max(0, distance - delta_rho)
};

struct BiasReport {
    std::vector<BiasProbe> probes;
    double max_violation = 0.0;  // max(measured - bound), before tolerance
    double tolerance = 0.0;      // grid pitch * L
    bool holds = false;
    double delta_rho = 0.0;
};

BiasReport verify_localization_bias(const OracleEnv& env, const OfflineDataset& ds,
                                    const std::function<std::vector<double>(std::span<const double>)>&
                                        base_action,
                                    double delta_rho, int probes, std::uint64_t seed);

// Constructed instance: cone value field with maximizer at distance
// delta_rho + excess from the base action (L = 1).
BiasProbe constructed_bias_case(int d, double delta_rho, double excess, std::uint64_t seed);

struct DriftInstance {
    enum class Kind { circle, sine } kind = Kind::circle;
    double radius = 1.0;     // circle
    double amplitude = 0.5;  // sine sheet y = amplitude * sin(freq * t)
    double freq = 2.0;

    double curvature() const;
    // Distance from a 2-D point to the manifold (closed form for the circle,
    // Newton projection to 1e-10 for the sine sheet).
    double distance(std::span<const double> p) const;
};

struct DriftReport {
    std::vector<double> chord_lengths;
    std::vector<double> chord_drifts;   // sup_alpha d(x_alpha, M)
    std::vector<double> chord_bounds;   // (kappa/8) c^2
    std::vector<double> etas;
    std::vector<double> grad_drifts;    // d(x + eta v, M)
    double slope_chord = 0.0;
    double slope_grad = 0.0;
    bool chord_bound_ok = false;
};

DriftReport verify_drift(const DriftInstance& inst, std::span<const double> chord_lengths,
                         std::span<const double> etas, std::uint64_t seed);

}  // namespace spar
