#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spar/envs.hpp"
#include "spar/nn.hpp"

namespace spar {

struct Transition {
    std::vector<double> state;
    std::vector<double> action;  // components in [-1,1]
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
};

struct DatasetMeta {
    std::string env_name;
    std::string behavior_desc;
    std::uint64_t seed = 0;
    std::uint32_t size = 0;
};

// Immutable after creation; shared read-only across stages.
struct OfflineDataset {
    int d_s = 0;
    int d_a = 0;
    std::vector<Transition> transitions;
    std::vector<double> state_mean;
    std::vector<double> state_std;  // floored at 1e-6
    DatasetMeta meta;

    int size() const { return static_cast<int>(transitions.size()); }
    void normalize_state(std::span<const double> raw, std::span<double> out) const;
    std::vector<double> normalize_state(std::span<const double> raw) const;
};

// Rolls out the tier's noised suboptimal behavior policy; deterministic per
// seed. Requires n >= 1000.
OfflineDataset generate_dataset(const OracleEnv& env, BehaviorTier behavior, int n,
                                std::uint64_t seed);

void compute_normalization(OfflineDataset& ds);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::uint32_t> counts;
};

Histogram make_histogram(std::span<const double> values, int bins);

struct ResidualStats {
    double delta_rho = 0.0;  // (1-rho)-quantile of ||a - pi_base(s)||
    double action_diameter = 0.0;
    Histogram residual_magnitudes;
    Histogram pairwise_action_distances;
};

// base consumes the dataset-normalized state and outputs either d_a values or
// 2*d_a (Gaussian head; mean is used).
ResidualStats residual_stats(const OfflineDataset& ds, const nn::ParamGraph& base, double rho);

// Nearest-rank quantile: the ceil(q*n)-th order statistic (q in (0,1]).
double quantile_nearest_rank(std::vector<double> values, double q);

// Dataset file ("SPARDATA"): header magic, version u32, d_s, d_a, n (u32 LE),
// n float32 records (s, a, r, s', done-as-float), float32 mean/std, then a
// length-prefixed UTF-8 meta JSON string.
void save_dataset(const OfflineDataset& ds, const std::string& path);
OfflineDataset load_dataset(const std::string& path);
std::vector<std::uint8_t> serialize_dataset(const OfflineDataset& ds);

}  // namespace spar
