#include "spar/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spar/errors.hpp"

namespace spar {

namespace {

void append_graph_and_opt(std::vector<double>& out, const nn::ParamGraph& g,
                          const nn::AdamState& opt) {
    out.insert(out.end(), g.params.begin(), g.params.end());
    out.insert(out.end(), opt.first_moment.begin(), opt.first_moment.end());
    out.insert(out.end(), opt.second_moment.begin(), opt.second_moment.end());
    out.push_back(static_cast<double>(opt.step));
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        d += diff * diff;
    }
    return d;
}

// Mean distance to the k nearest points of `refs`, excluding `skip` (pass -1
// to keep all). Exact search.
double knn_mean_distance(std::span<const double> query, const std::vector<double>& refs, int n_ref,
                         int dim, int k, int skip) {
    std::vector<double> best(static_cast<std::size_t>(k), 1e300);
    for (int i = 0; i < n_ref; ++i) {
        if (i == skip) continue;
        const double d =
            sq_dist(query, std::span(refs).subspan(static_cast<std::size_t>(i) * dim,
                                                   static_cast<std::size_t>(dim)));
        if (d < best.back()) {
            auto pos = std::upper_bound(best.begin(), best.end(), d);
            best.insert(pos, d);
            best.pop_back();
        }
    }
    double mean = 0.0;
    for (double d : best) mean += std::sqrt(d);
    return mean / k;
}

}  // namespace

std::vector<double> MlpConflictProbe::fingerprint() const {
    std::vector<double> out;
    append_graph_and_opt(out, t_.net(), t_.optimizer());
    return out;
}

Stage2Variant ProjConflictProbe::variant() const {
    return t_.state().lambda_g == 0.0 ? Stage2Variant::cvae : Stage2Variant::proj;
}

std::vector<double> ProjConflictProbe::fingerprint() const {
    std::vector<double> out;
    append_graph_and_opt(out, t_.state().online.decoder, t_.decoder_optimizer());
    out.insert(out.end(), t_.state().online.encoder.params.begin(),
               t_.state().online.encoder.params.end());
    out.insert(out.end(), t_.state().target.decoder.params.begin(),
               t_.state().target.decoder.params.end());
    return out;
}

std::vector<double> PlasConflictProbe::fingerprint() const {
    std::vector<double> out;
    append_graph_and_opt(out, t_.latent_policy(), t_.latent_optimizer());
    out.insert(out.end(), t_.cvae().decoder.params.begin(), t_.cvae().decoder.params.end());
    return out;
}

ConflictReport measure_conflict(const ConflictProbe& probe, int batch, std::uint64_t seed) {
    const auto before = probe.fingerprint();

    Rng rng(derive_seed(seed, "conflict/rows"));
    std::vector<int> rows(static_cast<std::size_t>(batch));
    for (auto& r : rows)
        r = static_cast<int>(rng.below(static_cast<std::uint64_t>(probe.row_count())));
    const std::uint64_t noise_seed = derive_seed(seed, "conflict/noise");

    ConflictReport rep;
    rep.variant = probe.variant();
    rep.step = probe.step();
    const auto grad = probe.fit_grad(rows, noise_seed);
    const auto delta = probe.guidance_delta(rows, noise_seed);
    if (grad.size() != delta.size())
        throw DimensionError("measure_conflict: grad/delta size mismatch");
    double dd = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) dd += grad[i] * delta[i];
    rep.dd = dd;
    rep.fit_loss_before = probe.fit_loss(rows, noise_seed, {});
    rep.fit_loss_after = probe.fit_loss(rows, noise_seed, delta);
    rep.vsd = rep.fit_loss_after - rep.fit_loss_before;

    const auto after = probe.fingerprint();
    if (before != after)
        throw ContractViolation("measure_conflict: probe mutated trainer state");
    return rep;
}

SupportReport support_distance_ratio(const OfflineDataset& ds,
                                     const std::vector<std::vector<double>>& actions, int k) {
    if (k < 1) throw DimensionError("support_distance_ratio: k must be >= 1");
    if (ds.size() < k + 1)
        throw DimensionError("support_distance_ratio: dataset smaller than k+1");
    if (static_cast<int>(actions.size()) < 256)
        throw DimensionError("support_distance_ratio: need >= 256 probe actions");

    const int n = ds.size(), d = ds.d_a;
    std::vector<double> ref(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        std::copy(ds.transitions[static_cast<std::size_t>(i)].action.begin(),
                  ds.transitions[static_cast<std::size_t>(i)].action.end(),
                  ref.begin() + static_cast<std::size_t>(i) * d);

    std::vector<double> probe_dists;
    probe_dists.reserve(actions.size());
    for (const auto& a : actions)
        probe_dists.push_back(knn_mean_distance(a, ref, n, d, k, -1));

    // Leave-one-out self-distances over a seeded subsample (exact per probe).
    const int n_self = std::min(n, 4096);
    Rng rng(derive_seed(ds.meta.seed, "support-self"));
    std::vector<double> self_dists;
    self_dists.reserve(static_cast<std::size_t>(n_self));
    for (int i = 0; i < n_self; ++i) {
        const int idx = n <= 4096 ? i : static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        self_dists.push_back(knn_mean_distance(
            std::span(ref).subspan(static_cast<std::size_t>(idx) * d, static_cast<std::size_t>(d)),
            ref, n, d, k, idx));
    }

    SupportReport rep;
    rep.k = k;
    rep.n_probe = static_cast<int>(actions.size());
    rep.boundary = quantile_nearest_rank(self_dists, 0.95);
    rep.probe_q95 = quantile_nearest_rank(probe_dists, 0.95);
    rep.ratio_q95 = rep.probe_q95 / rep.boundary;
    return rep;
}

GeometrySummary residual_geometry_summary(const OfflineDataset& ds, const AnchorBundle& bundle) {
    const int d = ds.d_a;
    const int m = std::min(ds.size(), 4096);
    Rng rng(derive_seed(ds.meta.seed, "geometry-subsample"));

    std::vector<double> residuals(static_cast<std::size_t>(m) * d);
    std::vector<double> mags(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const int idx =
            ds.size() <= 4096 ? i : static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.size())));
        const auto& tr = ds.transitions[static_cast<std::size_t>(idx)];
        const auto a_base = bundle.base_action(tr.state);
        double mag = 0.0;
        for (int j = 0; j < d; ++j) {
            const double r = tr.action[static_cast<std::size_t>(j)] - a_base[static_cast<std::size_t>(j)];
            residuals[static_cast<std::size_t>(i) * d + j] = r;
            mag += r * r;
        }
        mags[static_cast<std::size_t>(i)] = std::sqrt(mag);
    }

    // Radius: median pairwise distance / 4 over a strided pair sample.
    std::vector<double> pair_sample;
    const std::size_t total_pairs = static_cast<std::size_t>(m) * (m - 1) / 2;
    const std::size_t stride = std::max<std::size_t>(1, total_pairs / 100000);
    std::size_t pair_idx = 0;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j, ++pair_idx)
            if (pair_idx % stride == 0)
                pair_sample.push_back(std::sqrt(
                    sq_dist(std::span(residuals).subspan(static_cast<std::size_t>(i) * d,
                                                         static_cast<std::size_t>(d)),
                            std::span(residuals).subspan(static_cast<std::size_t>(j) * d,
                                                         static_cast<std::size_t>(d)))));
    const double radius = quantile_nearest_rank(pair_sample, 0.5) / 4.0;

    // Single-linkage components at the chosen radius.
    std::vector<int> label(static_cast<std::size_t>(m), -1);
    const double r2 = radius * radius;
    int n_components = 0;
    std::vector<int> stack;
    for (int i = 0; i < m; ++i) {
        if (label[static_cast<std::size_t>(i)] >= 0) continue;
        stack.assign(1, i);
        label[static_cast<std::size_t>(i)] = n_components;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            for (int j = 0; j < m; ++j) {
                if (label[static_cast<std::size_t>(j)] >= 0) continue;
                if (sq_dist(std::span(residuals).subspan(static_cast<std::size_t>(cur) * d,
                                                         static_cast<std::size_t>(d)),
                            std::span(residuals).subspan(static_cast<std::size_t>(j) * d,
                                                         static_cast<std::size_t>(d))) <= r2) {
                    label[static_cast<std::size_t>(j)] = n_components;
                    stack.push_back(j);
                }
            }
        }
        ++n_components;
    }

    std::vector<int> sizes(static_cast<std::size_t>(n_components), 0);
    for (int l : label) sizes[static_cast<std::size_t>(l)]++;
    std::sort(sizes.begin(), sizes.end(), std::greater<>());

    GeometrySummary sum;
    sum.sample_size = m;
    sum.cluster_radius = radius;
    const int min_cluster = std::max(1, m / 100);
    for (int s : sizes)
        if (s >= min_cluster) {
            sum.cluster_sizes.push_back(s);
            ++sum.mode_count_estimate;
        }
    sum.magnitude_q50 = quantile_nearest_rank(mags, 0.50);
    sum.magnitude_q90 = quantile_nearest_rank(mags, 0.90);
    sum.magnitude_q95 = quantile_nearest_rank(mags, 0.95);
    sum.magnitude_q99 = quantile_nearest_rank(mags, 0.99);
    return sum;
}

std::vector<std::vector<double>> sample_policy_actions(const OfflineDataset& ds,
                                                       const AnchorBundle& bundle,
                                                       const ResidualPolicy& policy, int n_probe,
                                                       std::uint64_t seed) {
    Rng rng(derive_seed(seed, "policy-probe"));
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(n_probe));
    for (int i = 0; i < n_probe; ++i) {
        const auto& tr =
            ds.transitions[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(ds.size())))];
        const auto a_base = bundle.base_action(tr.state);
        const auto deltas = policy.sample_deltas(bundle, tr.state, a_base, 1, rng);
        std::vector<double> a(a_base.size());
        for (std::size_t j = 0; j < a.size(); ++j)
            a[j] = std::clamp(a_base[j] + deltas[0][j], -1.0, 1.0);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace spar
