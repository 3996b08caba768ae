#include "spar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "spar/errors.hpp"

namespace spar {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'R', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + 4);
}

void append_f32(std::vector<std::uint8_t>& out, double v) {
    const float f = static_cast<float>(v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&f);
    out.insert(out.end(), p, p + 4);
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;
    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n) throw IoError("dataset: truncated data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, p, 4);
        p += 4;
        return v;
    }
    float f32() {
        need(4);
        float v;
        std::memcpy(&v, p, 4);
        p += 4;
        return v;
    }
};

}  // namespace

void OfflineDataset::normalize_state(std::span<const double> raw, std::span<double> out) const {
    for (int i = 0; i < d_s; ++i)
        out[static_cast<std::size_t>(i)] =
            (raw[static_cast<std::size_t>(i)] - state_mean[static_cast<std::size_t>(i)]) /
            state_std[static_cast<std::size_t>(i)];
}

std::vector<double> OfflineDataset::normalize_state(std::span<const double> raw) const {
    std::vector<double> out(static_cast<std::size_t>(d_s));
    normalize_state(raw, out);
    return out;
}

void compute_normalization(OfflineDataset& ds) {
    ds.state_mean.assign(static_cast<std::size_t>(ds.d_s), 0.0);
    ds.state_std.assign(static_cast<std::size_t>(ds.d_s), 0.0);
    const double inv_n = 1.0 / ds.size();
    for (const auto& tr : ds.transitions)
        for (int i = 0; i < ds.d_s; ++i)
            ds.state_mean[static_cast<std::size_t>(i)] += tr.state[static_cast<std::size_t>(i)] * inv_n;
    for (const auto& tr : ds.transitions)
        for (int i = 0; i < ds.d_s; ++i) {
            const double d =
                tr.state[static_cast<std::size_t>(i)] - ds.state_mean[static_cast<std::size_t>(i)];
            ds.state_std[static_cast<std::size_t>(i)] += d * d * inv_n;
        }
    for (auto& v : ds.state_std) v = std::max(std::sqrt(v), 1e-6);
}

OfflineDataset generate_dataset(const OracleEnv& env, BehaviorTier behavior, int n,
                                std::uint64_t seed) {
    if (n < 1000) throw DimensionError("generate_dataset: n must be >= 1000");
    OfflineDataset ds;
    ds.d_s = env.state_dim();
    ds.d_a = env.action_dim();
    ds.transitions.reserve(static_cast<std::size_t>(n));
    ds.meta.env_name = to_string(env.name());
    ds.meta.behavior_desc = to_string(behavior);
    ds.meta.seed = seed;
    ds.meta.size = static_cast<std::uint32_t>(n);

    Rng rng(derive_seed(seed, "dataset/" + to_string(env.name())));
    const double shift = env.reward_shift();

    while (ds.size() < n) {
        auto ctx = env.behavior_reset(behavior, rng);
        auto s = env.initial_state(rng);
        for (int t = 0; t < env.horizon() && ds.size() < n; ++t) {
            auto a = env.behavior_action(behavior, ctx, s, rng);
            auto res = env.step(s, a, rng);
            Transition tr;
            tr.state = s;
            tr.action = std::move(a);
            tr.reward = res.reward + shift;
            tr.next_state = res.next_state;
            tr.done = res.done;
            ds.transitions.push_back(std::move(tr));
            if (res.done) break;
            s = res.next_state;
        }
    }
    compute_normalization(ds);
    return ds;
}

Histogram make_histogram(std::span<const double> values, int bins) {
    Histogram h;
    if (values.empty() || bins <= 0) return h;
    h.lo = *std::min_element(values.begin(), values.end());
    h.hi = *std::max_element(values.begin(), values.end());
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = h.hi > h.lo ? (h.hi - h.lo) / bins : 1.0;
    for (double v : values) {
        int b = static_cast<int>((v - h.lo) / width);
        b = std::clamp(b, 0, bins - 1);
        h.counts[static_cast<std::size_t>(b)]++;
    }
    return h;
}

double quantile_nearest_rank(std::vector<double> values, double q) {
    if (values.empty()) throw DimensionError("quantile: empty sample");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(q * n));
    rank = std::min(std::max<std::size_t>(rank, 1), values.size());
    return values[rank - 1];
}

ResidualStats residual_stats(const OfflineDataset& ds, const nn::ParamGraph& base, double rho) {
    if (ds.size() == 0) throw DimensionError("residual_stats: empty dataset");
    if (!(rho > 0.0 && rho < 1.0)) throw DimensionError("residual_stats: rho must be in (0,1)");
    const bool gaussian = base.output_dim() == 2 * ds.d_a;
    if (!gaussian && base.output_dim() != ds.d_a)
        throw DimensionError("residual_stats: base output dim incompatible with dataset");

    std::vector<double> mags;
    mags.reserve(static_cast<std::size_t>(ds.size()));
    std::vector<double> norm_s(static_cast<std::size_t>(ds.d_s));
    for (const auto& tr : ds.transitions) {
        ds.normalize_state(tr.state, norm_s);
        auto out = nn::forward(base, norm_s);
        double m = 0.0;
        for (int i = 0; i < ds.d_a; ++i) {
            const double diff = tr.action[static_cast<std::size_t>(i)] - out[static_cast<std::size_t>(i)];
            m += diff * diff;
        }
        mags.push_back(std::sqrt(m));
    }

    ResidualStats st;
    st.delta_rho = quantile_nearest_rank(mags, 1.0 - rho);
    st.residual_magnitudes = make_histogram(mags, 64);

    // Exact diameter for small datasets, seeded subsample otherwise.
    std::vector<const std::vector<double>*> pts;
    if (ds.size() <= 4096) {
        for (const auto& tr : ds.transitions) pts.push_back(&tr.action);
    } else {
        Rng rng(derive_seed(ds.meta.seed, "diameter-subsample"));
        for (int i = 0; i < 4096; ++i)
            pts.push_back(&ds.transitions[rng.below(static_cast<std::uint64_t>(ds.size()))].action);
    }
    double diam_sq = 0.0;
    std::vector<double> pair_dists;
    const std::size_t total_pairs = pts.size() * (pts.size() - 1) / 2;
    const std::size_t stride = std::max<std::size_t>(1, total_pairs / 200000);
    pair_dists.reserve(total_pairs / stride + 1);
    std::size_t pair_index = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j, ++pair_index) {
            double d = 0.0;
            for (int k = 0; k < ds.d_a; ++k) {
                const double diff = (*pts[i])[static_cast<std::size_t>(k)] -
                                    (*pts[j])[static_cast<std::size_t>(k)];
                d += diff * diff;
            }
            diam_sq = std::max(diam_sq, d);
            if (pair_index % stride == 0) pair_dists.push_back(std::sqrt(d));
        }
    }
    st.action_diameter = std::sqrt(diam_sq);
    st.pairwise_action_distances = make_histogram(pair_dists, 64);
    return st;
}

std::vector<std::uint8_t> serialize_dataset(const OfflineDataset& ds) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    append_u32(out, kVersion);
    append_u32(out, static_cast<std::uint32_t>(ds.d_s));
    append_u32(out, static_cast<std::uint32_t>(ds.d_a));
    append_u32(out, static_cast<std::uint32_t>(ds.size()));
    for (const auto& tr : ds.transitions) {
        for (double v : tr.state) append_f32(out, v);
        for (double v : tr.action) append_f32(out, v);
        append_f32(out, tr.reward);
        for (double v : tr.next_state) append_f32(out, v);
        append_f32(out, tr.done ? 1.0 : 0.0);
    }
    for (double v : ds.state_mean) append_f32(out, v);
    for (double v : ds.state_std) append_f32(out, v);

    nlohmann::json meta = {{"env_name", ds.meta.env_name},
                           {"behavior_desc", ds.meta.behavior_desc},
                           {"seed", ds.meta.seed},
                           {"size", ds.meta.size}};
    const std::string meta_str = meta.dump();
    append_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out.insert(out.end(), meta_str.begin(), meta_str.end());
    return out;
}

void save_dataset(const OfflineDataset& ds, const std::string& path) {
    const auto bytes = serialize_dataset(ds);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("dataset: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("dataset: write failed for '" + path + "'");
}

OfflineDataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("dataset: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    Reader r{bytes.data(), bytes.data() + bytes.size()};
    r.need(8);
    if (std::memcmp(r.p, kMagic, 8) != 0) throw IoError("dataset: bad magic in '" + path + "'");
    r.p += 8;
    if (r.u32() != kVersion) throw IoError("dataset: unsupported version");
    OfflineDataset ds;
    ds.d_s = static_cast<int>(r.u32());
    ds.d_a = static_cast<int>(r.u32());
    const std::uint32_t n = r.u32();
    ds.transitions.resize(n);
    for (auto& tr : ds.transitions) {
        tr.state.resize(static_cast<std::size_t>(ds.d_s));
        for (auto& v : tr.state) v = r.f32();
        tr.action.resize(static_cast<std::size_t>(ds.d_a));
        for (auto& v : tr.action) v = r.f32();
        tr.reward = r.f32();
        tr.next_state.resize(static_cast<std::size_t>(ds.d_s));
        for (auto& v : tr.next_state) v = r.f32();
        tr.done = r.f32() != 0.0f;
    }
    ds.state_mean.resize(static_cast<std::size_t>(ds.d_s));
    for (auto& v : ds.state_mean) v = r.f32();
    ds.state_std.resize(static_cast<std::size_t>(ds.d_s));
    for (auto& v : ds.state_std) v = r.f32();
    const std::uint32_t meta_len = r.u32();
    r.need(meta_len);
    const std::string meta_str(reinterpret_cast<const char*>(r.p), meta_len);
    const auto meta = nlohmann::json::parse(meta_str);
    ds.meta.env_name = meta.value("env_name", "");
    ds.meta.behavior_desc = meta.value("behavior_desc", "");
    ds.meta.seed = meta.value("seed", 0ull);
    ds.meta.size = meta.value("size", n);
    return ds;
}

}  // namespace spar
