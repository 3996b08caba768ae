#include "spar/stage3.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "spar/errors.hpp"

namespace spar {

GateDecision gate_act(const AnchorBundle& bundle, const ResidualPolicy& policy,
                      const GateConfig& cfg, std::span<const double> raw_s, Rng& rng) {
    if (!bundle.frozen()) throw ContractViolation("gate_act: bundle must be frozen");
    GateDecision d;
    const auto a_base = bundle.base_action(raw_s);
    d.base_q = bundle.q_rob(raw_s, a_base, CriticSubset::rect).lcb;

    const int k = (policy.variant == Stage2Variant::mlp || policy.variant == Stage2Variant::plas)
                      ? 1
                      : cfg.k_infer;
    const auto deltas = policy.sample_deltas(bundle, raw_s, a_base, k, rng);

    d.candidates.reserve(deltas.size());
    int best = 0;
    for (std::size_t j = 0; j < deltas.size(); ++j) {
        GateCandidate cand;
        cand.action.resize(a_base.size());
        for (std::size_t t = 0; t < a_base.size(); ++t)
            cand.action[t] = std::clamp(a_base[t] + deltas[j][t], -1.0, 1.0);
        cand.delta_q = bundle.q_rob(raw_s, cand.action, CriticSubset::rect).lcb - d.base_q;
        cand.rel_gain = cand.delta_q / (std::abs(d.base_q) + cfg.epsilon);
        d.candidates.push_back(std::move(cand));
        if (d.candidates[j].delta_q > d.candidates[static_cast<std::size_t>(best)].delta_q)
            best = static_cast<int>(j);
    }
    d.best_index = best;
    const auto& top = d.candidates[static_cast<std::size_t>(best)];
    d.accepted = top.delta_q > cfg.eta_abs && top.rel_gain > cfg.eta_rel;
    d.chosen_action = d.accepted ? top.action : a_base;
    return d;
}

EvalResult evaluate_policy(const OracleEnv& env, const AnchorBundle& bundle,
                           const ResidualPolicy* policy, const GateConfig& cfg, int episodes,
                           std::uint64_t seed, std::vector<EvalRecord>* records) {
    if (episodes < 1) throw DimensionError("evaluate_policy: episodes must be >= 1");
    EvalResult res;
    res.episodes = episodes;
    Rng env_rng(derive_seed(seed, "eval/env"));
    Rng gate_rng(derive_seed(seed, "eval/gate"));

    int accepted = 0, steps = 0, successes = 0;
    double total_return = 0.0, total_regret = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        auto s = env.initial_state(env_rng);
        double ep_return = 0.0;
        bool success = false;
        for (int t = 0; t < env.horizon(); ++t) {
            std::vector<double> action;
            bool step_accepted = false;
            double dq = 0.0, rel = 0.0;
            if (policy) {
                auto dec = gate_act(bundle, *policy, cfg, s, gate_rng);
                action = dec.chosen_action;
                step_accepted = dec.accepted;
                if (!dec.candidates.empty()) {
                    dq = dec.candidates[static_cast<std::size_t>(dec.best_index)].delta_q;
                    rel = dec.candidates[static_cast<std::size_t>(dec.best_index)].rel_gain;
                }
            } else {
                action = bundle.base_action(s);
            }
            if (records) {
                EvalRecord rec;
                rec.step = steps;
                rec.accepted = step_accepted;
                rec.delta_q = dq;
                rec.rel_gain = rel;
                rec.action = action;
                records->push_back(std::move(rec));
            }
            if (!env.episodic())
                total_regret += env.optimal_value(s) - env.q_star(s, action);
            accepted += step_accepted ? 1 : 0;
            ++steps;
            auto sr = env.step(s, action, env_rng);
            ep_return += sr.reward;
            if (sr.done) {
                success = true;
                break;
            }
            s = sr.next_state;
        }
        total_return += ep_return;
        successes += success ? 1 : 0;
    }
    res.mean_return = total_return / episodes;
    res.regret = env.episodic() ? 0.0 : total_regret / steps;
    res.accept_rate = steps > 0 ? static_cast<double>(accepted) / steps : 0.0;
    res.success_rate = static_cast<double>(successes) / episodes;
    res.steps = steps;
    return res;
}

void save_eval_records(const std::vector<EvalRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("eval records: cannot open '" + path + "'");
    auto put_u32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    for (const auto& r : records) {
        const std::uint32_t len =
            4 + 1 + 8 + 8 + 4 * static_cast<std::uint32_t>(r.action.size());
        put_u32(len);
        put_u32(static_cast<std::uint32_t>(r.step));
        const std::uint8_t acc = r.accepted ? 1 : 0;
        f.write(reinterpret_cast<const char*>(&acc), 1);
        f.write(reinterpret_cast<const char*>(&r.delta_q), 8);
        f.write(reinterpret_cast<const char*>(&r.rel_gain), 8);
        for (double v : r.action) {
            const float fv = static_cast<float>(v);
            f.write(reinterpret_cast<const char*>(&fv), 4);
        }
    }
    if (!f) throw IoError("eval records: write failed for '" + path + "'");
}

std::vector<EvalRecord> load_eval_records(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("eval records: cannot open '" + path + "'");
    std::vector<EvalRecord> out;
    while (true) {
        std::uint32_t len = 0;
        if (!f.read(reinterpret_cast<char*>(&len), 4)) break;
        EvalRecord r;
        std::uint32_t step = 0;
        std::uint8_t acc = 0;
        f.read(reinterpret_cast<char*>(&step), 4);
        f.read(reinterpret_cast<char*>(&acc), 1);
        f.read(reinterpret_cast<char*>(&r.delta_q), 8);
        f.read(reinterpret_cast<char*>(&r.rel_gain), 8);
        const std::uint32_t n_action = (len - 21) / 4;
        r.action.resize(n_action);
        for (auto& v : r.action) {
            float fv = 0.0f;
            f.read(reinterpret_cast<char*>(&fv), 4);
            v = fv;
        }
        if (!f) throw IoError("eval records: truncated file '" + path + "'");
        r.step = static_cast<int>(step);
        r.accepted = acc != 0;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace spar
