#include "spar/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spar/errors.hpp"

namespace spar {

namespace {

constexpr double kSigmaFloor = 1e-6;

std::vector<double> encode_arch(const nn::ParamGraph& g) {
    std::vector<double> out;
    out.push_back(static_cast<double>(g.layer_sizes.size()));
    for (int s : g.layer_sizes) out.push_back(static_cast<double>(s));
    for (auto a : g.activations) out.push_back(static_cast<double>(a));
    return out;
}

nn::ParamGraph decode_arch(const std::vector<double>& arch, const std::vector<double>& params) {
    nn::ParamGraph g;
    const auto n_sizes = static_cast<std::size_t>(arch.at(0));
    for (std::size_t i = 0; i < n_sizes; ++i)
        g.layer_sizes.push_back(static_cast<int>(arch.at(1 + i)));
    for (std::size_t i = 0; i + 1 < n_sizes; ++i)
        g.activations.push_back(static_cast<nn::Act>(static_cast<int>(arch.at(1 + n_sizes + i))));
    if (static_cast<int>(params.size()) != nn::param_count_for(g.layer_sizes))
        throw IoError("checkpoint: parameter count does not match architecture");
    g.params = params;
    return g;
}

void put_graph(Checkpoint& ck, const std::string& name, const nn::ParamGraph& g) {
    ck.put(name, g.params);
    ck.put(name + ".arch", encode_arch(g));
}

nn::ParamGraph get_graph(const Checkpoint& ck, const std::string& name) {
    return decode_arch(ck.get(name + ".arch"), ck.get(name));
}

}  // namespace

double expectile_loss(double residual, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw DimensionError("expectile_loss: tau must be in (0,1)");
    const double w = residual < 0.0 ? 1.0 - tau : tau;
    return w * residual * residual;
}

AnchorBundle::AnchorBundle(nn::ParamGraph base_policy, bool gaussian, CriticEnsemble critics,
                           nn::ParamGraph value_net, double lambda_u,
                           std::vector<double> state_mean, std::vector<double> state_std)
    : base_policy_(std::move(base_policy)),
      gaussian_(gaussian),
      critics_(std::move(critics)),
      value_net_(std::move(value_net)),
      lambda_u_(lambda_u),
      state_mean_(std::move(state_mean)),
      state_std_(std::move(state_std)) {
    action_dim_ = gaussian_ ? base_policy_.output_dim() / 2 : base_policy_.output_dim();
}

nn::ParamGraph& AnchorBundle::mutable_base_policy() {
    if (frozen_) throw ContractViolation("AnchorBundle is frozen: base policy is immutable");
    return base_policy_;
}

CriticEnsemble& AnchorBundle::mutable_critics() {
    if (frozen_) throw ContractViolation("AnchorBundle is frozen: critics are immutable");
    return critics_;
}

nn::ParamGraph& AnchorBundle::mutable_value_net() {
    if (frozen_) throw ContractViolation("AnchorBundle is frozen: value net is immutable");
    return value_net_;
}

std::vector<double> AnchorBundle::normalize_state(std::span<const double> raw_s) const {
    std::vector<double> out(state_mean_.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (raw_s[i] - state_mean_[i]) / state_std_[i];
    return out;
}

std::vector<double> AnchorBundle::base_action(std::span<const double> raw_s) const {
    const auto s = normalize_state(raw_s);
    auto out = nn::forward(base_policy_, s);
    std::vector<double> a(static_cast<std::size_t>(action_dim_));
    if (gaussian_)
        nn::GaussianHead::mean(out, a);
    else
        std::copy(out.begin(), out.end(), a.begin());
    for (auto& v : a) v = std::clamp(v, -1.0, 1.0);
    return a;
}

QStats AnchorBundle::subset_stats(const std::vector<int>& idx,
                                  std::span<const double> input) const {
    double mean = 0.0;
    std::vector<double> qs(idx.size());
    for (std::size_t m = 0; m < idx.size(); ++m) {
        qs[m] = nn::forward(critics_.members[static_cast<std::size_t>(idx[m])], input)[0];
        mean += qs[m];
    }
    mean /= static_cast<double>(idx.size());
    double var = 0.0;
    for (double q : qs) var += (q - mean) * (q - mean);
    var /= static_cast<double>(idx.size());
    QStats st;
    st.mean = mean;
    st.std_dev = std::sqrt(var);
    st.lcb = mean - lambda_u_ * st.std_dev;
    return st;
}

QStats AnchorBundle::q_rob(std::span<const double> raw_s, std::span<const double> a,
                           CriticSubset subset) const {
    const auto s = normalize_state(raw_s);
    std::vector<double> input;
    input.reserve(s.size() + a.size());
    input.insert(input.end(), s.begin(), s.end());
    input.insert(input.end(), a.begin(), a.end());
    return subset_stats(critics_.subset(subset), input);
}

double AnchorBundle::normalized_advantage(std::span<const double> raw_s,
                                          std::span<const double> a,
                                          std::span<const double> a_base) const {
    const auto at = q_rob(raw_s, a, CriticSubset::guide);
    const auto base = q_rob(raw_s, a_base, CriticSubset::guide);
    const double sigma = std::max(base.std_dev, kSigmaFloor);
    return (at.lcb - base.lcb) / sigma;
}

void AnchorBundle::lcb_batch(CriticSubset subset, const double* inputs, int batch,
                             double* lcb_out, double* grad_action) const {
    const auto& idx = critics_.subset(subset);
    const int m_count = static_cast<int>(idx.size());
    const int d_in = static_cast<int>(state_mean_.size()) + action_dim_;
    const int d_s = static_cast<int>(state_mean_.size());

    std::vector<nn::BatchTrace> traces(static_cast<std::size_t>(m_count));
    std::vector<std::vector<double>> grads;
    if (grad_action) grads.resize(static_cast<std::size_t>(m_count));

    for (int m = 0; m < m_count; ++m) {
        const auto& net = critics_.members[static_cast<std::size_t>(idx[static_cast<std::size_t>(m)])];
        nn::forward_batch(net, inputs, batch, traces[static_cast<std::size_t>(m)]);
        if (grad_action) {
            auto& gx = grads[static_cast<std::size_t>(m)];
            gx.assign(static_cast<std::size_t>(batch) * d_in, 0.0);
            std::vector<double> upstream(static_cast<std::size_t>(batch), 1.0);
            std::vector<double> scratch(net.params.size(), 0.0);
            nn::backward_batch(net, traces[static_cast<std::size_t>(m)], inputs, upstream.data(),
                               batch, scratch.data(), gx.data());
        }
    }

    for (int b = 0; b < batch; ++b) {
        double mean = 0.0;
        for (int m = 0; m < m_count; ++m)
            mean += traces[static_cast<std::size_t>(m)].output()[b];
        mean /= m_count;
        double var = 0.0;
        for (int m = 0; m < m_count; ++m) {
            const double d = traces[static_cast<std::size_t>(m)].output()[b] - mean;
            var += d * d;
        }
        var /= m_count;
        const double sd = std::sqrt(var);
        lcb_out[b] = mean - lambda_u_ * sd;
        if (!grad_action) continue;
        double* ga = grad_action + static_cast<std::size_t>(b) * action_dim_;
        for (int j = 0; j < action_dim_; ++j) {
            double gmean = 0.0;
            for (int m = 0; m < m_count; ++m)
                gmean +=
                    grads[static_cast<std::size_t>(m)][static_cast<std::size_t>(b) * d_in + d_s + j];
            gmean /= m_count;
            double gsd = 0.0;
            if (sd > kSigmaFloor) {
                for (int m = 0; m < m_count; ++m) {
                    const double qd = traces[static_cast<std::size_t>(m)].output()[b] - mean;
                    gsd += qd *
                           grads[static_cast<std::size_t>(m)]
                                [static_cast<std::size_t>(b) * d_in + d_s + j];
                }
                gsd /= (m_count * sd);
            }
            ga[j] = gmean - lambda_u_ * gsd;
        }
    }
}

void AnchorBundle::stats_batch(CriticSubset subset, const double* inputs, int batch,
                               double* mean_out, double* std_out) const {
    const auto& idx = critics_.subset(subset);
    const int m_count = static_cast<int>(idx.size());
    std::vector<nn::BatchTrace> traces(static_cast<std::size_t>(m_count));
    for (int m = 0; m < m_count; ++m)
        nn::forward_batch(critics_.members[static_cast<std::size_t>(idx[static_cast<std::size_t>(m)])],
                          inputs, batch, traces[static_cast<std::size_t>(m)]);
    for (int b = 0; b < batch; ++b) {
        double mean = 0.0;
        for (int m = 0; m < m_count; ++m)
            mean += traces[static_cast<std::size_t>(m)].output()[b];
        mean /= m_count;
        double var = 0.0;
        for (int m = 0; m < m_count; ++m) {
            const double d = traces[static_cast<std::size_t>(m)].output()[b] - mean;
            var += d * d;
        }
        mean_out[b] = mean;
        std_out[b] = std::sqrt(var / m_count);
    }
}

std::vector<double> AnchorBundle::parameter_snapshot() const {
    std::vector<double> out;
    auto append = [&out](const nn::ParamGraph& g) {
        out.insert(out.end(), g.params.begin(), g.params.end());
    };
    append(base_policy_);
    for (const auto& c : critics_.members) append(c);
    for (const auto& t : critics_.targets) append(t);
    append(value_net_);
    return out;
}

Checkpoint AnchorBundle::to_checkpoint() const {
    Checkpoint ck;
    put_graph(ck, "base_policy", base_policy_);
    for (int i = 0; i < critics_.size(); ++i) {
        put_graph(ck, "critic_" + std::to_string(i), critics_.members[static_cast<std::size_t>(i)]);
        put_graph(ck, "target_" + std::to_string(i), critics_.targets[static_cast<std::size_t>(i)]);
    }
    put_graph(ck, "value_net", value_net_);
    ck.put("norm.mean", state_mean_);
    ck.put("norm.std", state_std_);
    ck.put_scalar("meta.lambda_u", lambda_u_);
    ck.put_scalar("meta.expectile_tau", critics_.expectile_tau);
    ck.put_scalar("meta.gamma", critics_.gamma);
    ck.put_scalar("meta.base_gaussian", gaussian_ ? 1.0 : 0.0);
    std::vector<double> subsets;
    for (const auto& sub : critics_.subsets)
        for (int i : sub) subsets.push_back(static_cast<double>(i));
    ck.put("meta.subsets", subsets);
    return ck;
}

AnchorBundle AnchorBundle::from_checkpoint(const Checkpoint& ck) {
    CriticEnsemble ens;
    for (int i = 0;; ++i) {
        const std::string name = "critic_" + std::to_string(i);
        if (!ck.has(name)) break;
        ens.members.push_back(get_graph(ck, name));
        ens.targets.push_back(get_graph(ck, "target_" + std::to_string(i)));
    }
    const auto& subsets = ck.get("meta.subsets");
    if (subsets.size() % 3 != 0) throw IoError("checkpoint: malformed critic subsets");
    const std::size_t per = subsets.size() / 3;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < per; ++i)
            ens.subsets[s].push_back(static_cast<int>(subsets[s * per + i]));
    ens.gamma = ck.get_scalar("meta.gamma");
    ens.expectile_tau = ck.get_scalar("meta.expectile_tau");

    AnchorBundle b(get_graph(ck, "base_policy"), ck.get_scalar("meta.base_gaussian") != 0.0,
                   std::move(ens), get_graph(ck, "value_net"), ck.get_scalar("meta.lambda_u"),
                   ck.get("norm.mean"), ck.get("norm.std"));
    b.freeze();
    return b;
}

Stage1Trainer::Stage1Trainer(const OfflineDataset& ds, Stage1Config cfg, Stage1Hooks hooks)
    : ds_(ds),
      cfg_(std::move(cfg)),
      hooks_(std::move(hooks)),
      data_rng_(derive_seed(cfg_.seed, "stage1/data")) {
    const int d_s = ds.d_s, d_a = ds.d_a;
    const int policy_out = cfg_.gaussian_policy ? 2 * d_a : d_a;
    base_ = nn::make_mlp(d_s, cfg_.hidden, policy_out, derive_seed(cfg_.seed, "stage1/base"));
    value_ = nn::make_mlp(d_s, cfg_.hidden, 1, derive_seed(cfg_.seed, "stage1/value"));
    for (int i = 0; i < cfg_.num_critics; ++i) {
        critics_.push_back(nn::make_mlp(d_s + d_a, cfg_.hidden, 1,
                                        derive_seed(cfg_.seed, "stage1/critic" + std::to_string(i))));
        targets_.push_back(critics_.back());
    }
    base_opt_ = nn::make_adam(base_.param_count(), cfg_.learning_rate, cfg_.grad_clip);
    value_opt_ = nn::make_adam(value_.param_count(), cfg_.learning_rate, cfg_.grad_clip);
    for (const auto& c : critics_)
        critic_opts_.push_back(nn::make_adam(c.param_count(), cfg_.learning_rate, cfg_.grad_clip));
    critic_traces_.resize(static_cast<std::size_t>(cfg_.num_critics));
    target_traces_.resize(static_cast<std::size_t>(cfg_.num_critics));
}

void Stage1Trainer::assemble_batch() {
    const int B = cfg_.batch;
    const int d_s = ds_.d_s, d_a = ds_.d_a;
    batch_idx_.resize(static_cast<std::size_t>(B));
    xs_.resize(static_cast<std::size_t>(B) * d_s);
    xa_.resize(static_cast<std::size_t>(B) * d_a);
    xs2_.resize(static_cast<std::size_t>(B) * d_s);
    rewards_.resize(static_cast<std::size_t>(B));
    not_done_.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const auto i = static_cast<std::size_t>(data_rng_.below(static_cast<std::uint64_t>(ds_.size())));
        batch_idx_[static_cast<std::size_t>(b)] = static_cast<int>(i);
        const auto& tr = ds_.transitions[i];
        ds_.normalize_state(tr.state, std::span(xs_).subspan(static_cast<std::size_t>(b) * d_s, d_s));
        std::copy(tr.action.begin(), tr.action.end(), xa_.begin() + static_cast<std::size_t>(b) * d_a);
        ds_.normalize_state(tr.next_state,
                            std::span(xs2_).subspan(static_cast<std::size_t>(b) * d_s, d_s));
        rewards_[static_cast<std::size_t>(b)] = tr.reward;
        not_done_[static_cast<std::size_t>(b)] = tr.done ? 0.0 : 1.0;
    }
}

void Stage1Trainer::step() {
    const int B = cfg_.batch;
    const int d_s = ds_.d_s, d_a = ds_.d_a;
    const int M = cfg_.num_critics;
    assemble_batch();

    // --- behavior cloning update ---
    nn::forward_batch(base_, xs_.data(), B, base_trace_);
    const int p_out = base_.output_dim();
    upstream_.assign(static_cast<std::size_t>(B) * p_out, 0.0);
    double bc_loss = 0.0;
    if (cfg_.gaussian_policy) {
        for (int b = 0; b < B; ++b) {
            std::span<const double> raw(base_trace_.output() + static_cast<std::size_t>(b) * p_out,
                                        static_cast<std::size_t>(p_out));
            std::span<const double> act(xa_.data() + static_cast<std::size_t>(b) * d_a,
                                        static_cast<std::size_t>(d_a));
            std::span<double> grad(upstream_.data() + static_cast<std::size_t>(b) * p_out,
                                   static_cast<std::size_t>(p_out));
            bc_loss += nn::GaussianHead::nll(raw, act, grad);
        }
        bc_loss /= B;
        for (auto& g : upstream_) g /= B;
    } else {
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < d_a; ++j) {
                const double diff = base_trace_.output()[static_cast<std::size_t>(b) * d_a + j] -
                                    xa_[static_cast<std::size_t>(b) * d_a + j];
                bc_loss += diff * diff / B;
                upstream_[static_cast<std::size_t>(b) * d_a + j] = 2.0 * diff / B;
            }
    }

    // --- in-sample TD target: y = r + gamma * mean_i Q_target_i(s', pi_base(s')) ---
    nn::BatchTrace next_trace;
    nn::forward_batch(base_, xs2_.data(), B, next_trace);
    base_out2_.resize(static_cast<std::size_t>(B) * d_a);
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < d_a; ++j)
            base_out2_[static_cast<std::size_t>(b) * d_a + j] = std::clamp(
                next_trace.output()[static_cast<std::size_t>(b) * p_out + j], -1.0, 1.0);

    sa2_.resize(static_cast<std::size_t>(B) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        std::memcpy(sa2_.data() + static_cast<std::size_t>(b) * (d_s + d_a),
                    xs2_.data() + static_cast<std::size_t>(b) * d_s, sizeof(double) * d_s);
        std::memcpy(sa2_.data() + static_cast<std::size_t>(b) * (d_s + d_a) + d_s,
                    base_out2_.data() + static_cast<std::size_t>(b) * d_a, sizeof(double) * d_a);
    }
    if (hooks_.critic_query)
        hooks_.critic_query("td_target", xs2_.data(), base_out2_.data(), B, d_s, d_a);

    y_.assign(static_cast<std::size_t>(B), 0.0);
    for (int m = 0; m < M; ++m) {
        nn::forward_batch(targets_[static_cast<std::size_t>(m)], sa2_.data(), B,
                          target_traces_[static_cast<std::size_t>(m)]);
        for (int b = 0; b < B; ++b)
            y_[static_cast<std::size_t>(b)] +=
                target_traces_[static_cast<std::size_t>(m)].output()[b] / M;
    }
    for (int b = 0; b < B; ++b)
        y_[static_cast<std::size_t>(b)] =
            rewards_[static_cast<std::size_t>(b)] +
            cfg_.gamma * not_done_[static_cast<std::size_t>(b)] * y_[static_cast<std::size_t>(b)];

    // --- critic updates (expectile regression toward y) ---
    sa_.resize(static_cast<std::size_t>(B) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        std::memcpy(sa_.data() + static_cast<std::size_t>(b) * (d_s + d_a),
                    xs_.data() + static_cast<std::size_t>(b) * d_s, sizeof(double) * d_s);
        std::memcpy(sa_.data() + static_cast<std::size_t>(b) * (d_s + d_a) + d_s,
                    xa_.data() + static_cast<std::size_t>(b) * d_a, sizeof(double) * d_a);
    }

    double critic_loss = 0.0;
    std::vector<double> critic_upstream(static_cast<std::size_t>(B));
    for (int m = 0; m < M; ++m) {
        auto& net = critics_[static_cast<std::size_t>(m)];
        auto& trace = critic_traces_[static_cast<std::size_t>(m)];
        nn::forward_batch(net, sa_.data(), B, trace);
        for (int b = 0; b < B; ++b) {
            const double u = y_[static_cast<std::size_t>(b)] - trace.output()[b];
            const double w = u < 0.0 ? 1.0 - cfg_.expectile_tau : cfg_.expectile_tau;
            critic_loss += w * u * u / (B * M);
            critic_upstream[static_cast<std::size_t>(b)] = -2.0 * w * u / B;
        }
        grad_buf_.assign(net.params.size(), 0.0);
        nn::backward_batch(net, trace, sa_.data(), critic_upstream.data(), B, grad_buf_.data(),
                           nullptr);
        if (std::isfinite(critic_loss))
            nn::adam_step_inplace(critic_opts_[static_cast<std::size_t>(m)], net.params, grad_buf_);
    }

    // --- value net: expectile regression of mean data-subset target Q toward V ---
    if (hooks_.critic_query)
        hooks_.critic_query("value_target", xs_.data(), xa_.data(), B, d_s, d_a);
    std::vector<double> q_sa(static_cast<std::size_t>(B), 0.0);
    const int n_data = std::min(4, M);
    nn::BatchTrace tmp_trace;
    for (int m = 0; m < n_data; ++m) {
        nn::forward_batch(targets_[static_cast<std::size_t>(m)], sa_.data(), B, tmp_trace);
        for (int b = 0; b < B; ++b)
            q_sa[static_cast<std::size_t>(b)] += tmp_trace.output()[b] / n_data;
    }
    nn::forward_batch(value_, xs_.data(), B, value_trace_);
    double value_loss = 0.0;
    std::vector<double> value_upstream(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const double u = q_sa[static_cast<std::size_t>(b)] - value_trace_.output()[b];
        const double w = u < 0.0 ? 1.0 - cfg_.value_expectile : cfg_.value_expectile;
        value_loss += w * u * u / B;
        value_upstream[static_cast<std::size_t>(b)] = -2.0 * w * u / B;
    }

    const bool finite =
        std::isfinite(bc_loss) && std::isfinite(critic_loss) && std::isfinite(value_loss);
    if (!finite) {
        if (++consecutive_errors_ >= cfg_.max_consecutive_errors)
            throw TrainingDivergence("stage1: " + std::to_string(consecutive_errors_) +
                                     " consecutive non-finite loss batches at step " +
                                     std::to_string(step_ + 1));
    } else {
        consecutive_errors_ = 0;
        grad_buf_.assign(base_.params.size(), 0.0);
        nn::backward_batch(base_, base_trace_, xs_.data(), upstream_.data(), B, grad_buf_.data(),
                           nullptr);
        nn::adam_step_inplace(base_opt_, base_.params, grad_buf_);

        grad_buf_.assign(value_.params.size(), 0.0);
        nn::backward_batch(value_, value_trace_, xs_.data(), value_upstream.data(), B,
                           grad_buf_.data(), nullptr);
        nn::adam_step_inplace(value_opt_, value_.params, grad_buf_);

        for (int m = 0; m < M; ++m)
            nn::polyak_update_inplace(targets_[static_cast<std::size_t>(m)].params,
                                      critics_[static_cast<std::size_t>(m)].params,
                                      cfg_.polyak_tau);
    }

    ++step_;
    last_bc_loss_ = bc_loss;
    last_critic_loss_ = critic_loss;
    last_value_loss_ = value_loss;
    if (hooks_.on_step) hooks_.on_step(step_, bc_loss, critic_loss, value_loss);
}

void Stage1Trainer::run(int steps) {
    for (int i = 0; i < steps; ++i) step();
}

std::vector<double> Stage1Trainer::base_action(std::span<const double> raw_s) const {
    std::vector<double> s(static_cast<std::size_t>(ds_.d_s));
    ds_.normalize_state(raw_s, s);
    auto out = nn::forward(base_, s);
    std::vector<double> a(static_cast<std::size_t>(ds_.d_a));
    if (cfg_.gaussian_policy)
        nn::GaussianHead::mean(out, a);
    else
        std::copy(out.begin(), out.end(), a.begin());
    for (auto& v : a) v = std::clamp(v, -1.0, 1.0);
    return a;
}

AnchorBundle Stage1Trainer::finish() {
    CriticEnsemble ens;
    ens.members = std::move(critics_);
    ens.targets = std::move(targets_);
    ens.gamma = cfg_.gamma;
    ens.expectile_tau = cfg_.expectile_tau;
    // Fixed subsets: data and guide are disjoint; the rectification subset
    // reuses the two spare critics plus two data critics so that it shares
    // nothing with the guidance signal it double-checks.
    if (cfg_.num_critics >= 10) {
        ens.subsets[0] = {0, 1, 2, 3};
        ens.subsets[1] = {4, 5, 6, 7};
        ens.subsets[2] = {8, 9, 0, 1};
    } else {
        for (auto& sub : ens.subsets)
            for (int i = 0; i < cfg_.num_critics; ++i) sub.push_back(i);
    }
    AnchorBundle bundle(std::move(base_), cfg_.gaussian_policy, std::move(ens), std::move(value_),
                        cfg_.lambda_u, ds_.state_mean, ds_.state_std);
    bundle.freeze();
    return bundle;
}

AnchorBundle train_stage1(const OfflineDataset& ds, const Stage1Config& cfg, Stage1Hooks hooks) {
    Stage1Trainer trainer(ds, cfg, std::move(hooks));
    trainer.run(cfg.steps);
    return trainer.finish();
}

}  // namespace spar
