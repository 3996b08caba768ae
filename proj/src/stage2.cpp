#include "spar/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spar/errors.hpp"

namespace spar {

namespace {

constexpr int kCacheChunk = 2048;

double clip1(double v) { return std::clamp(v, -1.0, 1.0); }

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

ResidualCvae make_cvae(const AnchorBundle& bundle, const Stage2Config& cfg, std::uint64_t seed) {
    ResidualCvae m;
    m.latent_dim = cfg.latent_dim;
    m.kl_weight = cfg.beta_kl;
    m.recon_weight = cfg.recon_weight;
    const int d_s = bundle.state_dim(), d_a = bundle.action_dim();
    m.encoder = nn::make_mlp(d_s + d_a, cfg.cvae_hidden, 2 * cfg.latent_dim,
                             derive_seed(seed, "cvae/encoder"));
    m.decoder = nn::make_mlp(d_s + d_a + cfg.latent_dim, cfg.cvae_hidden, d_a,
                             derive_seed(seed, "cvae/decoder"));
    return m;
}

}  // namespace

Stage2Variant variant_from_string(const std::string& s) {
    if (s == "mlp") return Stage2Variant::mlp;
    if (s == "cvae") return Stage2Variant::cvae;
    if (s == "plas") return Stage2Variant::plas;
    if (s == "proj") return Stage2Variant::proj;
    throw ConfigError("unknown stage2 variant '" + s + "'");
}

std::string to_string(Stage2Variant v) {
    switch (v) {
        case Stage2Variant::mlp: return "mlp";
        case Stage2Variant::cvae: return "cvae";
        case Stage2Variant::plas: return "plas";
        case Stage2Variant::proj: return "proj";
    }
    throw ConfigError("invalid stage2 variant enum");
}

CvaeLossParts cvae_loss(const ResidualCvae& model, std::span<const double> s_norm,
                        std::span<const double> a_base, std::span<const double> delta_gt,
                        double w, Rng& rng) {
    if (w < 0.0) throw DimensionError("cvae_loss: weight must be >= 0");
    const int d_z = model.latent_dim;
    std::vector<double> enc_in;
    enc_in.insert(enc_in.end(), s_norm.begin(), s_norm.end());
    enc_in.insert(enc_in.end(), delta_gt.begin(), delta_gt.end());
    const auto enc_out = nn::forward(model.encoder, enc_in);

    std::vector<double> z(static_cast<std::size_t>(d_z));
    double kl = 0.0;
    for (int j = 0; j < d_z; ++j) {
        const double mu = enc_out[static_cast<std::size_t>(j)];
        const double log_sigma = std::clamp(enc_out[static_cast<std::size_t>(d_z + j)],
                                            ResidualCvae::kLogStdLo, ResidualCvae::kLogStdHi);
        const double sigma = std::exp(log_sigma);
        z[static_cast<std::size_t>(j)] = mu + sigma * rng.normal();
        kl += 0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * log_sigma);
    }

    std::vector<double> dec_in;
    dec_in.insert(dec_in.end(), s_norm.begin(), s_norm.end());
    dec_in.insert(dec_in.end(), a_base.begin(), a_base.end());
    dec_in.insert(dec_in.end(), z.begin(), z.end());
    const auto dec_out = nn::forward(model.decoder, dec_in);

    double err = 0.0;
    for (std::size_t j = 0; j < delta_gt.size(); ++j) {
        const double d = dec_out[j] - delta_gt[j];
        err += d * d;
    }
    CvaeLossParts parts;
    parts.recon = w * model.recon_weight * err;
    parts.kl = kl;
    parts.total = parts.recon + model.kl_weight * parts.kl;
    return parts;
}

RowCache build_row_cache(const OfflineDataset& ds, const AnchorBundle& bundle,
                         const WeightingConfig& weighting) {
    if (!bundle.frozen()) throw ContractViolation("stage2: anchor bundle must be frozen");
    RowCache c;
    c.n = ds.size();
    c.d_s = ds.d_s;
    c.d_a = ds.d_a;
    c.s_norm.resize(static_cast<std::size_t>(c.n) * c.d_s);
    c.a_base.resize(static_cast<std::size_t>(c.n) * c.d_a);
    c.delta_gt.resize(static_cast<std::size_t>(c.n) * c.d_a);
    c.a_tilde.resize(static_cast<std::size_t>(c.n));
    c.fit_weight.resize(static_cast<std::size_t>(c.n));
    c.lcb_base.resize(static_cast<std::size_t>(c.n));
    c.sigma_base.resize(static_cast<std::size_t>(c.n));

    const int d_s = c.d_s, d_a = c.d_a;
    const auto& base = bundle.base_policy();
    const int p_out = base.output_dim();
    nn::BatchTrace trace;
    std::vector<double> chunk_s(static_cast<std::size_t>(kCacheChunk) * d_s);
    std::vector<double> in_a(static_cast<std::size_t>(kCacheChunk) * (d_s + d_a));
    std::vector<double> in_b(static_cast<std::size_t>(kCacheChunk) * (d_s + d_a));
    std::vector<double> mean_a(kCacheChunk), std_a(kCacheChunk), mean_b(kCacheChunk),
        std_b(kCacheChunk);

    for (int start = 0; start < c.n; start += kCacheChunk) {
        const int m = std::min(kCacheChunk, c.n - start);
        for (int b = 0; b < m; ++b) {
            const auto& tr = ds.transitions[static_cast<std::size_t>(start + b)];
            ds.normalize_state(tr.state,
                               std::span(chunk_s).subspan(static_cast<std::size_t>(b) * d_s, d_s));
        }
        nn::forward_batch(base, chunk_s.data(), m, trace);
        for (int b = 0; b < m; ++b) {
            const auto& tr = ds.transitions[static_cast<std::size_t>(start + b)];
            double* sn = c.s_norm.data() + static_cast<std::size_t>(start + b) * d_s;
            std::memcpy(sn, chunk_s.data() + static_cast<std::size_t>(b) * d_s,
                        sizeof(double) * d_s);
            double* ab = c.a_base.data() + static_cast<std::size_t>(start + b) * d_a;
            for (int j = 0; j < d_a; ++j)
                ab[j] = clip1(trace.output()[static_cast<std::size_t>(b) * p_out + j]);
            double* dg = c.delta_gt.data() + static_cast<std::size_t>(start + b) * d_a;
            for (int j = 0; j < d_a; ++j)
                dg[j] = std::clamp(tr.action[static_cast<std::size_t>(j)] - ab[j], -2.0, 2.0);

            double* ia = in_a.data() + static_cast<std::size_t>(b) * (d_s + d_a);
            double* ib = in_b.data() + static_cast<std::size_t>(b) * (d_s + d_a);
            std::memcpy(ia, sn, sizeof(double) * d_s);
            std::memcpy(ib, sn, sizeof(double) * d_s);
            for (int j = 0; j < d_a; ++j) {
                ia[d_s + j] = tr.action[static_cast<std::size_t>(j)];
                ib[d_s + j] = ab[j];
            }
        }
        bundle.stats_batch(CriticSubset::guide, in_a.data(), m, mean_a.data(), std_a.data());
        bundle.stats_batch(CriticSubset::guide, in_b.data(), m, mean_b.data(), std_b.data());
        const double lu = bundle.lambda_u();
        for (int b = 0; b < m; ++b) {
            const double lcb_a = mean_a[static_cast<std::size_t>(b)] - lu * std_a[static_cast<std::size_t>(b)];
            const double lcb_b = mean_b[static_cast<std::size_t>(b)] - lu * std_b[static_cast<std::size_t>(b)];
            const double sigma = std::max(std_b[static_cast<std::size_t>(b)], 1e-6);
            const double at = (lcb_a - lcb_b) / sigma;
            const std::size_t row = static_cast<std::size_t>(start + b);
            c.a_tilde[row] = at;
            c.fit_weight[row] = weight(weighting, at);
            c.lcb_base[row] = lcb_b;
            c.sigma_base[row] = sigma;
        }
    }
    return c;
}

SelfImitationEval latent_self_imitation_eval(const ResidualCvae& online,
                                             const ResidualCvae& target,
                                             const AnchorBundle& bundle, StateBatchView batch,
                                             const WeightingConfig& weighting, int k, Rng& rng) {
    const RowCache& c = *batch.cache;
    const int B = static_cast<int>(batch.rows.size());
    const int d_s = c.d_s, d_a = c.d_a, d_z = online.latent_dim;
    const int dec_in_dim = d_s + d_a + d_z;
    const int total = B * k;

    SelfImitationEval ev;
    ev.a_tilde.resize(static_cast<std::size_t>(total));
    ev.omega.resize(static_cast<std::size_t>(total));
    ev.candidate_delta.resize(static_cast<std::size_t>(total) * d_a);
    ev.decoder_grad.assign(online.decoder.params.size(), 0.0);

    // Decode K prior samples per state with the target decoder.
    std::vector<double> dec_in(static_cast<std::size_t>(total) * dec_in_dim);
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(batch.rows[static_cast<std::size_t>(b)]);
        const double* sn = c.s_norm.data() + row * d_s;
        const double* ab = c.a_base.data() + row * d_a;
        for (int j = 0; j < k; ++j) {
            double* in = dec_in.data() + (static_cast<std::size_t>(b) * k + j) * dec_in_dim;
            std::memcpy(in, sn, sizeof(double) * d_s);
            std::memcpy(in + d_s, ab, sizeof(double) * d_a);
            for (int z = 0; z < d_z; ++z) in[d_s + d_a + z] = rng.normal();
        }
    }
    nn::BatchTrace target_trace;
    nn::forward_batch(target.decoder, dec_in.data(), total, target_trace);
    std::memcpy(ev.candidate_delta.data(), target_trace.output(),
                sizeof(double) * static_cast<std::size_t>(total) * d_a);

    // Score candidate actions with the frozen critics.
    std::vector<double> sa(static_cast<std::size_t>(total) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(batch.rows[static_cast<std::size_t>(b)]);
        const double* sn = c.s_norm.data() + row * d_s;
        const double* ab = c.a_base.data() + row * d_a;
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(b) * k + j;
            double* in = sa.data() + idx * (d_s + d_a);
            std::memcpy(in, sn, sizeof(double) * d_s);
            const double* delta = ev.candidate_delta.data() + idx * d_a;
            for (int t = 0; t < d_a; ++t) in[d_s + t] = clip1(ab[t] + delta[t]);
        }
    }
    std::vector<double> lcb(static_cast<std::size_t>(total));
    bundle.lcb_batch(CriticSubset::guide, sa.data(), total, lcb.data(), nullptr);

    std::vector<double> w(static_cast<std::size_t>(k)), at(static_cast<std::size_t>(k));
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(batch.rows[static_cast<std::size_t>(b)]);
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(b) * k + j;
            at[static_cast<std::size_t>(j)] =
                (lcb[idx] - c.lcb_base[row]) / c.sigma_base[row];
            w[static_cast<std::size_t>(j)] = weight(weighting, at[static_cast<std::size_t>(j)]);
            ev.a_tilde[idx] = at[static_cast<std::size_t>(j)];
        }
        const auto omega = normalize_weights(w, at);
        for (int j = 0; j < k; ++j)
            ev.omega[static_cast<std::size_t>(b) * k + j] = omega[static_cast<std::size_t>(j)];
    }

    // Regress the online decoder toward the weighted candidates (stop-gradient
    // on omega and the candidates; only the online decoder receives gradient).
    nn::BatchTrace online_trace;
    nn::forward_batch(online.decoder, dec_in.data(), total, online_trace);
    std::vector<double> upstream(static_cast<std::size_t>(total) * d_a);
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(b) * k + j;
            const double om = ev.omega[idx];
            for (int t = 0; t < d_a; ++t) {
                const double diff = online_trace.output()[idx * d_a + t] -
                                    ev.candidate_delta[idx * d_a + t];
                loss += om * diff * diff / B;
                upstream[idx * d_a + t] = 2.0 * om * diff / B;
            }
        }
    }
    nn::backward_batch(online.decoder, online_trace, dec_in.data(), upstream.data(), total,
                       ev.decoder_grad.data(), nullptr);
    ev.loss = loss;
    return ev;
}

double latent_self_imitation_step(ProjState& ps, const AnchorBundle& bundle, StateBatchView batch,
                                  nn::AdamState& decoder_opt, Rng& rng) {
    auto ev = latent_self_imitation_eval(ps.online, ps.target, bundle, batch, ps.weighting,
                                         ps.candidates, rng);
    for (auto& g : ev.decoder_grad) g *= ps.lambda_g;
    nn::adam_step_inplace(decoder_opt, ps.online.decoder.params, ev.decoder_grad);
    nn::polyak_update_inplace(ps.target.encoder.params, ps.online.encoder.params, ps.ema_tau);
    nn::polyak_update_inplace(ps.target.decoder.params, ps.online.decoder.params, ps.ema_tau);
    return ev.loss;
}

// ---------------------------------------------------------------------------
// MlpTrainer

MlpTrainer::MlpTrainer(const AnchorBundle& bundle, const OfflineDataset& ds, Stage2Config cfg)
    : bundle_(bundle),
      cfg_(std::move(cfg)),
      cache_(build_row_cache(ds, bundle, cfg_.weighting)),
      data_rng_(derive_seed(cfg_.seed, "stage2/data")) {
    net_ = nn::make_mlp(cache_.d_s + cache_.d_a, cfg_.hidden, cache_.d_a,
                        derive_seed(cfg_.seed, "stage2/mlp"));
    opt_ = nn::make_adam(net_.param_count(), cfg_.learning_rate, cfg_.grad_clip);
}

void MlpTrainer::compute_losses(const nn::ParamGraph& net, std::span<const int> rows,
                                double* fit_loss, double* guide_value,
                                std::vector<double>* fit_grad,
                                std::vector<double>* guide_grad) const {
    const int B = static_cast<int>(rows.size());
    const int d_s = cache_.d_s, d_a = cache_.d_a;
    std::vector<double> x(static_cast<std::size_t>(B) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        std::memcpy(x.data() + static_cast<std::size_t>(b) * (d_s + d_a),
                    cache_.s_norm.data() + row * d_s, sizeof(double) * d_s);
        std::memcpy(x.data() + static_cast<std::size_t>(b) * (d_s + d_a) + d_s,
                    cache_.a_base.data() + row * d_a, sizeof(double) * d_a);
    }
    nn::BatchTrace trace;
    nn::forward_batch(net, x.data(), B, trace);

    if (fit_loss || fit_grad) {
        double loss = 0.0;
        std::vector<double> upstream(static_cast<std::size_t>(B) * d_a);
        for (int b = 0; b < B; ++b) {
            const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
            const double w = cache_.fit_weight[row];
            for (int j = 0; j < d_a; ++j) {
                const double diff = trace.output()[static_cast<std::size_t>(b) * d_a + j] -
                                    cache_.delta_gt[row * d_a + j];
                loss += w * diff * diff / B;
                upstream[static_cast<std::size_t>(b) * d_a + j] = 2.0 * w * diff / B;
            }
        }
        if (fit_loss) *fit_loss = loss;
        if (fit_grad) {
            fit_grad->assign(net.params.size(), 0.0);
            nn::backward_batch(net, trace, x.data(), upstream.data(), B, fit_grad->data(),
                               nullptr);
        }
    }

    if (guide_value || guide_grad) {
        std::vector<double> sa(static_cast<std::size_t>(B) * (d_s + d_a));
        std::vector<double> mask(static_cast<std::size_t>(B) * d_a);
        for (int b = 0; b < B; ++b) {
            const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
            double* in = sa.data() + static_cast<std::size_t>(b) * (d_s + d_a);
            std::memcpy(in, cache_.s_norm.data() + row * d_s, sizeof(double) * d_s);
            for (int j = 0; j < d_a; ++j) {
                const double raw = cache_.a_base[row * d_a + j] +
                                   trace.output()[static_cast<std::size_t>(b) * d_a + j];
                in[d_s + j] = clip1(raw);
                mask[static_cast<std::size_t>(b) * d_a + j] =
                    (raw > -1.0 && raw < 1.0) ? 1.0 : 0.0;
            }
        }
        std::vector<double> lcb(static_cast<std::size_t>(B));
        std::vector<double> grad_a;
        if (guide_grad) grad_a.resize(static_cast<std::size_t>(B) * d_a);
        bundle_.lcb_batch(CriticSubset::guide, sa.data(), B, lcb.data(),
                          guide_grad ? grad_a.data() : nullptr);
        double q_mean = 0.0;
        for (int b = 0; b < B; ++b) q_mean += lcb[static_cast<std::size_t>(b)] / B;
        if (guide_value) *guide_value = q_mean;
        if (guide_grad) {
            std::vector<double> upstream(static_cast<std::size_t>(B) * d_a);
            for (std::size_t i = 0; i < upstream.size(); ++i)
                upstream[i] = -cfg_.lambda_g / B * grad_a[i] * mask[i];
            guide_grad->assign(net.params.size(), 0.0);
            nn::backward_batch(net, trace, x.data(), upstream.data(), B, guide_grad->data(),
                               nullptr);
        }
    }
}

void MlpTrainer::step() {
    const int B = cfg_.batch;
    batch_rows_.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
        batch_rows_[static_cast<std::size_t>(b)] =
            static_cast<int>(data_rng_.below(static_cast<std::uint64_t>(cache_.n)));

    double fit = 0.0, guide = 0.0;
    std::vector<double> fit_grad, guide_grad;
    const bool want_guide = cfg_.lambda_g != 0.0;
    compute_losses(net_, batch_rows_, &fit, want_guide ? &guide : nullptr, &fit_grad,
                   want_guide ? &guide_grad : nullptr);

    const double total = fit - cfg_.lambda_g * guide;
    if (!std::isfinite(total)) {
        if (++consecutive_errors_ >= cfg_.max_consecutive_errors)
            throw TrainingDivergence("stage2-mlp: non-finite loss at step " +
                                     std::to_string(step_ + 1));
    } else {
        consecutive_errors_ = 0;
        if (want_guide)
            for (std::size_t i = 0; i < fit_grad.size(); ++i) fit_grad[i] += guide_grad[i];
        nn::adam_step_inplace(opt_, net_.params, fit_grad);
    }
    ++step_;
    last_fit_ = fit;
    last_guide_ = guide;
}

void MlpTrainer::run(int steps) {
    for (int i = 0; i < steps; ++i) step();
}

ResidualMlp MlpTrainer::finish() const { return ResidualMlp{net_, cfg_.lambda_g}; }

double MlpTrainer::fit_loss_at(std::span<const int> rows, std::span<const double> shift) const {
    nn::ParamGraph net = net_;
    if (!shift.empty()) {
        if (shift.size() != net.params.size())
            throw DimensionError("fit_loss_at: shift size mismatch");
        for (std::size_t i = 0; i < shift.size(); ++i) net.params[i] += shift[i];
    }
    double fit = 0.0;
    compute_losses(net, rows, &fit, nullptr, nullptr, nullptr);
    return fit;
}

std::vector<double> MlpTrainer::fit_grad(std::span<const int> rows) const {
    std::vector<double> g;
    double fit = 0.0;
    compute_losses(net_, rows, &fit, nullptr, &g, nullptr);
    return g;
}

std::vector<double> MlpTrainer::guidance_delta(std::span<const int> rows) const {
    if (cfg_.lambda_g == 0.0) return std::vector<double>(net_.params.size(), 0.0);
    std::vector<double> guide_grad;
    double guide = 0.0;
    compute_losses(net_, rows, nullptr, &guide, nullptr, &guide_grad);
    nn::ParamGraph scratch = net_;
    nn::AdamState opt = opt_;
    nn::adam_step_inplace(opt, scratch.params, guide_grad);
    std::vector<double> delta(net_.params.size());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = scratch.params[i] - net_.params[i];
    return delta;
}

// ---------------------------------------------------------------------------
// ProjTrainer

ProjTrainer::ProjTrainer(const AnchorBundle& bundle, const OfflineDataset& ds, Stage2Config cfg)
    : bundle_(bundle),
      cfg_(std::move(cfg)),
      cache_(build_row_cache(ds, bundle, cfg_.weighting)),
      data_rng_(derive_seed(cfg_.seed, "stage2/data")),
      reparam_rng_(derive_seed(cfg_.seed, "stage2/reparam")),
      candidate_rng_(derive_seed(cfg_.seed, "stage2/candidates")) {
    ps_.online = make_cvae(bundle, cfg_, cfg_.seed);
    ps_.target = ps_.online;
    ps_.candidates = cfg_.candidates;
    ps_.projection_period = cfg_.projection_period;
    ps_.ema_tau = cfg_.ema_tau;
    ps_.weighting = cfg_.weighting;
    ps_.lambda_g = cfg_.variant == Stage2Variant::proj ? cfg_.lambda_g : 0.0;
    enc_opt_ = nn::make_adam(ps_.online.encoder.param_count(), cfg_.learning_rate, cfg_.grad_clip);
    dec_opt_ = nn::make_adam(ps_.online.decoder.param_count(), cfg_.learning_rate, cfg_.grad_clip);
}

ProjTrainer::FitGrads ProjTrainer::fit_pass(const ResidualCvae& model, std::span<const int> rows,
                                            std::span<const double> eps, bool want_grads) const {
    const int B = static_cast<int>(rows.size());
    const int d_s = cache_.d_s, d_a = cache_.d_a, d_z = model.latent_dim;

    std::vector<double> enc_in(static_cast<std::size_t>(B) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        double* in = enc_in.data() + static_cast<std::size_t>(b) * (d_s + d_a);
        std::memcpy(in, cache_.s_norm.data() + row * d_s, sizeof(double) * d_s);
        std::memcpy(in + d_s, cache_.delta_gt.data() + row * d_a, sizeof(double) * d_a);
    }
    nn::BatchTrace enc_trace;
    nn::forward_batch(model.encoder, enc_in.data(), B, enc_trace);

    std::vector<double> mu(static_cast<std::size_t>(B) * d_z),
        sigma(static_cast<std::size_t>(B) * d_z), clamped(static_cast<std::size_t>(B) * d_z);
    std::vector<double> dec_in(static_cast<std::size_t>(B) * (d_s + d_a + d_z));
    double kl = 0.0;
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        double* in = dec_in.data() + static_cast<std::size_t>(b) * (d_s + d_a + d_z);
        std::memcpy(in, cache_.s_norm.data() + row * d_s, sizeof(double) * d_s);
        std::memcpy(in + d_s, cache_.a_base.data() + row * d_a, sizeof(double) * d_a);
        for (int j = 0; j < d_z; ++j) {
            const std::size_t idx = static_cast<std::size_t>(b) * d_z + j;
            mu[idx] = enc_trace.output()[static_cast<std::size_t>(b) * 2 * d_z + j];
            double ls = enc_trace.output()[static_cast<std::size_t>(b) * 2 * d_z + d_z + j];
            clamped[idx] =
                (ls < ResidualCvae::kLogStdLo || ls > ResidualCvae::kLogStdHi) ? 1.0 : 0.0;
            ls = std::clamp(ls, ResidualCvae::kLogStdLo, ResidualCvae::kLogStdHi);
            sigma[idx] = std::exp(ls);
            in[d_s + d_a + j] = mu[idx] + sigma[idx] * eps[idx];
            kl += 0.5 * (mu[idx] * mu[idx] + sigma[idx] * sigma[idx] - 1.0 - 2.0 * ls) / B;
        }
    }

    nn::BatchTrace dec_trace;
    nn::forward_batch(model.decoder, dec_in.data(), B, dec_trace);

    FitGrads out;
    out.kl = kl;
    std::vector<double> dec_upstream(static_cast<std::size_t>(B) * d_a);
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        const double w = cache_.fit_weight[row] * model.recon_weight;
        for (int j = 0; j < d_a; ++j) {
            const double diff = dec_trace.output()[static_cast<std::size_t>(b) * d_a + j] -
                                cache_.delta_gt[row * d_a + j];
            out.recon += w * diff * diff / B;
            dec_upstream[static_cast<std::size_t>(b) * d_a + j] = 2.0 * w * diff / B;
        }
    }
    if (!want_grads) return out;

    out.decoder.assign(model.decoder.params.size(), 0.0);
    std::vector<double> dec_in_grad(dec_in.size());
    nn::backward_batch(model.decoder, dec_trace, dec_in.data(), dec_upstream.data(), B,
                       out.decoder.data(), dec_in_grad.data());

    // Encoder gradient: reparameterization path plus the analytic KL term.
    std::vector<double> enc_upstream(static_cast<std::size_t>(B) * 2 * d_z);
    for (int b = 0; b < B; ++b) {
        for (int j = 0; j < d_z; ++j) {
            const std::size_t idx = static_cast<std::size_t>(b) * d_z + j;
            const double dz =
                dec_in_grad[static_cast<std::size_t>(b) * (d_s + d_a + d_z) + d_s + d_a + j];
            const double kl_mu = model.kl_weight * mu[idx] / B;
            double kl_ls = model.kl_weight * (sigma[idx] * sigma[idx] - 1.0) / B;
            double g_ls = dz * sigma[idx] * eps[idx] + kl_ls;
            if (clamped[idx] != 0.0) g_ls = 0.0;
            enc_upstream[static_cast<std::size_t>(b) * 2 * d_z + j] = dz + kl_mu;
            enc_upstream[static_cast<std::size_t>(b) * 2 * d_z + d_z + j] = g_ls;
        }
    }
    out.encoder.assign(model.encoder.params.size(), 0.0);
    nn::backward_batch(model.encoder, enc_trace, enc_in.data(), enc_upstream.data(), B,
                       out.encoder.data(), nullptr);
    return out;
}

void ProjTrainer::step() {
    const int B = cfg_.batch;
    const int d_z = ps_.online.latent_dim;
    batch_rows_.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
        batch_rows_[static_cast<std::size_t>(b)] =
            static_cast<int>(data_rng_.below(static_cast<std::uint64_t>(cache_.n)));
    std::vector<double> eps(static_cast<std::size_t>(B) * d_z);
    for (auto& e : eps) e = reparam_rng_.normal();

    auto fit = fit_pass(ps_.online, batch_rows_, eps, true);
    const double total = fit.recon + ps_.online.kl_weight * fit.kl;
    if (!std::isfinite(total)) {
        if (++consecutive_errors_ >= cfg_.max_consecutive_errors)
            throw TrainingDivergence("stage2-cvae: non-finite loss at step " +
                                     std::to_string(step_ + 1));
    } else {
        consecutive_errors_ = 0;
        nn::adam_step_inplace(enc_opt_, ps_.online.encoder.params, fit.encoder);
        nn::adam_step_inplace(dec_opt_, ps_.online.decoder.params, fit.decoder);
    }

    ++step_;
    last_recon_ = fit.recon;
    last_kl_ = fit.kl;
    if (step_ > 500) {
        kl_sum_ += fit.kl;
        ++kl_steps_;
    }

    if (cfg_.variant == Stage2Variant::proj && ps_.lambda_g != 0.0 &&
        step_ % cfg_.projection_period == 0) {
        last_guide_ = latent_self_imitation_step(
            ps_, bundle_, StateBatchView{&cache_, batch_rows_}, dec_opt_, candidate_rng_);
    }
}

void ProjTrainer::run(int steps) {
    for (int i = 0; i < steps; ++i) step();
}

ProjState ProjTrainer::finish() const { return ps_; }

double ProjTrainer::fit_loss_at(std::span<const int> rows, std::uint64_t noise_seed,
                                std::span<const double> decoder_shift) const {
    ResidualCvae model = ps_.online;
    if (!decoder_shift.empty()) {
        if (decoder_shift.size() != model.decoder.params.size())
            throw DimensionError("fit_loss_at: decoder shift size mismatch");
        for (std::size_t i = 0; i < decoder_shift.size(); ++i)
            model.decoder.params[i] += decoder_shift[i];
    }
    Rng rng(derive_seed(noise_seed, "probe/fit_eps"));
    std::vector<double> eps(rows.size() * static_cast<std::size_t>(model.latent_dim));
    for (auto& e : eps) e = rng.normal();
    return fit_pass(model, rows, eps, false).recon;
}

std::vector<double> ProjTrainer::fit_grad(std::span<const int> rows,
                                          std::uint64_t noise_seed) const {
    Rng rng(derive_seed(noise_seed, "probe/fit_eps"));
    std::vector<double> eps(rows.size() * static_cast<std::size_t>(ps_.online.latent_dim));
    for (auto& e : eps) e = rng.normal();
    return fit_pass(ps_.online, rows, eps, true).decoder;
}

std::vector<double> ProjTrainer::guidance_delta(std::span<const int> rows,
                                                std::uint64_t noise_seed) const {
    if (ps_.lambda_g == 0.0)
        return std::vector<double>(ps_.online.decoder.params.size(), 0.0);
    Rng rng(derive_seed(noise_seed, "probe/candidates"));
    auto ev = latent_self_imitation_eval(ps_.online, ps_.target, bundle_,
                                         StateBatchView{&cache_, rows}, ps_.weighting,
                                         ps_.candidates, rng);
    for (auto& g : ev.decoder_grad) g *= ps_.lambda_g;
    nn::ParamGraph scratch = ps_.online.decoder;
    nn::AdamState opt = dec_opt_;
    nn::adam_step_inplace(opt, scratch.params, ev.decoder_grad);
    std::vector<double> delta(scratch.params.size());
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = scratch.params[i] - ps_.online.decoder.params[i];
    return delta;
}

// ---------------------------------------------------------------------------
// PlasTrainer

namespace {
Stage2Config plas_phase1_config(Stage2Config cfg) {
    cfg.variant = Stage2Variant::cvae;
    cfg.weighting.filter = Filter::hard;  // Phase 1 prunes non-positive advantages
    cfg.seed = derive_seed(cfg.seed, "plas/phase1");
    return cfg;
}
}  // namespace

PlasTrainer::PlasTrainer(const AnchorBundle& bundle, const OfflineDataset& ds, Stage2Config cfg)
    : bundle_(bundle),
      cfg_(std::move(cfg)),
      phase1_(bundle, ds, plas_phase1_config(cfg_)),
      data_rng_(derive_seed(cfg_.seed, "plas/phase2-data")) {
    const int d_s = bundle.state_dim(), d_a = bundle.action_dim();
    std::vector<int> sizes;
    sizes.push_back(d_s + d_a);
    for (int h : cfg_.hidden) sizes.push_back(h);
    sizes.push_back(cfg_.latent_dim);
    std::vector<nn::Act> acts(cfg_.hidden.size(), nn::Act::relu);
    acts.push_back(nn::Act::tanh);  // bounded latent, scaled by latent_limit
    latent_ = nn::make_mlp(sizes, acts, derive_seed(cfg_.seed, "plas/latent"));
    latent_opt_ = nn::make_adam(latent_.param_count(), cfg_.learning_rate, cfg_.grad_clip);
}

int PlasTrainer::phase1_steps_done() const { return phase1_.current_step(); }
const ResidualCvae& PlasTrainer::cvae() const { return phase1_.state().online; }
const RowCache& PlasTrainer::rows() const { return phase1_.rows(); }

void PlasTrainer::run_phase1(int steps) { phase1_.run(steps); }

void PlasTrainer::compute_guidance(const nn::ParamGraph& latent, std::span<const int> rows,
                                   double* guide_value, std::vector<double>* latent_grad) const {
    const RowCache& c = phase1_.rows();
    const ResidualCvae& cv = phase1_.state().online;
    const int B = static_cast<int>(rows.size());
    const int d_s = c.d_s, d_a = c.d_a, d_z = cv.latent_dim;

    std::vector<double> lat_in(static_cast<std::size_t>(B) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        double* in = lat_in.data() + static_cast<std::size_t>(b) * (d_s + d_a);
        std::memcpy(in, c.s_norm.data() + row * d_s, sizeof(double) * d_s);
        std::memcpy(in + d_s, c.a_base.data() + row * d_a, sizeof(double) * d_a);
    }
    nn::BatchTrace lat_trace;
    nn::forward_batch(latent, lat_in.data(), B, lat_trace);

    std::vector<double> dec_in(static_cast<std::size_t>(B) * (d_s + d_a + d_z));
    for (int b = 0; b < B; ++b) {
        double* in = dec_in.data() + static_cast<std::size_t>(b) * (d_s + d_a + d_z);
        std::memcpy(in, lat_in.data() + static_cast<std::size_t>(b) * (d_s + d_a),
                    sizeof(double) * (d_s + d_a));
        for (int j = 0; j < d_z; ++j)
            in[d_s + d_a + j] =
                cfg_.latent_limit * lat_trace.output()[static_cast<std::size_t>(b) * d_z + j];
    }
    nn::BatchTrace dec_trace;
    nn::forward_batch(cv.decoder, dec_in.data(), B, dec_trace);

    std::vector<double> sa(static_cast<std::size_t>(B) * (d_s + d_a));
    std::vector<double> mask(static_cast<std::size_t>(B) * d_a);
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        double* in = sa.data() + static_cast<std::size_t>(b) * (d_s + d_a);
        std::memcpy(in, c.s_norm.data() + row * d_s, sizeof(double) * d_s);
        for (int j = 0; j < d_a; ++j) {
            const double raw = c.a_base[row * d_a + j] +
                               dec_trace.output()[static_cast<std::size_t>(b) * d_a + j];
            in[d_s + j] = clip1(raw);
            mask[static_cast<std::size_t>(b) * d_a + j] = (raw > -1.0 && raw < 1.0) ? 1.0 : 0.0;
        }
    }
    std::vector<double> lcb(static_cast<std::size_t>(B));
    std::vector<double> grad_a;
    if (latent_grad) grad_a.resize(static_cast<std::size_t>(B) * d_a);
    bundle_.lcb_batch(CriticSubset::guide, sa.data(), B, lcb.data(),
                      latent_grad ? grad_a.data() : nullptr);
    double q_mean = 0.0;
    for (int b = 0; b < B; ++b) q_mean += lcb[static_cast<std::size_t>(b)] / B;
    if (guide_value) *guide_value = q_mean;
    if (!latent_grad) return;

    std::vector<double> dec_upstream(static_cast<std::size_t>(B) * d_a);
    for (std::size_t i = 0; i < dec_upstream.size(); ++i)
        dec_upstream[i] = -cfg_.lambda_g / B * grad_a[i] * mask[i];
    std::vector<double> dec_scratch(cv.decoder.params.size(), 0.0);  // frozen; discarded
    std::vector<double> dec_in_grad(dec_in.size());
    nn::backward_batch(cv.decoder, dec_trace, dec_in.data(), dec_upstream.data(), B,
                       dec_scratch.data(), dec_in_grad.data());

    std::vector<double> lat_upstream(static_cast<std::size_t>(B) * d_z);
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < d_z; ++j)
            lat_upstream[static_cast<std::size_t>(b) * d_z + j] =
                cfg_.latent_limit *
                dec_in_grad[static_cast<std::size_t>(b) * (d_s + d_a + d_z) + d_s + d_a + j];
    latent_grad->assign(latent.params.size(), 0.0);
    nn::backward_batch(latent, lat_trace, lat_in.data(), lat_upstream.data(), B,
                       latent_grad->data(), nullptr);
}

void PlasTrainer::compute_fit(const nn::ParamGraph& latent, std::span<const int> rows,
                              double* fit_loss, std::vector<double>* latent_grad) const {
    const RowCache& c = phase1_.rows();
    const ResidualCvae& cv = phase1_.state().online;
    const int B = static_cast<int>(rows.size());
    const int d_s = c.d_s, d_a = c.d_a, d_z = cv.latent_dim;

    std::vector<double> lat_in(static_cast<std::size_t>(B) * (d_s + d_a));
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        double* in = lat_in.data() + static_cast<std::size_t>(b) * (d_s + d_a);
        std::memcpy(in, c.s_norm.data() + row * d_s, sizeof(double) * d_s);
        std::memcpy(in + d_s, c.a_base.data() + row * d_a, sizeof(double) * d_a);
    }
    nn::BatchTrace lat_trace;
    nn::forward_batch(latent, lat_in.data(), B, lat_trace);

    std::vector<double> dec_in(static_cast<std::size_t>(B) * (d_s + d_a + d_z));
    for (int b = 0; b < B; ++b) {
        double* in = dec_in.data() + static_cast<std::size_t>(b) * (d_s + d_a + d_z);
        std::memcpy(in, lat_in.data() + static_cast<std::size_t>(b) * (d_s + d_a),
                    sizeof(double) * (d_s + d_a));
        for (int j = 0; j < d_z; ++j)
            in[d_s + d_a + j] =
                cfg_.latent_limit * lat_trace.output()[static_cast<std::size_t>(b) * d_z + j];
    }
    nn::BatchTrace dec_trace;
    nn::forward_batch(cv.decoder, dec_in.data(), B, dec_trace);

    double loss = 0.0;
    std::vector<double> dec_upstream(static_cast<std::size_t>(B) * d_a);
    for (int b = 0; b < B; ++b) {
        const auto row = static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]);
        const double w = c.fit_weight[row];
        for (int j = 0; j < d_a; ++j) {
            const double diff = dec_trace.output()[static_cast<std::size_t>(b) * d_a + j] -
                                c.delta_gt[row * d_a + j];
            loss += w * diff * diff / B;
            dec_upstream[static_cast<std::size_t>(b) * d_a + j] = 2.0 * w * diff / B;
        }
    }
    if (fit_loss) *fit_loss = loss;
    if (!latent_grad) return;

    std::vector<double> dec_scratch(cv.decoder.params.size(), 0.0);
    std::vector<double> dec_in_grad(dec_in.size());
    nn::backward_batch(cv.decoder, dec_trace, dec_in.data(), dec_upstream.data(), B,
                       dec_scratch.data(), dec_in_grad.data());
    std::vector<double> lat_upstream(static_cast<std::size_t>(B) * d_z);
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < d_z; ++j)
            lat_upstream[static_cast<std::size_t>(b) * d_z + j] =
                cfg_.latent_limit *
                dec_in_grad[static_cast<std::size_t>(b) * (d_s + d_a + d_z) + d_s + d_a + j];
    latent_grad->assign(latent.params.size(), 0.0);
    nn::backward_batch(latent, lat_trace, lat_in.data(), lat_upstream.data(), B,
                       latent_grad->data(), nullptr);
}

void PlasTrainer::phase2_step() {
    const int B = cfg_.batch;
    batch_rows_.resize(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
        batch_rows_[static_cast<std::size_t>(b)] =
            static_cast<int>(data_rng_.below(static_cast<std::uint64_t>(phase1_.rows().n)));
    double value = 0.0;
    if (cfg_.lambda_g != 0.0) {
        std::vector<double> grad;
        compute_guidance(latent_, batch_rows_, &value, &grad);
        if (std::isfinite(value)) nn::adam_step_inplace(latent_opt_, latent_.params, grad);
    } else {
        compute_guidance(latent_, batch_rows_, &value, nullptr);
    }
    ++phase2_step_;
    last_guide_ = value;
}

void PlasTrainer::run_phase2(int steps) {
    for (int i = 0; i < steps; ++i) phase2_step();
}

void PlasTrainer::run(int total_steps) {
    const int p1 = cfg_.plas_phase1_steps >= 0 ? cfg_.plas_phase1_steps : total_steps / 2;
    run_phase1(p1);
    run_phase2(total_steps - p1);
}

PlasActor PlasTrainer::finish() const {
    PlasActor actor;
    actor.latent_policy = latent_;
    actor.cvae = phase1_.state().online;
    actor.lambda_g = cfg_.lambda_g;
    actor.latent_limit = cfg_.latent_limit;
    return actor;
}

double PlasTrainer::fit_loss_at(std::span<const int> rows,
                                std::span<const double> latent_shift) const {
    nn::ParamGraph latent = latent_;
    if (!latent_shift.empty()) {
        if (latent_shift.size() != latent.params.size())
            throw DimensionError("fit_loss_at: latent shift size mismatch");
        for (std::size_t i = 0; i < latent_shift.size(); ++i) latent.params[i] += latent_shift[i];
    }
    double fit = 0.0;
    compute_fit(latent, rows, &fit, nullptr);
    return fit;
}

std::vector<double> PlasTrainer::fit_grad(std::span<const int> rows) const {
    std::vector<double> g;
    compute_fit(latent_, rows, nullptr, &g);
    return g;
}

std::vector<double> PlasTrainer::guidance_delta(std::span<const int> rows) const {
    if (cfg_.lambda_g == 0.0) return std::vector<double>(latent_.params.size(), 0.0);
    std::vector<double> grad;
    compute_guidance(latent_, rows, nullptr, &grad);
    nn::ParamGraph scratch = latent_;
    nn::AdamState opt = latent_opt_;
    nn::adam_step_inplace(opt, scratch.params, grad);
    std::vector<double> delta(latent_.params.size());
    for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] = scratch.params[i] - latent_.params[i];
    return delta;
}

// ---------------------------------------------------------------------------
// ResidualPolicy

int ResidualPolicy::action_dim(const AnchorBundle& bundle) const { return bundle.action_dim(); }

std::vector<std::vector<double>> ResidualPolicy::sample_deltas(const AnchorBundle& bundle,
                                                               std::span<const double> raw_s,
                                                               std::span<const double> a_base,
                                                               int k, Rng& rng) const {
    const auto s = bundle.normalize_state(raw_s);
    std::vector<double> in;
    in.insert(in.end(), s.begin(), s.end());
    in.insert(in.end(), a_base.begin(), a_base.end());

    std::vector<std::vector<double>> deltas;
    switch (variant) {
        case Stage2Variant::mlp: {
            deltas.push_back(nn::forward(mlp->net, in));
            break;
        }
        case Stage2Variant::plas: {
            const auto raw_z = nn::forward(plas->latent_policy, in);
            std::vector<double> dec_in = in;
            for (double z : raw_z) dec_in.push_back(plas->latent_limit * z);
            deltas.push_back(nn::forward(plas->cvae.decoder, dec_in));
            break;
        }
        case Stage2Variant::cvae:
        case Stage2Variant::proj: {
            const auto& model = proj->online;
            for (int j = 0; j < k; ++j) {
                std::vector<double> dec_in = in;
                for (int z = 0; z < model.latent_dim; ++z) dec_in.push_back(rng.normal());
                deltas.push_back(nn::forward(model.decoder, dec_in));
            }
            break;
        }
    }
    return deltas;
}

Checkpoint ResidualPolicy::to_checkpoint() const {
    Checkpoint ck;
    ck.put_scalar("meta.variant", static_cast<double>(variant));
    switch (variant) {
        case Stage2Variant::mlp:
            put_graph(ck, "residual", mlp->net);
            ck.put_scalar("meta.lambda_g", mlp->lambda_g);
            break;
        case Stage2Variant::cvae:
        case Stage2Variant::proj:
            put_graph(ck, "encoder", proj->online.encoder);
            put_graph(ck, "decoder", proj->online.decoder);
            put_graph(ck, "target_encoder", proj->target.encoder);
            put_graph(ck, "target_decoder", proj->target.decoder);
            ck.put_scalar("meta.latent_dim", proj->online.latent_dim);
            ck.put_scalar("meta.kl_weight", proj->online.kl_weight);
            ck.put_scalar("meta.recon_weight", proj->online.recon_weight);
            ck.put_scalar("meta.lambda_g", proj->lambda_g);
            ck.put_scalar("meta.candidates", proj->candidates);
            ck.put_scalar("meta.projection_period", proj->projection_period);
            ck.put_scalar("meta.ema_tau", proj->ema_tau);
            ck.put_scalar("meta.weighting.sensitivity",
                          static_cast<double>(proj->weighting.sensitivity));
            ck.put_scalar("meta.weighting.filter", static_cast<double>(proj->weighting.filter));
            ck.put_scalar("meta.weighting.temperature", proj->weighting.temperature);
            ck.put_scalar("meta.weighting.clip", proj->weighting.weight_clip);
            break;
        case Stage2Variant::plas:
            put_graph(ck, "latent_policy", plas->latent_policy);
            put_graph(ck, "encoder", plas->cvae.encoder);
            put_graph(ck, "decoder", plas->cvae.decoder);
            ck.put_scalar("meta.latent_dim", plas->cvae.latent_dim);
            ck.put_scalar("meta.kl_weight", plas->cvae.kl_weight);
            ck.put_scalar("meta.recon_weight", plas->cvae.recon_weight);
            ck.put_scalar("meta.lambda_g", plas->lambda_g);
            ck.put_scalar("meta.latent_limit", plas->latent_limit);
            break;
    }
    return ck;
}

ResidualPolicy ResidualPolicy::from_checkpoint(const Checkpoint& ck) {
    ResidualPolicy p;
    p.variant = static_cast<Stage2Variant>(static_cast<int>(ck.get_scalar("meta.variant")));
    switch (p.variant) {
        case Stage2Variant::mlp:
            p.mlp = ResidualMlp{get_graph(ck, "residual"), ck.get_scalar("meta.lambda_g")};
            break;
        case Stage2Variant::cvae:
        case Stage2Variant::proj: {
            ProjState ps;
            ps.online.encoder = get_graph(ck, "encoder");
            ps.online.decoder = get_graph(ck, "decoder");
            ps.target.encoder = get_graph(ck, "target_encoder");
            ps.target.decoder = get_graph(ck, "target_decoder");
            ps.online.latent_dim = ps.target.latent_dim =
                static_cast<int>(ck.get_scalar("meta.latent_dim"));
            ps.online.kl_weight = ps.target.kl_weight = ck.get_scalar("meta.kl_weight");
            ps.online.recon_weight = ps.target.recon_weight = ck.get_scalar("meta.recon_weight");
            ps.lambda_g = ck.get_scalar("meta.lambda_g");
            ps.candidates = static_cast<int>(ck.get_scalar("meta.candidates"));
            ps.projection_period = static_cast<int>(ck.get_scalar("meta.projection_period"));
            ps.ema_tau = ck.get_scalar("meta.ema_tau");
            ps.weighting.sensitivity = static_cast<Sensitivity>(
                static_cast<int>(ck.get_scalar("meta.weighting.sensitivity")));
            ps.weighting.filter =
                static_cast<Filter>(static_cast<int>(ck.get_scalar("meta.weighting.filter")));
            ps.weighting.temperature = ck.get_scalar("meta.weighting.temperature");
            ps.weighting.weight_clip = ck.get_scalar("meta.weighting.clip");
            p.proj = std::move(ps);
            break;
        }
        case Stage2Variant::plas: {
            PlasActor actor;
            actor.latent_policy = get_graph(ck, "latent_policy");
            actor.cvae.encoder = get_graph(ck, "encoder");
            actor.cvae.decoder = get_graph(ck, "decoder");
            actor.cvae.latent_dim = static_cast<int>(ck.get_scalar("meta.latent_dim"));
            actor.cvae.kl_weight = ck.get_scalar("meta.kl_weight");
            actor.cvae.recon_weight = ck.get_scalar("meta.recon_weight");
            actor.lambda_g = ck.get_scalar("meta.lambda_g");
            actor.latent_limit = ck.get_scalar("meta.latent_limit");
            p.plas = std::move(actor);
            break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Variant entry points

ResidualMlp train_spar_mlp(const AnchorBundle& bundle, const OfflineDataset& ds,
                           const Stage2Config& cfg) {
    Stage2Config c = cfg;
    c.variant = Stage2Variant::mlp;
    MlpTrainer trainer(bundle, ds, c);
    trainer.run(c.steps);
    return trainer.finish();
}

ProjState train_spar_cvae(const AnchorBundle& bundle, const OfflineDataset& ds,
                          const Stage2Config& cfg) {
    Stage2Config c = cfg;
    c.variant = Stage2Variant::cvae;
    ProjTrainer trainer(bundle, ds, c);
    trainer.run(c.steps);
    return trainer.finish();
}

ProjState train_spar_proj(const AnchorBundle& bundle, const OfflineDataset& ds,
                          const Stage2Config& cfg) {
    Stage2Config c = cfg;
    c.variant = Stage2Variant::proj;
    ProjTrainer trainer(bundle, ds, c);
    trainer.run(c.steps);
    return trainer.finish();
}

PlasActor train_spar_plas(const AnchorBundle& bundle, const OfflineDataset& ds,
                          const Stage2Config& cfg) {
    Stage2Config c = cfg;
    c.variant = Stage2Variant::plas;
    PlasTrainer trainer(bundle, ds, c);
    trainer.run(c.steps);
    return trainer.finish();
}

ResidualPolicy train_stage2(const AnchorBundle& bundle, const OfflineDataset& ds,
                            const Stage2Config& cfg) {
    ResidualPolicy p;
    p.variant = cfg.variant;
    switch (cfg.variant) {
        case Stage2Variant::mlp: p.mlp = train_spar_mlp(bundle, ds, cfg); break;
        case Stage2Variant::cvae: p.proj = train_spar_cvae(bundle, ds, cfg); break;
        case Stage2Variant::proj: p.proj = train_spar_proj(bundle, ds, cfg); break;
        case Stage2Variant::plas: p.plas = train_spar_plas(bundle, ds, cfg); break;
    }
    return p;
}

}  // namespace spar
