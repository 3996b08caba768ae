#include "spar/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "spar/errors.hpp"
#include "spar/rng.hpp"

namespace spar::nn {

namespace {

void apply_activation(Act act, const double* pre, double* post, int n) {
    switch (act) {
        case Act::relu:
            for (int i = 0; i < n; ++i) post[i] = pre[i] > 0.0 ? pre[i] : 0.0;
            break;
        case Act::tanh:
            for (int i = 0; i < n; ++i) post[i] = std::tanh(pre[i]);
            break;
        case Act::identity:
            std::memcpy(post, pre, sizeof(double) * static_cast<std::size_t>(n));
            break;
    }
}

// delta *= act'(pre) computed from (pre, post).
void apply_activation_grad(Act act, const double* pre, const double* post, double* delta, int n) {
    switch (act) {
        case Act::relu:
            for (int i = 0; i < n; ++i)
                if (pre[i] <= 0.0) delta[i] = 0.0;
            break;
        case Act::tanh:
            for (int i = 0; i < n; ++i) delta[i] *= 1.0 - post[i] * post[i];
            break;
        case Act::identity:
            break;
    }
}

}  // namespace

int ParamGraph::weight_offset(int layer) const {
    int off = 0;
    for (int l = 0; l < layer; ++l)
        off += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    return off;
}

int ParamGraph::bias_offset(int layer) const {
    return weight_offset(layer) + layer_sizes[layer] * layer_sizes[layer + 1];
}

int param_count_for(const std::vector<int>& layer_sizes) {
    int n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
    return n;
}

ParamGraph make_mlp(const std::vector<int>& layer_sizes, const std::vector<Act>& activations,
                    std::uint64_t seed) {
    if (layer_sizes.size() < 2)
        throw DimensionError("make_mlp: need at least input and output sizes");
    if (activations.size() + 1 != layer_sizes.size())
        throw DimensionError("make_mlp: one activation per affine layer required");
    for (int s : layer_sizes)
        if (s <= 0) throw DimensionError("make_mlp: layer sizes must be positive");

    ParamGraph g;
    g.layer_sizes = layer_sizes;
    g.activations = activations;
    g.params.resize(static_cast<std::size_t>(param_count_for(layer_sizes)));

    // Weights get fan-in uniform init; biases start at zero.
    std::uint64_t index = 0;
    std::size_t p = 0;
    for (int l = 0; l + 1 < static_cast<int>(layer_sizes.size()); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        const double bound = std::sqrt(1.0 / fan_in);
        for (int i = 0; i < fan_in * fan_out; ++i)
            g.params[p++] = counter_uniform(seed, index++, bound);
        for (int i = 0; i < fan_out; ++i) g.params[p++] = 0.0;
        index += static_cast<std::uint64_t>(fan_out);  // keep counters layout-stable
    }
    return g;
}

ParamGraph make_mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                    std::uint64_t seed, Act act) {
    std::vector<int> sizes;
    sizes.push_back(input_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(output_dim);
    std::vector<Act> acts(hidden.size(), act);
    acts.push_back(Act::identity);
    return make_mlp(sizes, acts, seed);
}

void forward_batch(const ParamGraph& g, const double* x, int batch, BatchTrace& trace) {
    const int layers = g.num_layers();
    trace.batch = batch;
    trace.pre.resize(static_cast<std::size_t>(layers));
    trace.post.resize(static_cast<std::size_t>(layers));

    const double* input = x;
    int in_dim = g.input_dim();
    for (int l = 0; l < layers; ++l) {
        const int out_dim = g.layer_sizes[l + 1];
        auto& pre = trace.pre[static_cast<std::size_t>(l)];
        auto& post = trace.post[static_cast<std::size_t>(l)];
        pre.assign(static_cast<std::size_t>(batch) * out_dim, 0.0);
        post.resize(static_cast<std::size_t>(batch) * out_dim);

        const double* w = g.params.data() + g.weight_offset(l);
        const double* b = g.params.data() + g.bias_offset(l);
        for (int bi = 0; bi < batch; ++bi) {
            const double* xi = input + static_cast<std::size_t>(bi) * in_dim;
            double* zi = pre.data() + static_cast<std::size_t>(bi) * out_dim;
            for (int o = 0; o < out_dim; ++o) {
                const double* wrow = w + static_cast<std::size_t>(o) * in_dim;
                double acc = b[o];
                for (int i = 0; i < in_dim; ++i) acc += wrow[i] * xi[i];
                zi[o] = acc;
            }
        }
        apply_activation(g.activations[static_cast<std::size_t>(l)], pre.data(), post.data(),
                         batch * out_dim);
        input = post.data();
        in_dim = out_dim;
    }
}

void backward_batch(const ParamGraph& g, const BatchTrace& trace, const double* x,
                    const double* upstream, int batch, double* grad_params, double* grad_x) {
    const int layers = g.num_layers();
    const int out_dim_last = g.output_dim();

    std::vector<double> delta(upstream,
                              upstream + static_cast<std::size_t>(batch) * out_dim_last);
    std::vector<double> delta_prev;

    for (int l = layers - 1; l >= 0; --l) {
        const int out_dim = g.layer_sizes[l + 1];
        const int in_dim = g.layer_sizes[l];
        const auto& pre = trace.pre[static_cast<std::size_t>(l)];
        const auto& post = trace.post[static_cast<std::size_t>(l)];
        apply_activation_grad(g.activations[static_cast<std::size_t>(l)], pre.data(), post.data(),
                              delta.data(), batch * out_dim);

        const double* layer_in =
            l == 0 ? x : trace.post[static_cast<std::size_t>(l - 1)].data();
        double* gw = grad_params + g.weight_offset(l);
        double* gb = grad_params + g.bias_offset(l);
        for (int bi = 0; bi < batch; ++bi) {
            const double* ai = layer_in + static_cast<std::size_t>(bi) * in_dim;
            const double* di = delta.data() + static_cast<std::size_t>(bi) * out_dim;
            for (int o = 0; o < out_dim; ++o) {
                const double d = di[o];
                if (d == 0.0) continue;
                double* gwrow = gw + static_cast<std::size_t>(o) * in_dim;
                for (int i = 0; i < in_dim; ++i) gwrow[i] += d * ai[i];
                gb[o] += d;
            }
        }

        const bool need_input_grad = l > 0 || grad_x != nullptr;
        if (!need_input_grad) break;

        delta_prev.assign(static_cast<std::size_t>(batch) * in_dim, 0.0);
        const double* w = g.params.data() + g.weight_offset(l);
        for (int bi = 0; bi < batch; ++bi) {
            const double* di = delta.data() + static_cast<std::size_t>(bi) * out_dim;
            double* dp = delta_prev.data() + static_cast<std::size_t>(bi) * in_dim;
            for (int o = 0; o < out_dim; ++o) {
                const double d = di[o];
                if (d == 0.0) continue;
                const double* wrow = w + static_cast<std::size_t>(o) * in_dim;
                for (int i = 0; i < in_dim; ++i) dp[i] += d * wrow[i];
            }
        }
        if (l == 0) {
            std::memcpy(grad_x, delta_prev.data(),
                        sizeof(double) * static_cast<std::size_t>(batch) * in_dim);
        } else {
            delta.swap(delta_prev);
        }
    }
}

std::vector<double> forward(const ParamGraph& g, std::span<const double> x) {
    if (static_cast<int>(x.size()) != g.input_dim())
        throw DimensionError("forward: input length " + std::to_string(x.size()) +
                             " != graph input dim " + std::to_string(g.input_dim()));
    BatchTrace trace;
    forward_batch(g, x.data(), 1, trace);
    return trace.post.back();
}

Gradients backward(const ParamGraph& g, std::span<const double> x,
                   std::span<const double> upstream) {
    if (static_cast<int>(x.size()) != g.input_dim())
        throw DimensionError("backward: input length mismatch");
    if (static_cast<int>(upstream.size()) != g.output_dim())
        throw DimensionError("backward: upstream length " + std::to_string(upstream.size()) +
                             " != output dim " + std::to_string(g.output_dim()));
    BatchTrace trace;
    forward_batch(g, x.data(), 1, trace);
    Gradients grads;
    grads.params.assign(g.params.size(), 0.0);
    grads.input.assign(static_cast<std::size_t>(g.input_dim()), 0.0);
    backward_batch(g, trace, x.data(), upstream.data(), 1, grads.params.data(),
                   grads.input.data());
    return grads;
}

AdamState make_adam(int param_count, double learning_rate, double grad_clip_norm) {
    AdamState s;
    s.first_moment.assign(static_cast<std::size_t>(param_count), 0.0);
    s.second_moment.assign(static_cast<std::size_t>(param_count), 0.0);
    s.learning_rate = learning_rate;
    s.grad_clip_norm = grad_clip_norm;
    return s;
}

void adam_step_inplace(AdamState& state, std::vector<double>& params,
                       std::span<const double> grads) {
    const std::size_t n = params.size();
    if (grads.size() != n || state.first_moment.size() != n)
        throw DimensionError("adam_step: parameter/gradient/moment sizes differ");

    double sq = 0.0;
    for (double gv : grads) sq += gv * gv;
    if (!std::isfinite(sq))
        throw TrainingDivergence("adam_step: non-finite gradient at step " +
                                 std::to_string(state.step + 1));
    const double norm = std::sqrt(sq);
    const double scale =
        (state.grad_clip_norm > 0.0 && norm > state.grad_clip_norm) ? state.grad_clip_norm / norm
                                                                    : 1.0;

    state.step += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        const double gv = grads[i] * scale;
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * gv;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * gv * gv;
        const double mhat = state.first_moment[i] / b1t;
        const double vhat = state.second_moment[i] / b2t;
        params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
}

std::pair<std::vector<double>, AdamState> adam_step(const AdamState& state,
                                                    std::span<const double> params,
                                                    std::span<const double> grads) {
    std::vector<double> p(params.begin(), params.end());
    AdamState s = state;
    adam_step_inplace(s, p, grads);
    return {std::move(p), std::move(s)};
}

std::vector<double> polyak_update(std::span<const double> target, std::span<const double> online,
                                  double tau) {
    if (target.size() != online.size())
        throw DimensionError("polyak_update: length mismatch");
    if (!(tau > 0.0 && tau <= 1.0)) throw DimensionError("polyak_update: tau must be in (0,1]");
    std::vector<double> out(target.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - tau) * target[i] + tau * online[i];
    return out;
}

void polyak_update_inplace(std::vector<double>& target, std::span<const double> online,
                           double tau) {
    if (target.size() != online.size())
        throw DimensionError("polyak_update: length mismatch");
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i] = (1.0 - tau) * target[i] + tau * online[i];
}

double GaussianHead::nll(std::span<const double> raw_output, std::span<const double> sample,
                         std::span<double> grad_raw) {
    const int dim = static_cast<int>(sample.size());
    if (static_cast<int>(raw_output.size()) != 2 * dim ||
        static_cast<int>(grad_raw.size()) != 2 * dim)
        throw DimensionError("GaussianHead::nll: raw output must be 2*dim");
    double loss = 0.0;
    for (int j = 0; j < dim; ++j) {
        const double mu = raw_output[static_cast<std::size_t>(j)];
        double log_std = raw_output[static_cast<std::size_t>(dim + j)];
        const bool clamped_lo = log_std < kLogStdMin;
        const bool clamped_hi = log_std > kLogStdMax;
        log_std = std::clamp(log_std, kLogStdMin, kLogStdMax);
        const double inv_var = std::exp(-2.0 * log_std);
        const double diff = sample[static_cast<std::size_t>(j)] - mu;
        loss += 0.5 * diff * diff * inv_var + log_std;
        grad_raw[static_cast<std::size_t>(j)] = -diff * inv_var;
        const double g_logstd = 1.0 - diff * diff * inv_var;
        grad_raw[static_cast<std::size_t>(dim + j)] = (clamped_lo || clamped_hi) ? 0.0 : g_logstd;
    }
    return loss;
}

void GaussianHead::mean(std::span<const double> raw_output, std::span<double> out) {
    const int dim = static_cast<int>(out.size());
    if (static_cast<int>(raw_output.size()) != 2 * dim)
        throw DimensionError("GaussianHead::mean: raw output must be 2*dim");
    for (int j = 0; j < dim; ++j) out[static_cast<std::size_t>(j)] = raw_output[static_cast<std::size_t>(j)];
}

}  // namespace spar::nn
