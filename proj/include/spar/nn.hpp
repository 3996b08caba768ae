#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace spar::nn {

enum class Act : int { relu = 0, tanh = 1, identity = 2 };

// Fully-connected network with a flat parameter vector laid out as
// [W_0 (out x in, row-major), b_0, W_1, b_1, ...]. This is the single
// function-approximator type used by every network in the pipeline.
struct ParamGraph {
    std::vector<int> layer_sizes;  // L+1 entries: input, hidden..., output
    std::vector<Act> activations;  // L entries, one per affine layer
    std::vector<double> params;

    int num_layers() const { return static_cast<int>(activations.size()); }
    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    int param_count() const { return static_cast<int>(params.size()); }

    int weight_offset(int layer) const;
    int bias_offset(int layer) const;
};

int param_count_for(const std::vector<int>& layer_sizes);

// Fan-in uniform init (+-sqrt(1/fan_in)) with a counter-based RNG: parameter i
// depends only on (seed, i), so construction is reproducible and order-free.
ParamGraph make_mlp(const std::vector<int>& layer_sizes, const std::vector<Act>& activations,
                    std::uint64_t seed);

// Convenience: hidden layers all `act`, identity output.
ParamGraph make_mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                    std::uint64_t seed, Act act = Act::relu);

std::vector<double> forward(const ParamGraph& g, std::span<const double> x);

struct Gradients {
    std::vector<double> params;
    std::vector<double> input;
};

// Reverse-mode gradients of <upstream, forward(g, x)>.
Gradients backward(const ParamGraph& g, std::span<const double> x,
                   std::span<const double> upstream);

// Batched evaluation. X is row-major (batch x input_dim). The trace keeps
// pre-activations and activations per layer for the backward pass; reuse one
// trace across steps to avoid reallocation.
struct BatchTrace {
    int batch = 0;
    std::vector<std::vector<double>> pre;  // per layer, batch x out
    std::vector<std::vector<double>> post;

    const double* output() const { return post.back().data(); }
};

void forward_batch(const ParamGraph& g, const double* x, int batch, BatchTrace& trace);

// Accumulates parameter gradients of sum_b <upstream_b, forward(x_b)> into
// grad_params (not zeroed here) and, if grad_x is non-null, writes input
// gradients (batch x input_dim).
void backward_batch(const ParamGraph& g, const BatchTrace& trace, const double* x,
                    const double* upstream, int batch, double* grad_params, double* grad_x);

struct AdamState {
    std::int64_t step = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip_norm = 1.0;
};

AdamState make_adam(int param_count, double learning_rate = 3e-4, double grad_clip_norm = 1.0);

// Global-norm clip, then bias-corrected Adam. Throws TrainingDivergence on
// non-finite gradients. In-place; `adam_step` below is the pure variant.
void adam_step_inplace(AdamState& state, std::vector<double>& params,
                       std::span<const double> grads);

std::pair<std::vector<double>, AdamState> adam_step(const AdamState& state,
                                                    std::span<const double> params,
                                                    std::span<const double> grads);

// (1-tau)*target + tau*online elementwise.
std::vector<double> polyak_update(std::span<const double> target, std::span<const double> online,
                                  double tau);
void polyak_update_inplace(std::vector<double>& target, std::span<const double> online,
                           double tau);

// Diagonal-Gaussian head over a 2*dim output vector [mean..., log_std...].
// Used by the stochastic base policies.
struct GaussianHead {
    static constexpr double kLogStdMin = -5.0;
    static constexpr double kLogStdMax = 2.0;

    // Negative log-likelihood of `sample` (dropping the 0.5*log(2*pi) constant)
    // and its gradient w.r.t. the raw network output.
    static double nll(std::span<const double> raw_output, std::span<const double> sample,
                      std::span<double> grad_raw);
    static void mean(std::span<const double> raw_output, std::span<double> out);
};

}  // namespace spar::nn
