#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "spar/errors.hpp"

namespace spar {

enum class Sensitivity : int { uniform = 0, exponential = 1 };
enum class Filter : int { soft = 0, hard = 1 };

struct WeightingConfig {
    Sensitivity sensitivity = Sensitivity::exponential;
    Filter filter = Filter::soft;
    double temperature = 0.3;
    double weight_clip = 100.0;
};

inline Sensitivity sensitivity_from_string(const std::string& s) {
    if (s == "uniform") return Sensitivity::uniform;
    if (s == "exponential") return Sensitivity::exponential;
    throw ConfigError("unknown sensitivity '" + s + "'");
}

inline Filter filter_from_string(const std::string& s) {
    if (s == "soft") return Filter::soft;
    if (s == "hard") return Filter::hard;
    throw ConfigError("unknown filter '" + s + "'");
}

inline std::string to_string(Sensitivity s) {
    return s == Sensitivity::uniform ? "uniform" : "exponential";
}
inline std::string to_string(Filter f) { return f == Filter::soft ? "soft" : "hard"; }

// w_base = exp(A~/T) (or 1 under uniform), clipped, then masked by 1{A~ > 0}
// under hard filtering. The indicator is strict: A~ == 0 is pruned.
inline double weight(const WeightingConfig& cfg, double a_tilde) {
    if (!std::isfinite(a_tilde)) throw DimensionError("weight: advantage must be finite");
    double w = 1.0;
    if (cfg.sensitivity == Sensitivity::exponential)
        w = std::exp(a_tilde / cfg.temperature);
    w = std::min(w, cfg.weight_clip);
    if (cfg.filter == Filter::hard && !(a_tilde > 0.0)) w = 0.0;
    return w;
}

// omega_k = w_k / sum_j w_j. When hard filtering removed every candidate the
// regression target degenerates to the best candidate (ties -> lowest index);
// `a_tildes` supplies the ranking for that fallback.
inline std::vector<double> normalize_weights(std::span<const double> ws,
                                             std::span<const double> a_tildes = {}) {
    std::vector<double> out(ws.begin(), ws.end());
    double sum = 0.0;
    for (double w : ws) {
        if (w < 0.0) throw DimensionError("normalize_weights: negative weight");
        sum += w;
    }
    if (sum > 0.0) {
        for (auto& w : out) w /= sum;
        return out;
    }
    std::size_t best = 0;
    if (!a_tildes.empty()) {
        for (std::size_t i = 1; i < a_tildes.size(); ++i)
            if (a_tildes[i] > a_tildes[best]) best = i;
    }
    std::fill(out.begin(), out.end(), 0.0);
    if (!out.empty()) out[best] = 1.0;
    return out;
}

}  // namespace spar
