#include "spar/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "spar/errors.hpp"

namespace spar {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid numeric value '" + s + "'");
    }
}

int parse_int(const std::string& s) {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("invalid integer value '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("invalid boolean value '" + s + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<std::pair<std::string, Field>>& field_table() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        auto add_str = [&t](const char* key, std::string RunConfig::* m) {
            t.push_back({key,
                         {[m](const RunConfig& c) { return c.*m; },
                          [m](RunConfig& c, const std::string& v) { c.*m = v; }}});
        };
        auto add_int = [&t](const char* key, int RunConfig::* m) {
            t.push_back({key,
                         {[m](const RunConfig& c) { return std::to_string(c.*m); },
                          [m](RunConfig& c, const std::string& v) { c.*m = parse_int(v); }}});
        };
        auto add_dbl = [&t](const char* key, double RunConfig::* m) {
            t.push_back({key,
                         {[m](const RunConfig& c) { return fmt_double(c.*m); },
                          [m](RunConfig& c, const std::string& v) { c.*m = parse_double(v); }}});
        };
        auto add_bool = [&t](const char* key, bool RunConfig::* m) {
            t.push_back({key,
                         {[m](const RunConfig& c) { return c.*m ? std::string("true")
                                                                : std::string("false"); },
                          [m](RunConfig& c, const std::string& v) { c.*m = parse_bool(v); }}});
        };

        add_str("env", &RunConfig::env);
        add_str("behavior", &RunConfig::behavior);
        t.push_back({"seeds",
                     {[](const RunConfig& c) {
                          std::string out;
                          for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                              if (i) out += ",";
                              out += std::to_string(c.seeds[i]);
                          }
                          return out;
                      },
                      [](RunConfig& c, const std::string& v) {
                          c.seeds.clear();
                          std::stringstream ss(v);
                          std::string item;
                          while (std::getline(ss, item, ',')) {
                              item = trim(item);
                              if (item.empty()) continue;
                              c.seeds.push_back(
                                  static_cast<std::uint64_t>(std::stoull(item)));
                          }
                          if (c.seeds.empty()) throw ConfigError("seeds: empty list");
                      }}});
        add_bool("desk_scale", &RunConfig::desk_scale);
        add_str("output_dir", &RunConfig::output_dir);
        add_int("data.size", &RunConfig::dataset_size);
        add_dbl("data.rho", &RunConfig::rho);
        add_int("stage1.steps", &RunConfig::stage1_steps);
        add_int("stage1.batch", &RunConfig::batch);
        add_dbl("stage1.lr", &RunConfig::learning_rate);
        add_dbl("stage1.gamma", &RunConfig::gamma);
        add_dbl("stage1.polyak", &RunConfig::polyak_tau);
        add_dbl("stage1.expectile_tau", &RunConfig::expectile_tau);
        add_dbl("stage1.value_expectile", &RunConfig::value_expectile);
        add_int("stage1.critics", &RunConfig::num_critics);
        add_dbl("stage1.lambda_u", &RunConfig::lambda_u);
        add_int("net.hidden", &RunConfig::hidden);
        add_dbl("net.grad_clip", &RunConfig::grad_clip);
        add_str("stage2.variant", &RunConfig::variant);
        add_int("stage2.steps", &RunConfig::stage2_steps);
        add_dbl("stage2.lambda_g", &RunConfig::lambda_g);
        add_int("stage2.latent_dim", &RunConfig::latent_dim);
        add_dbl("stage2.beta_kl", &RunConfig::beta_kl);
        add_dbl("stage2.recon_weight", &RunConfig::recon_weight);
        add_int("stage2.K", &RunConfig::candidates);
        add_int("stage2.projection_period", &RunConfig::projection_period);
        add_dbl("stage2.ema_tau", &RunConfig::ema_tau);
        add_str("weighting.sensitivity", &RunConfig::sensitivity);
        add_str("weighting.filter", &RunConfig::filter);
        add_dbl("weighting.temperature", &RunConfig::temperature);
        add_dbl("weighting.clip", &RunConfig::weight_clip);
        add_dbl("gate.eta_abs", &RunConfig::eta_abs);
        add_dbl("gate.eta_rel", &RunConfig::eta_rel);
        add_dbl("gate.epsilon", &RunConfig::gate_epsilon);
        add_int("gate.k_infer", &RunConfig::k_infer);
        add_int("run.eval_freq", &RunConfig::eval_freq);
        add_int("run.log_freq", &RunConfig::log_freq);
        add_int("run.eval_episodes", &RunConfig::eval_episodes);
        add_int("run.max_consecutive_errors", &RunConfig::max_consecutive_errors);
        return t;
    }();
    return table;
}

const Field& find_field(const std::string& key) {
    for (const auto& [k, f] : field_table())
        if (k == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

BehaviorTier RunConfig::resolved_behavior() const {
    if (behavior != "auto") return behavior_from_string(behavior);
    switch (env_name()) {
        case EnvName::unimodal_quad: return BehaviorTier::medium;
        case EnvName::bimodal_bandit: return BehaviorTier::mixture_expert;
        case EnvName::narrow_ridge: return BehaviorTier::medium;
        case EnvName::branch_maze: return BehaviorTier::sparse_diverse;
    }
    return BehaviorTier::medium;
}

Stage2Variant RunConfig::resolved_variant() const {
    if (variant != "auto") return variant_from_string(variant);
    return env_name() == EnvName::unimodal_quad ? Stage2Variant::mlp : Stage2Variant::proj;
}

double RunConfig::resolved_expectile_tau() const {
    if (expectile_tau > 0.0) return expectile_tau;
    return env_name() == EnvName::branch_maze ? 0.9 : 0.5;
}

Filter RunConfig::resolved_filter() const {
    if (filter != "auto") return filter_from_string(filter);
    switch (env_name()) {
        case EnvName::unimodal_quad:
        case EnvName::bimodal_bandit: return Filter::hard;
        case EnvName::narrow_ridge:
        case EnvName::branch_maze: return Filter::soft;
    }
    return Filter::soft;
}

double RunConfig::resolved_temperature() const {
    if (temperature > 0.0) return temperature;
    return env_name() == EnvName::unimodal_quad ? 1.0 : 0.3;
}

std::vector<int> RunConfig::effective_hidden() const {
    const int h = desk_scale ? 32 : hidden;
    return {h, h};
}

std::vector<int> RunConfig::effective_cvae_hidden() const {
    const int h = desk_scale ? 32 : hidden;
    return {h, h, h};
}

WeightingConfig RunConfig::weighting_config() const {
    WeightingConfig w;
    w.sensitivity = sensitivity_from_string(sensitivity);
    w.filter = resolved_filter();
    w.temperature = resolved_temperature();
    w.weight_clip = weight_clip;
    return w;
}

Stage1Config RunConfig::stage1_config(std::uint64_t seed) const {
    Stage1Config c;
    c.steps = effective_stage1_steps();
    c.batch = batch;
    c.learning_rate = learning_rate;
    c.grad_clip = grad_clip;
    c.polyak_tau = polyak_tau;
    c.gamma = gamma;
    c.expectile_tau = resolved_expectile_tau();
    c.value_expectile = value_expectile;
    c.lambda_u = lambda_u;
    c.num_critics = num_critics;
    c.hidden = effective_hidden();
    const auto e = env_name();
    c.gaussian_policy = e == EnvName::bimodal_bandit || e == EnvName::branch_maze;
    c.max_consecutive_errors = max_consecutive_errors;
    c.seed = seed;
    return c;
}

Stage2Config RunConfig::stage2_config(std::uint64_t seed) const {
    Stage2Config c;
    c.variant = resolved_variant();
    c.steps = effective_stage2_steps();
    c.batch = batch;
    c.learning_rate = learning_rate;
    c.grad_clip = grad_clip;
    c.lambda_g = lambda_g;
    c.weighting = weighting_config();
    c.latent_dim = latent_dim;
    c.beta_kl = beta_kl;
    c.recon_weight = recon_weight;
    c.candidates = candidates;
    c.projection_period = projection_period;
    c.ema_tau = ema_tau;
    c.hidden = effective_hidden();
    c.cvae_hidden = effective_cvae_hidden();
    c.max_consecutive_errors = max_consecutive_errors;
    c.seed = seed;
    return c;
}

GateConfig RunConfig::gate_config() const {
    GateConfig g;
    g.eta_abs = eta_abs;
    g.eta_rel = eta_rel;
    g.epsilon = gate_epsilon;
    g.k_infer = k_infer;
    return g;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    find_field(key).set(*this, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : field_table()) out.push_back(k);
    return out;
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [k, f] : field_table()) {
        out += k;
        out += " = ";
        out += f.get(*this);
        out += "\n";
    }
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void RunConfig::save_file(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("config: cannot open '" + path + "' for writing");
    f << serialize();
}

}  // namespace spar
