#include "spar/metrics.hpp"

#include <cstdio>

#include "spar/errors.hpp"

namespace spar {

MetricsLog::MetricsLog(const std::string& path) : file_(path, std::ios::trunc) {
    if (!file_) throw IoError("metrics: cannot open '" + path + "'");
}

std::string MetricsLog::format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void MetricsLog::row(int step, const std::string& phase,
                     const std::vector<std::pair<std::string, double>>& values) {
    if (!file_.is_open()) return;
    file_ << "step=" << step << " phase=" << phase;
    for (const auto& [k, v] : values) file_ << " " << k << "=" << format_value(v);
    file_ << "\n";
    file_.flush();
}

}  // namespace spar
