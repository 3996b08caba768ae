#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace spar {

// Append-only, line-delimited metrics (crash-recoverable: each row is flushed
// complete). Values are formatted deterministically; wallclock timing goes to
// a separate sidecar so metric files byte-compare across identical runs.
class MetricsLog {
  public:
    MetricsLog() = default;
    explicit MetricsLog(const std::string& path);

    void row(int step, const std::string& phase,
             const std::vector<std::pair<std::string, double>>& values);
    bool open() const { return file_.is_open(); }

    static std::string format_value(double v);

  private:
    std::ofstream file_;
};

}  // namespace spar
