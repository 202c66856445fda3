#pragma once

// Training metrics sink: one record per iteration, emitted as JSON Lines and
// mirrored as CSV. Construction truncates both files (writing the CSV
// header); each append adds exactly one line to each, so logging cost stays
// constant per iteration. The formatting is fixed (shortest-exact doubles,
// stable field order) so identical runs produce byte-identical outputs.

#include "plmarl/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace plmarl {

class MetricsLog {
public:
    explicit MetricsLog(std::filesystem::path dir);

    void append(const IterationMetrics& m);

    const std::vector<IterationMetrics>& rows() const { return rows_; }
    std::filesystem::path jsonl_path() const { return dir_ / "metrics.jsonl"; }
    std::filesystem::path csv_path() const { return dir_ / "metrics.csv"; }

    // Rendered file bodies (exposed for tests; rebuilt from the cached rows).
    std::string render_jsonl() const;
    std::string render_csv() const;

private:
    std::filesystem::path dir_;
    std::vector<IterationMetrics> rows_;
};

// Fixed numeric rendering used across all artifacts: shortest decimal form
// that parses back to the same double.
std::string format_double(double v);

}  // namespace plmarl
