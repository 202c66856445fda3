#include "plmarl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace plmarl {

namespace {

constexpr const char* kCsvHeader =
    "iteration,env_steps,mean_return,encoder_loss,decoder_loss,ranking_loss,"
    "order_entropy,approx_kl\n";

std::string jsonl_row(const IterationMetrics& m) {
    std::ostringstream out;
    out << "{\"iteration\":" << m.iteration << ",\"env_steps\":" << m.env_steps
        << ",\"mean_return\":" << format_double(m.mean_return)
        << ",\"encoder_loss\":" << format_double(m.encoder_loss)
        << ",\"decoder_loss\":" << format_double(m.decoder_loss);
    if (m.ranking_active) out << ",\"ranking_loss\":" << format_double(m.ranking_loss);
    out << ",\"order_entropy\":" << format_double(m.order_entropy)
        << ",\"approx_kl\":" << format_double(m.approx_kl) << "}\n";
    return out.str();
}

std::string csv_row(const IterationMetrics& m) {
    std::ostringstream out;
    out << m.iteration << ',' << m.env_steps << ',' << format_double(m.mean_return) << ','
        << format_double(m.encoder_loss) << ',' << format_double(m.decoder_loss) << ',';
    if (m.ranking_active) out << format_double(m.ranking_loss);
    out << ',' << format_double(m.order_entropy) << ',' << format_double(m.approx_kl) << '\n';
    return out.str();
}

void append_line(const std::filesystem::path& path, const std::string& line) {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    if (!f) throw std::runtime_error("cannot open for appending: " + path.string());
    f << line;
    f.flush();
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

std::string format_double(double v) {
    if (std::isnan(v)) return "NaN";
    if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
    char buf[64];
    // Shortest representation that round-trips: try increasing precision.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

MetricsLog::MetricsLog(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    std::ofstream jsonl(jsonl_path(), std::ios::binary | std::ios::trunc);
    std::ofstream csv(csv_path(), std::ios::binary | std::ios::trunc);
    if (!jsonl || !csv)
        throw std::runtime_error("cannot create metrics files in " + dir_.string());
    csv << kCsvHeader;
}

void MetricsLog::append(const IterationMetrics& m) {
    rows_.push_back(m);
    append_line(jsonl_path(), jsonl_row(m));
    append_line(csv_path(), csv_row(m));
}

std::string MetricsLog::render_jsonl() const {
    std::string out;
    for (const auto& m : rows_) out += jsonl_row(m);
    return out;
}

std::string MetricsLog::render_csv() const {
    std::string out = kCsvHeader;
    for (const auto& m : rows_) out += csv_row(m);
    return out;
}

}  // namespace plmarl
