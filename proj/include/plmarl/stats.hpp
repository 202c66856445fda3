#pragma once

// Chi-square goodness-of-fit against an explicit discrete distribution.
// Cells with small expected counts are pooled before computing the statistic.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace plmarl::stats {

// Upper 0.99 quantile of the chi-square distribution with df degrees of
// freedom. Exact table for df <= 30, Wilson-Hilferty approximation above.
inline double chi_square_critical_99(int df) {
    static const double table[] = {
        6.6349, 9.2103, 11.3449, 13.2767, 15.0863, 16.8119, 18.4753, 20.0902,
        21.6660, 23.2093, 24.7250, 26.2170, 27.6882, 29.1412, 30.5779, 31.9999,
        33.4087, 34.8053, 36.1909, 37.5662, 38.9322, 40.2894, 41.6384, 42.9798,
        44.3141, 45.6417, 46.9629, 48.2782, 49.5879, 50.8922};
    if (df < 1) throw std::invalid_argument("chi_square_critical_99: df must be >= 1");
    if (df <= 30) return table[df - 1];
    const double z99 = 2.3263478740408408;
    const double c = 2.0 / (9.0 * df);
    const double t = 1.0 - c + z99 * std::sqrt(c);
    return df * t * t * t;
}

struct ChiSquareResult {
    double statistic = 0.0;
    int df = 0;
    double critical_99 = 0.0;
    bool pass = false;  // statistic below the 0.99 critical value
};

// counts[i] observed draws of outcome i; probs[i] the model probability.
// Adjacent cells are pooled until every pooled cell has expected count at
// least min_expected.
inline ChiSquareResult chi_square_goodness_of_fit(const std::vector<std::int64_t>& counts,
                                                  const std::vector<double>& probs,
                                                  double min_expected = 5.0) {
    if (counts.size() != probs.size() || counts.empty())
        throw std::invalid_argument("chi_square_goodness_of_fit: counts and probs must be non-empty and equal length");
    double total = 0.0;
    for (std::int64_t c : counts) total += static_cast<double>(c);

    std::vector<double> obs_groups, exp_groups;
    double obs_acc = 0.0, exp_acc = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        obs_acc += static_cast<double>(counts[i]);
        exp_acc += probs[i] * total;
        if (exp_acc >= min_expected) {
            obs_groups.push_back(obs_acc);
            exp_groups.push_back(exp_acc);
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    if (exp_acc > 0.0 || obs_acc > 0.0) {
        if (!exp_groups.empty()) {
            obs_groups.back() += obs_acc;
            exp_groups.back() += exp_acc;
        } else {
            obs_groups.push_back(obs_acc);
            exp_groups.push_back(exp_acc);
        }
    }
    if (exp_groups.size() < 2)
        throw std::invalid_argument("chi_square_goodness_of_fit: too few cells after pooling; draw more samples");

    ChiSquareResult r;
    for (std::size_t g = 0; g < exp_groups.size(); ++g) {
        const double d = obs_groups[g] - exp_groups[g];
        r.statistic += d * d / exp_groups[g];
    }
    r.df = static_cast<int>(exp_groups.size()) - 1;
    r.critical_99 = chi_square_critical_99(r.df);
    r.pass = r.statistic < r.critical_99;
    return r;
}

}  // namespace plmarl::stats
