#pragma once

// Exhaustive-order oracle report: for every state of a tabular-convertible
// environment, the greedy joint advantage of each decision order, the argmax
// order, per-state order-insensitivity flags, and residual summaries from the
// advantage-decomposition and Bellman checks. Rendered as deterministic JSON.

#include "plmarl/envs.hpp"

#include <string>
#include <utility>
#include <vector>

namespace plmarl {

struct OracleStateReport {
    int state = 0;
    std::vector<std::pair<std::string, double>> order_advantages;  // lexicographic orders
    std::string argmax_order;
    int argmax_first_agent = 0;
    double max_joint_advantage = 0.0;
    double min_joint_advantage = 0.0;
    bool order_insensitive = false;  // max - min < 1e-9
};

struct OracleReport {
    std::vector<OracleStateReport> states;
    bool all_states_order_insensitive = false;
    double decomposition_residual_max = 0.0;  // over all states, orders, joint actions
    double bellman_residual = 0.0;
    std::string json;  // full rendered report
};

// Evaluate the oracle on the environment's tabular form under the uniform baseline.
// Throws std::invalid_argument / std::length_error for unsupported shapes.
OracleReport build_oracle_report(const envs::EnvSpec& spec, double gamma);

}  // namespace plmarl
