#pragma once

// Rollout storage and generalized advantage estimation.
//
// A batch is a flat sequence of timesteps; `dones` delimits episodes, and the
// GAE recursion never bootstraps across a done flag, so independently
// collected segments can be concatenated as long as each ends on an episode
// boundary.

#include "plmarl/common.hpp"

namespace plmarl {

struct RolloutBatch {
    int n_agents = 0;
    int obs_dim = 0;

    // per timestep t (row t*n_agents..t*n_agents+n-1 of observations)
    Matrix<double> observations;        // (T * n_agents) x obs_dim
    std::vector<Permutation> orders;    // T
    Vector<double> order_log_probs;     // T, behavior
    MatrixXi actions;                   // T x n_agents, agent-indexed
    Matrix<double> behavior_log_probs;  // T x n_agents, agent-indexed
    Vector<double> rewards;             // T, shared team reward
    Matrix<double> values;              // T x n_agents, collection-time estimates
    std::vector<std::uint8_t> dones;    // T

    // filled by compute_gae
    Vector<double> advantages;     // T
    Vector<double> value_targets;  // T
    bool gae_ready = false;

    int size() const { return static_cast<int>(orders.size()); }

    void reserve(int T) {
        observations.resize(static_cast<Eigen::Index>(T) * n_agents, obs_dim);
        orders.reserve(static_cast<std::size_t>(T));
        order_log_probs.resize(T);
        actions.resize(T, n_agents);
        behavior_log_probs.resize(T, n_agents);
        rewards.resize(T);
        values.resize(T, n_agents);
        dones.reserve(static_cast<std::size_t>(T));
    }

    void validate() const {
        const int T = size();
        if (T == 0) throw std::invalid_argument("rollout batch: empty");
        if (observations.rows() != static_cast<Eigen::Index>(T) * n_agents ||
            observations.cols() != obs_dim)
            throw std::logic_error("rollout batch: observation shape mismatch");
        if (order_log_probs.size() != T || rewards.size() != T ||
            static_cast<int>(dones.size()) != T)
            throw std::logic_error("rollout batch: per-timestep field size mismatch");
        if (actions.rows() != T || actions.cols() != n_agents ||
            behavior_log_probs.rows() != T || behavior_log_probs.cols() != n_agents ||
            values.rows() != T || values.cols() != n_agents)
            throw std::logic_error("rollout batch: per-agent field shape mismatch");
        for (int t = 0; t < T; ++t) {
            if (orders[static_cast<std::size_t>(t)].size() != n_agents)
                throw std::logic_error("rollout batch: order size mismatch");
            if (order_log_probs[t] > 1e-9)
                throw std::logic_error("rollout batch: behavior order log-prob must be <= 0");
            for (int i = 0; i < n_agents; ++i)
                if (behavior_log_probs(t, i) > 1e-9)
                    throw std::logic_error("rollout batch: behavior log-probs must be <= 0");
        }
    }
};

// Mean-of-agent-values GAE:
//   Vhat_t  = mean_i values(t, i)
//   delta_t = R_t + gamma * Vhat_{t+1} * (1 - done_t) - Vhat_t
//   A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
//   target  = A_t + Vhat_t
// bootstrap_value stands in for Vhat_T when the final step is not done.
inline void compute_gae(RolloutBatch& batch, double gamma, double lambda,
                        double bootstrap_value = 0.0) {
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("compute_gae: gamma must be in [0,1]");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("compute_gae: lambda must be in [0,1]");
    const int T = batch.size();
    if (T == 0) throw std::invalid_argument("compute_gae: empty batch");
    if (batch.values.rows() != T || batch.values.cols() != batch.n_agents)
        throw std::logic_error("compute_gae: values missing or mis-shaped");
    if (!batch.values.allFinite()) throw std::logic_error("compute_gae: values must be finite");

    Vector<double> vhat(T);
    for (int t = 0; t < T; ++t) vhat[t] = batch.values.row(t).mean();
    batch.advantages.resize(T);
    batch.value_targets.resize(T);
    double carry = 0.0;
    for (int t = T - 1; t >= 0; --t) {
        const double not_done = batch.dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
        const double next_v = (t + 1 < T) ? vhat[t + 1] : bootstrap_value;
        const double delta = batch.rewards[t] + gamma * next_v * not_done - vhat[t];
        carry = delta + gamma * lambda * not_done * carry;
        batch.advantages[t] = carry;
        batch.value_targets[t] = carry + vhat[t];
    }
    if (!batch.advantages.allFinite()) throw std::logic_error("compute_gae: advantages not finite");
    batch.gae_ready = true;
}

}  // namespace plmarl
