#pragma once

// Exact ground truth for finite games: value/action-value solves for an
// explicit product policy, multi-agent advantages of agent subsets given
// action prefixes, the order-decomposition identity check, and brute-force
// search over decision orders with greedy sequential best response.

#include "plmarl/envs.hpp"

#include <Eigen/Dense>

namespace plmarl::oracle {

using envs::TabularGame;

// Product policy: one stochastic matrix (n_states x n_actions) per agent.
struct TabularPolicy {
    std::vector<Matrix<double>> factors;

    static TabularPolicy uniform(const TabularGame& game) {
        TabularPolicy p;
        p.factors.assign(static_cast<std::size_t>(game.n_agents),
                         Matrix<double>::Constant(game.n_states, game.n_actions,
                                                  1.0 / game.n_actions));
        return p;
    }

    double joint_prob(int s, const std::vector<int>& actions) const {
        double p = 1.0;
        for (std::size_t i = 0; i < factors.size(); ++i)
            p *= factors[i](s, actions[i]);
        return p;
    }

    void validate(const TabularGame& game) const {
        if (static_cast<int>(factors.size()) != game.n_agents)
            throw std::invalid_argument("policy: one factor per agent required");
        for (const auto& f : factors) {
            if (f.rows() != game.n_states || f.cols() != game.n_actions)
                throw std::invalid_argument("policy: factor shape must be n_states x n_actions");
            if ((f.array() < 0.0).any())
                throw std::invalid_argument("policy: probabilities must be non-negative");
            for (Eigen::Index s = 0; s < f.rows(); ++s)
                if (std::abs(f.row(s).sum() - 1.0) > 1e-9)
                    throw std::invalid_argument("policy: rows must sum to 1");
        }
    }
};

struct ExactValues {
    Vector<double> v;   // per state
    Matrix<double> q;   // n_states x A^n
};

// Solve V = R_pi + gamma * P_pi * V directly, then Q by one-step lookahead.
inline ExactValues exact_values(const TabularGame& game, const TabularPolicy& policy) {
    game.validate();
    policy.validate(game);
    const int S = game.n_states;
    const std::int64_t J = game.joint_count();
    Vector<double> r_pi = Vector<double>::Zero(S);
    Matrix<double> p_pi = Matrix<double>::Zero(S, S);
    for (int s = 0; s < S; ++s)
        for (std::int64_t j = 0; j < J; ++j) {
            const double w = policy.joint_prob(s, game.joint_actions(j));
            if (w == 0.0) continue;
            r_pi[s] += w * game.reward(s, j);
            p_pi.row(s) += w * game.transition.row(s * J + j);
        }
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(S, S) - game.gamma * p_pi;
    ExactValues out;
    out.v = a.partialPivLu().solve(Eigen::VectorXd(r_pi));
    out.q.resize(S, J);
    for (int s = 0; s < S; ++s)
        for (std::int64_t j = 0; j < J; ++j)
            out.q(s, j) = game.reward(s, j) +
                          game.gamma * game.transition.row(s * J + j).dot(out.v);
    return out;
}

// Independent Bellman-residual check: max_s |V(s) - (R_pi + gamma P_pi V)(s)|.
inline double bellman_residual(const ExactValues& values, const TabularGame& game,
                               const TabularPolicy& policy) {
    const std::int64_t J = game.joint_count();
    double worst = 0.0;
    for (int s = 0; s < game.n_states; ++s) {
        double rhs = 0.0;
        for (std::int64_t j = 0; j < J; ++j) {
            const double w = policy.joint_prob(s, game.joint_actions(j));
            if (w == 0.0) continue;
            rhs += w * (game.reward(s, j) + game.gamma * game.transition.row(s * J + j).dot(values.v));
        }
        worst = std::max(worst, std::abs(values.v[s] - rhs));
    }
    return worst;
}

// Q-value of a fixed action assignment for a subset of agents, with every
// other agent integrated out under the policy.
inline double q_marginal(const ExactValues& values, const TabularGame& game,
                         const TabularPolicy& policy, int s, const std::vector<int>& set_agents,
                         const std::vector<int>& set_actions) {
    if (set_agents.size() != set_actions.size())
        throw std::invalid_argument("q_marginal: agents and actions must pair up");
    std::vector<int> fixed(static_cast<std::size_t>(game.n_agents), -1);
    for (std::size_t i = 0; i < set_agents.size(); ++i) {
        const int a = set_agents[i];
        if (a < 0 || a >= game.n_agents) throw std::invalid_argument("q_marginal: agent id out of range");
        if (fixed[static_cast<std::size_t>(a)] != -1)
            throw std::invalid_argument("q_marginal: duplicate agent in subset");
        if (set_actions[i] < 0 || set_actions[i] >= game.n_actions)
            throw std::invalid_argument("q_marginal: action id out of range");
        fixed[static_cast<std::size_t>(a)] = set_actions[i];
    }
    const std::int64_t J = game.joint_count();
    double total = 0.0;
    for (std::int64_t j = 0; j < J; ++j) {
        const std::vector<int> joint = game.joint_actions(j);
        double w = 1.0;
        bool compatible = true;
        for (int i = 0; i < game.n_agents; ++i) {
            const int want = fixed[static_cast<std::size_t>(i)];
            if (want >= 0) {
                if (joint[static_cast<std::size_t>(i)] != want) {
                    compatible = false;
                    break;
                }
            } else {
                w *= policy.factors[static_cast<std::size_t>(i)](s, joint[static_cast<std::size_t>(i)]);
            }
        }
        if (compatible) total += w * values.q(s, j);
    }
    return total;
}

// Advantage of `new_agents` playing `new_actions` on top of a committed
// prefix, with everyone else integrated out:
//   A = Q^{prefix + new}(s, ...) - Q^{prefix}(s, ...).
inline double multi_agent_advantage(const ExactValues& values, const TabularGame& game,
                                    const TabularPolicy& policy, int s,
                                    const std::vector<int>& prefix_agents,
                                    const std::vector<int>& prefix_actions,
                                    const std::vector<int>& new_agents,
                                    const std::vector<int>& new_actions) {
    for (int a : new_agents)
        for (int b : prefix_agents)
            if (a == b) throw std::invalid_argument("multi_agent_advantage: subsets must be disjoint");
    if (new_agents.empty()) return 0.0;
    std::vector<int> both_agents = prefix_agents, both_actions = prefix_actions;
    both_agents.insert(both_agents.end(), new_agents.begin(), new_agents.end());
    both_actions.insert(both_actions.end(), new_actions.begin(), new_actions.end());
    return q_marginal(values, game, policy, s, both_agents, both_actions) -
           q_marginal(values, game, policy, s, prefix_agents, prefix_actions);
}

// |A(s, joint) - sum of sequential per-agent advantages along the order|.
inline double verify_decomposition(const ExactValues& values, const TabularGame& game,
                                   const TabularPolicy& policy, int s, const Permutation& order,
                                   const std::vector<int>& joint_action) {
    const double joint_adv = values.q(s, game.joint_index(joint_action)) - values.v[s];
    double total = 0.0;
    std::vector<int> prefix_agents, prefix_actions;
    for (int m = 0; m < order.size(); ++m) {
        const int agent = order.at(m);
        const int action = joint_action[static_cast<std::size_t>(agent)];
        total += multi_agent_advantage(values, game, policy, s, prefix_agents, prefix_actions,
                                       {agent}, {action});
        prefix_agents.push_back(agent);
        prefix_actions.push_back(action);
    }
    return std::abs(joint_adv - total);
}

struct OrderEvaluation {
    Permutation order;
    double joint_advantage = 0.0;
    std::vector<int> best_response_actions;  // agent-indexed
};

enum class SearchMode { greedy_sequential };

struct OrderSearchResult {
    std::vector<OrderEvaluation> evaluations;  // lexicographic order of permutations
    int argmax_index = 0;                      // ties: first (lexicographically smallest)
};

// Evaluate every order: each position's agent maximizes its advantage given
// the already-chosen prefix (everyone later integrated out under the policy);
// action ties break to the lowest id. The order's value is the advantage of
// the complete greedy joint action.
inline OrderSearchResult optimal_order_search(const ExactValues& values, const TabularGame& game,
                                              const TabularPolicy& policy, int s,
                                              SearchMode mode = SearchMode::greedy_sequential) {
    (void)mode;
    if (game.n_agents > 6)
        throw std::length_error("optimal_order_search: limited to n_agents <= 6");
    OrderSearchResult out;
    for (const Permutation& order : all_permutations(game.n_agents)) {
        OrderEvaluation ev;
        ev.order = order;
        std::vector<int> prefix_agents, prefix_actions;
        std::vector<int> joint(static_cast<std::size_t>(game.n_agents), 0);
        for (int m = 0; m < game.n_agents; ++m) {
            const int agent = order.at(m);
            int best_action = 0;
            double best_adv = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < game.n_actions; ++a) {
                const double adv = multi_agent_advantage(values, game, policy, s, prefix_agents,
                                                         prefix_actions, {agent}, {a});
                if (adv > best_adv) {
                    best_adv = adv;
                    best_action = a;
                }
            }
            joint[static_cast<std::size_t>(agent)] = best_action;
            prefix_agents.push_back(agent);
            prefix_actions.push_back(best_action);
        }
        ev.best_response_actions = joint;
        ev.joint_advantage = values.q(s, game.joint_index(joint)) - values.v[s];
        out.evaluations.push_back(std::move(ev));
    }
    out.argmax_index = 0;
    for (std::size_t i = 1; i < out.evaluations.size(); ++i)
        if (out.evaluations[i].joint_advantage >
            out.evaluations[static_cast<std::size_t>(out.argmax_index)].joint_advantage)
            out.argmax_index = static_cast<int>(i);
    return out;
}

}  // namespace plmarl::oracle
