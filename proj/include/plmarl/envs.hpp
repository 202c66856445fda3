#pragma once

// Small cooperative Markov games with controllable order-dependence.
//
// key-agent-match: one uniformly drawn agent (the key) observes a target
// action; the team earns 0.5 when the key plays the target plus 0.5 times the
// fraction of non-key agents matching the key's actual action. Followers see
// only noise, so matching requires seeing the key's action first — the game
// is strictly order-sensitive.
//
// joint-guess: every agent observes a shared target; reward 1 iff all agents
// play it (order-insensitive control).
//
// tabular-generic: a random finite Markov game drawn from a seed.
//
// Each kind converts exactly to a TabularGame for the oracle; the simulator
// and the table are computed by independent code paths and cross-checked in
// tests.

#include "plmarl/common.hpp"

#include <cmath>

namespace plmarl::envs {

enum class EnvKind { key_agent_match, joint_guess, tabular_generic };

inline const char* to_string(EnvKind k) {
    switch (k) {
        case EnvKind::key_agent_match: return "key-agent-match";
        case EnvKind::joint_guess: return "joint-guess";
        case EnvKind::tabular_generic: return "tabular-generic";
    }
    return "?";
}

struct EnvSpec {
    EnvKind kind = EnvKind::key_agent_match;
    int n_agents = 3;
    int n_actions = 3;
    int max_episode_steps = 1;
    int n_states = 4;             // tabular-generic only
    std::uint64_t game_seed = 0;  // tabular-generic only

    int obs_dim() const {
        switch (kind) {
            case EnvKind::key_agent_match: return 2;  // (is_key, target-or-noise)
            case EnvKind::joint_guess: return n_actions;
            case EnvKind::tabular_generic: return n_states;
        }
        return 0;
    }

    void validate() const {
        if (n_actions < 2) throw std::invalid_argument("env: n_actions must be >= 2");
        if (n_agents < 1) throw std::invalid_argument("env: n_agents must be >= 1");
        if (kind == EnvKind::key_agent_match && n_agents < 2)
            throw std::invalid_argument("env: key-agent-match needs n_agents >= 2");
        if (max_episode_steps < 1) throw std::invalid_argument("env: max_episode_steps must be >= 1");
        if (kind == EnvKind::tabular_generic && n_states < 1)
            throw std::invalid_argument("env: n_states must be >= 1");
    }
};

// Finite Markov game in explicit tabular form. Joint actions are indexed
// mixed-radix with agent 0 as the least significant digit.
struct TabularGame {
    int n_agents = 0;
    int n_actions = 0;
    int n_states = 0;
    double gamma = 0.99;
    Vector<double> initial;      // S
    Matrix<double> reward;       // S x A^n
    Matrix<double> transition;   // (S * A^n) x S; row index s * A^n + joint

    std::int64_t joint_count() const { return ipow(n_actions, n_agents); }

    std::int64_t joint_index(const std::vector<int>& actions) const {
        if (static_cast<int>(actions.size()) != n_agents)
            throw std::invalid_argument("joint_index: one action per agent required");
        std::int64_t idx = 0, mul = 1;
        for (int i = 0; i < n_agents; ++i) {
            if (actions[static_cast<std::size_t>(i)] < 0 || actions[static_cast<std::size_t>(i)] >= n_actions)
                throw std::invalid_argument("joint_index: action id out of range");
            idx += mul * actions[static_cast<std::size_t>(i)];
            mul *= n_actions;
        }
        return idx;
    }

    std::vector<int> joint_actions(std::int64_t idx) const {
        std::vector<int> a(static_cast<std::size_t>(n_agents));
        for (int i = 0; i < n_agents; ++i) {
            a[static_cast<std::size_t>(i)] = static_cast<int>(idx % n_actions);
            idx /= n_actions;
        }
        return a;
    }

    void validate() const {
        if (!reward.allFinite()) throw std::invalid_argument("tabular game: rewards must be finite");
        if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("tabular game: gamma must be in [0,1)");
        for (Eigen::Index r = 0; r < transition.rows(); ++r)
            if (std::abs(transition.row(r).sum() - 1.0) > 1e-12)
                throw std::invalid_argument("tabular game: transition rows must sum to 1");
        if (std::abs(initial.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("tabular game: initial distribution must sum to 1");
    }
};

struct StepResult {
    Matrix<double> obs;  // n_agents x obs_dim
    double reward = 0.0;
    bool done = false;
};

// Seeded simulator with the uniform interface used by rollouts.
class Env {
public:
    Env(const EnvSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
        spec_.validate();
        if (spec_.kind == EnvKind::tabular_generic) game_ = make_random_game(spec_);
    }

    const EnvSpec& spec() const { return spec_; }

    Matrix<double> reset() {
        step_i_ = 0;
        switch (spec_.kind) {
            case EnvKind::key_agent_match:
                key_ = rng_.uniform_int(spec_.n_agents);
                target_ = rng_.uniform_int(spec_.n_actions);
                break;
            case EnvKind::joint_guess:
                target_ = rng_.uniform_int(spec_.n_actions);
                break;
            case EnvKind::tabular_generic:
                state_ = sample_discrete(game_.initial);
                break;
        }
        return observations();
    }

    StepResult step(const std::vector<int>& actions) {
        if (static_cast<int>(actions.size()) != spec_.n_agents)
            throw std::invalid_argument("env step: one action per agent required");
        for (int a : actions)
            if (a < 0 || a >= spec_.n_actions)
                throw std::invalid_argument("env step: action id out of range");
        StepResult r;
        switch (spec_.kind) {
            case EnvKind::key_agent_match: {
                const int key_action = actions[static_cast<std::size_t>(key_)];
                double match = 0.0;
                for (int i = 0; i < spec_.n_agents; ++i)
                    if (i != key_ && actions[static_cast<std::size_t>(i)] == key_action) match += 1.0;
                r.reward = 0.5 * (key_action == target_ ? 1.0 : 0.0) +
                           0.5 * match / (spec_.n_agents - 1);
                break;
            }
            case EnvKind::joint_guess: {
                bool all = true;
                for (int a : actions) all = all && (a == target_);
                r.reward = all ? 1.0 : 0.0;
                break;
            }
            case EnvKind::tabular_generic: {
                const std::int64_t joint = game_.joint_index(actions);
                const Eigen::Index row = state_ * game_.joint_count() + joint;
                r.reward = game_.reward(state_, joint);
                state_ = sample_discrete(game_.transition.row(row).transpose());
                break;
            }
        }
        ++step_i_;
        r.done = step_i_ >= spec_.max_episode_steps;
        if (r.done) {
            r.obs = Matrix<double>::Zero(spec_.n_agents, spec_.obs_dim());
        } else {
            r.obs = observations();
        }
        return r;
    }

    // State index in the tabular frame (matches tabular_from_spec ordering).
    int state_id() const {
        switch (spec_.kind) {
            case EnvKind::key_agent_match: return key_ * spec_.n_actions + target_;
            case EnvKind::joint_guess: return target_;
            case EnvKind::tabular_generic: return state_;
        }
        return -1;
    }

    // Test/analysis hook: place the env in a specific state (resets the step counter).
    void force_state(int state_id) {
        step_i_ = 0;
        switch (spec_.kind) {
            case EnvKind::key_agent_match:
                if (state_id < 0 || state_id >= spec_.n_agents * spec_.n_actions)
                    throw std::invalid_argument("force_state: state id out of range");
                key_ = state_id / spec_.n_actions;
                target_ = state_id % spec_.n_actions;
                break;
            case EnvKind::joint_guess:
                if (state_id < 0 || state_id >= spec_.n_actions)
                    throw std::invalid_argument("force_state: state id out of range");
                target_ = state_id;
                break;
            case EnvKind::tabular_generic:
                if (state_id < 0 || state_id >= spec_.n_states)
                    throw std::invalid_argument("force_state: state id out of range");
                state_ = state_id;
                break;
        }
    }

    // Current observations (fresh noise draw for key-agent-match followers).
    Matrix<double> observations() {
        Matrix<double> obs = Matrix<double>::Zero(spec_.n_agents, spec_.obs_dim());
        switch (spec_.kind) {
            case EnvKind::key_agent_match:
                for (int i = 0; i < spec_.n_agents; ++i) {
                    if (i == key_) {
                        obs(i, 0) = 1.0;
                        obs(i, 1) = static_cast<double>(target_);
                    } else {
                        obs(i, 1) = rng_.uniform();
                    }
                }
                break;
            case EnvKind::joint_guess:
                for (int i = 0; i < spec_.n_agents; ++i) obs(i, target_) = 1.0;
                break;
            case EnvKind::tabular_generic:
                for (int i = 0; i < spec_.n_agents; ++i) obs(i, state_) = 1.0;
                break;
        }
        return obs;
    }

    const TabularGame& game() const {
        if (spec_.kind != EnvKind::tabular_generic)
            throw std::logic_error("game(): only available for tabular-generic envs");
        return game_;
    }

    static TabularGame make_random_game(const EnvSpec& spec, double gamma = 0.99) {
        return random_game(spec.game_seed, spec.n_agents, spec.n_actions, spec.n_states, gamma);
    }

    // Random finite game: rewards uniform in [-1, 1]; transition rows and the
    // initial distribution are Dirichlet(1,...,1) draws.
    static TabularGame random_game(std::uint64_t seed, int n_agents, int n_actions, int n_states,
                                   double gamma) {
        RandomSource rng(seed);
        TabularGame g;
        g.n_agents = n_agents;
        g.n_actions = n_actions;
        g.n_states = n_states;
        g.gamma = gamma;
        const std::int64_t J = g.joint_count();
        g.reward.resize(n_states, J);
        for (Eigen::Index s = 0; s < n_states; ++s)
            for (Eigen::Index j = 0; j < J; ++j) g.reward(s, j) = 2.0 * rng.uniform() - 1.0;
        g.transition.resize(n_states * J, n_states);
        for (Eigen::Index r = 0; r < g.transition.rows(); ++r) {
            double total = 0.0;
            for (Eigen::Index s = 0; s < n_states; ++s) {
                const double e = -std::log(1.0 - rng.uniform());  // Exp(1)
                g.transition(r, s) = e;
                total += e;
            }
            g.transition.row(r) /= total;
        }
        g.initial.resize(n_states);
        double total = 0.0;
        for (Eigen::Index s = 0; s < n_states; ++s) {
            const double e = -std::log(1.0 - rng.uniform());
            g.initial[s] = e;
            total += e;
        }
        g.initial /= total;
        return g;
    }

private:
    int sample_discrete(const Vector<double>& probs) {
        std::vector<double> p(probs.data(), probs.data() + probs.size());
        return rng_.categorical(p.data(), static_cast<int>(p.size()));
    }

    EnvSpec spec_;
    RandomSource rng_;
    TabularGame game_;  // tabular-generic only
    int key_ = 0, target_ = 0, state_ = 0, step_i_ = 0;
};

// Exact tabular form of a spec's game, built by independent enumeration (not
// by calling the simulator). Order-dependent kinds restart every step: the
// transition is the uniform redraw matching episodic resets.
inline TabularGame tabular_from_spec(const EnvSpec& spec, double gamma = 0.99) {
    spec.validate();
    TabularGame g;
    g.n_agents = spec.n_agents;
    g.n_actions = spec.n_actions;
    g.gamma = gamma;
    switch (spec.kind) {
        case EnvKind::key_agent_match: {
            g.n_states = spec.n_agents * spec.n_actions;
            const std::int64_t J = g.joint_count();
            g.reward.resize(g.n_states, J);
            for (int k = 0; k < spec.n_agents; ++k)
                for (int tau = 0; tau < spec.n_actions; ++tau) {
                    const int s = k * spec.n_actions + tau;
                    for (std::int64_t j = 0; j < J; ++j) {
                        const std::vector<int> a = g.joint_actions(j);
                        double match = 0.0;
                        for (int i = 0; i < spec.n_agents; ++i)
                            if (i != k && a[static_cast<std::size_t>(i)] == a[static_cast<std::size_t>(k)])
                                match += 1.0;
                        g.reward(s, j) = 0.5 * (a[static_cast<std::size_t>(k)] == tau ? 1.0 : 0.0) +
                                         0.5 * match / (spec.n_agents - 1);
                    }
                }
            break;
        }
        case EnvKind::joint_guess: {
            g.n_states = spec.n_actions;
            const std::int64_t J = g.joint_count();
            g.reward.resize(g.n_states, J);
            for (int tau = 0; tau < spec.n_actions; ++tau)
                for (std::int64_t j = 0; j < J; ++j) {
                    const std::vector<int> a = g.joint_actions(j);
                    bool all = true;
                    for (int v : a) all = all && (v == tau);
                    g.reward(tau, j) = all ? 1.0 : 0.0;
                }
            break;
        }
        case EnvKind::tabular_generic:
            return Env::make_random_game(spec, gamma);
    }
    // Episode restart: next state is a fresh uniform draw regardless of action.
    const std::int64_t J = g.joint_count();
    g.transition = Matrix<double>::Constant(g.n_states * J, g.n_states, 1.0 / g.n_states);
    g.initial = Vector<double>::Constant(g.n_states, 1.0 / g.n_states);
    return g;
}

}  // namespace plmarl::envs
