#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plmarl/envs.hpp"

#include <cmath>

using namespace plmarl;
using namespace plmarl::envs;

namespace {

EnvSpec make_spec(EnvKind kind, int n_agents, int n_actions) {
    EnvSpec s;
    s.kind = kind;
    s.n_agents = n_agents;
    s.n_actions = n_actions;
    return s;
}

}  // namespace

TEST_CASE("key-agent-match reset marks exactly one key agent") {
    EnvSpec spec = make_spec(EnvKind::key_agent_match, 3, 3);
    Env env(spec, 7);
    for (int rep = 0; rep < 50; ++rep) {
        Matrix<double> obs = env.reset();
        CHECK(obs.rows() == 3);
        CHECK(obs.cols() == 2);
        int keys = 0;
        for (int i = 0; i < 3; ++i) {
            if (obs(i, 0) == 1.0) {
                ++keys;
                const double tau = obs(i, 1);
                CHECK(tau == std::floor(tau));
                CHECK(tau >= 0.0);
                CHECK(tau < 3.0);
            } else {
                CHECK(obs(i, 0) == 0.0);
                CHECK(obs(i, 1) >= 0.0);
                CHECK(obs(i, 1) < 1.0);
            }
        }
        CHECK(keys == 1);
    }
}

TEST_CASE("joint-guess and tabular-generic observations are one-hot encodings") {
    Env jg(make_spec(EnvKind::joint_guess, 2, 4), 3);
    Matrix<double> obs = jg.reset();
    CHECK(obs.rows() == 2);
    CHECK(obs.cols() == 4);
    CHECK(obs.row(0) == obs.row(1));
    CHECK(obs.row(0).sum() == 1.0);
    CHECK(obs.row(0).maxCoeff() == 1.0);
    CHECK(obs(0, jg.state_id()) == 1.0);

    EnvSpec tg = make_spec(EnvKind::tabular_generic, 2, 2);
    tg.n_states = 5;
    Env env(tg, 4);
    Matrix<double> tobs = env.reset();
    CHECK(tobs.cols() == 5);
    for (int i = 0; i < 2; ++i) {
        CHECK(tobs.row(i).sum() == 1.0);
        CHECK(tobs(i, env.state_id()) == 1.0);
    }
}

TEST_CASE("key-agent-match rewards: the three canonical cases") {
    EnvSpec spec = make_spec(EnvKind::key_agent_match, 3, 3);
    Env env(spec, 1);
    env.reset();
    env.force_state(0 * 3 + 2);  // key agent 0, target 2

    // key plays the target, everyone copies -> maximum
    CHECK(env.step({2, 2, 2}).reward == 1.0);
    env.force_state(2);
    // key plays the target, no follower matches
    CHECK(env.step({2, 0, 1}).reward == 0.5);
    env.force_state(2);
    // key deviates but both followers copy the key's actual action
    CHECK(env.step({1, 1, 1}).reward == 0.5);
    env.force_state(2);
    // key deviates, one of two followers copies
    CHECK(env.step({1, 1, 0}).reward == 0.25);
    env.force_state(1 * 3 + 0);  // key agent 1, target 0
    CHECK(env.step({0, 0, 0}).reward == 1.0);
}

TEST_CASE("rewards stay within [0, 1] and episodes respect max_episode_steps") {
    RandomSource action_rng(9);
    for (EnvKind kind : {EnvKind::key_agent_match, EnvKind::joint_guess}) {
        EnvSpec spec = make_spec(kind, 3, 3);
        spec.max_episode_steps = 3;
        Env env(spec, 21);
        for (int ep = 0; ep < 20; ++ep) {
            env.reset();
            for (int t = 0; t < 3; ++t) {
                std::vector<int> a = {action_rng.uniform_int(3), action_rng.uniform_int(3),
                                      action_rng.uniform_int(3)};
                StepResult r = env.step(a);
                CHECK(r.reward >= 0.0);
                CHECK(r.reward <= 1.0);
                CHECK(r.done == (t == 2));
                if (r.done)
                    CHECK(r.obs.cwiseAbs().maxCoeff() == 0.0);
                else
                    CHECK(r.obs.rows() == 3);
            }
        }
    }
}

TEST_CASE("same seed reproduces the exact reset and step streams") {
    for (EnvKind kind : {EnvKind::key_agent_match, EnvKind::joint_guess, EnvKind::tabular_generic}) {
        EnvSpec spec = make_spec(kind, 2, 3);
        spec.n_states = 4;
        Env a(spec, 1234), b(spec, 1234);
        RandomSource act(5);
        for (int ep = 0; ep < 10; ++ep) {
            Matrix<double> oa = a.reset(), ob = b.reset();
            CHECK((oa - ob).cwiseAbs().maxCoeff() == 0.0);
            std::vector<int> act_vec = {act.uniform_int(3), act.uniform_int(3)};
            StepResult ra = a.step(act_vec), rb = b.step(act_vec);
            CHECK(ra.reward == rb.reward);
            CHECK((ra.obs - rb.obs).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("step rejects malformed joint actions") {
    Env env(make_spec(EnvKind::key_agent_match, 2, 2), 3);
    env.reset();
    CHECK_THROWS_AS(env.step({0}), std::invalid_argument);
    CHECK_THROWS_AS(env.step({0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(env.step({-1, 0}), std::invalid_argument);
    EnvSpec bad = make_spec(EnvKind::key_agent_match, 1, 2);
    CHECK_THROWS_AS(Env(bad, 1), std::invalid_argument);
    EnvSpec bad2 = make_spec(EnvKind::joint_guess, 2, 1);
    CHECK_THROWS_AS(Env(bad2, 1), std::invalid_argument);
}

TEST_CASE("tabular form matches the simulator on every state and joint action") {
    struct Case {
        EnvKind kind;
        int n_agents, n_actions;
    };
    for (const Case& c : {Case{EnvKind::key_agent_match, 2, 2}, Case{EnvKind::key_agent_match, 3, 3},
                          Case{EnvKind::joint_guess, 2, 2}, Case{EnvKind::joint_guess, 2, 3}}) {
        EnvSpec spec = make_spec(c.kind, c.n_agents, c.n_actions);
        TabularGame g = tabular_from_spec(spec);
        g.validate();
        Env env(spec, 99);
        env.reset();
        for (int s = 0; s < g.n_states; ++s)
            for (std::int64_t j = 0; j < g.joint_count(); ++j) {
                env.force_state(s);
                CHECK(env.state_id() == s);
                const double sim = env.step(g.joint_actions(j)).reward;
                CHECK(sim == g.reward(s, j));  // independently enumerated table
            }
    }
}

TEST_CASE("joint-guess table: reward one exactly on the all-match diagonal") {
    TabularGame g = tabular_from_spec(make_spec(EnvKind::joint_guess, 2, 2));
    CHECK(g.n_states == 2);
    CHECK(g.joint_count() == 4);
    for (int tau = 0; tau < 2; ++tau)
        for (std::int64_t j = 0; j < 4; ++j) {
            const std::vector<int> a = g.joint_actions(j);
            const bool diag = a[0] == tau && a[1] == tau;
            CHECK(g.reward(tau, j) == (diag ? 1.0 : 0.0));
        }
}

TEST_CASE("joint action indexing: agent 0 is the least significant digit") {
    TabularGame g = tabular_from_spec(make_spec(EnvKind::key_agent_match, 2, 2));
    CHECK(g.joint_index({0, 0}) == 0);
    CHECK(g.joint_index({1, 0}) == 1);
    CHECK(g.joint_index({0, 1}) == 2);
    CHECK(g.joint_index({1, 1}) == 3);
    for (std::int64_t j = 0; j < g.joint_count(); ++j)
        CHECK(g.joint_index(g.joint_actions(j)) == j);
    CHECK_THROWS_AS(g.joint_index({0}), std::invalid_argument);
    CHECK_THROWS_AS(g.joint_index({0, 2}), std::invalid_argument);
}

TEST_CASE("random tabular games are valid, bounded, and seed-reproducible") {
    EnvSpec spec = make_spec(EnvKind::tabular_generic, 3, 2);
    spec.n_states = 4;
    spec.game_seed = 42;
    TabularGame g = tabular_from_spec(spec);
    g.validate();
    CHECK(g.reward.minCoeff() >= -1.0);
    CHECK(g.reward.maxCoeff() <= 1.0);
    for (Eigen::Index r = 0; r < g.transition.rows(); ++r)
        CHECK(std::abs(g.transition.row(r).sum() - 1.0) <= 1e-12);

    TabularGame h = tabular_from_spec(spec);
    CHECK((g.reward - h.reward).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.transition - h.transition).cwiseAbs().maxCoeff() == 0.0);
    spec.game_seed = 43;
    TabularGame k = tabular_from_spec(spec);
    CHECK((g.reward - k.reward).cwiseAbs().maxCoeff() > 0.0);
}

// Order-dependence certificate for key-agent-match at n=2, n_actions=2, by
// exhaustive enumeration of deterministic sequential decision rules.
//
// Key first: the key's rule maps the target to an action (4 functions); the
// follower's rule maps the key's observed action to an action (4 functions).
// Key last: the follower moves blind (its observation carries no target
// information, so its rule is a constant), and the key's rule maps (target,
// follower action) to an action (16 functions).
//
// Best achievable expected reward (uniform over targets) must be exactly 1.0
// with the key first and 0.75 with the key last.
TEST_CASE("order-dependence certificate: key first achieves 1.0, key last only 0.75") {
    EnvSpec spec = make_spec(EnvKind::key_agent_match, 2, 2);
    TabularGame g = tabular_from_spec(spec);

    for (int key = 0; key < 2; ++key) {
        const int follower = 1 - key;
        auto reward_for = [&](int tau, int key_action, int follower_action) {
            std::vector<int> a(2);
            a[static_cast<std::size_t>(key)] = key_action;
            a[static_cast<std::size_t>(follower)] = follower_action;
            return g.reward(key * 2 + tau, g.joint_index(a));
        };

        double best_key_first = -1.0;
        for (int rule_key = 0; rule_key < 4; ++rule_key)          // tau -> action
            for (int rule_fol = 0; rule_fol < 4; ++rule_fol) {    // key action -> action
                double total = 0.0;
                for (int tau = 0; tau < 2; ++tau) {
                    const int ka = (rule_key >> tau) & 1;
                    const int fa = (rule_fol >> ka) & 1;
                    total += reward_for(tau, ka, fa);
                }
                best_key_first = std::max(best_key_first, total / 2.0);
            }
        CHECK(best_key_first == 1.0);

        double best_key_last = -1.0;
        for (int fol_const = 0; fol_const < 2; ++fol_const)        // blind constant
            for (int rule_key = 0; rule_key < 16; ++rule_key) {    // (tau, follower action) -> action
                double total = 0.0;
                for (int tau = 0; tau < 2; ++tau) {
                    const int fa = fol_const;
                    const int ka = (rule_key >> (tau * 2 + fa)) & 1;
                    total += reward_for(tau, ka, fa);
                }
                best_key_last = std::max(best_key_last, total / 2.0);
            }
        CHECK(best_key_last == 0.75);
    }
}
