#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plmarl/oracle.hpp"

#include <cmath>

using namespace plmarl;
using namespace plmarl::envs;
using namespace plmarl::oracle;

namespace {

TabularPolicy random_policy(const TabularGame& game, RandomSource& rng) {
    TabularPolicy p;
    for (int i = 0; i < game.n_agents; ++i) {
        Matrix<double> f(game.n_states, game.n_actions);
        for (int s = 0; s < game.n_states; ++s) {
            double total = 0.0;
            for (int a = 0; a < game.n_actions; ++a) {
                f(s, a) = -std::log(1.0 - rng.uniform());
                total += f(s, a);
            }
            f.row(s) /= total;
        }
        p.factors.push_back(std::move(f));
    }
    return p;
}

// One-state game where every joint action yields the same reward r.
TabularGame constant_game(int n_agents, int n_actions, double r, double gamma) {
    TabularGame g;
    g.n_agents = n_agents;
    g.n_actions = n_actions;
    g.n_states = 1;
    g.gamma = gamma;
    g.reward = Matrix<double>::Constant(1, g.joint_count(), r);
    g.transition = Matrix<double>::Ones(g.joint_count(), 1);
    g.initial = Vector<double>::Ones(1);
    return g;
}

}  // namespace

TEST_CASE("gamma = 0 reduces values to expected immediate reward") {
    RandomSource rng(10);
    TabularGame g = Env::random_game(3, 2, 2, 3, /*gamma=*/0.0);
    TabularPolicy pi = random_policy(g, rng);
    ExactValues vals = exact_values(g, pi);
    for (int s = 0; s < g.n_states; ++s) {
        double expected = 0.0;
        for (std::int64_t j = 0; j < g.joint_count(); ++j)
            expected += pi.joint_prob(s, g.joint_actions(j)) * g.reward(s, j);
        CHECK(vals.v[s] == doctest::Approx(expected).epsilon(1e-14));
        for (std::int64_t j = 0; j < g.joint_count(); ++j)
            CHECK(vals.q(s, j) == g.reward(s, j));
    }
}

TEST_CASE("single-state constant-reward game: V equals the geometric series") {
    TabularGame g = constant_game(2, 2, 0.7, 0.9);
    ExactValues vals = exact_values(g, TabularPolicy::uniform(g));
    CHECK(vals.v[0] == doctest::Approx(7.0).epsilon(1e-12));
    for (std::int64_t j = 0; j < g.joint_count(); ++j)
        CHECK(vals.q(0, j) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("Bellman residual stays below 1e-9 on random games and policies") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RandomSource rng(seed + 500);
        TabularGame g = Env::random_game(seed, 2, 2, 3, 0.95);
        for (const TabularPolicy& pi : {TabularPolicy::uniform(g), random_policy(g, rng)}) {
            ExactValues vals = exact_values(g, pi);
            CHECK(bellman_residual(vals, g, pi) < 1e-9);
        }
    }
}

TEST_CASE("policy validation rejects malformed factors") {
    TabularGame g = Env::random_game(1, 2, 2, 2, 0.9);
    TabularPolicy pi = TabularPolicy::uniform(g);
    pi.factors[0](0, 0) = 0.9;  // row no longer sums to 1
    CHECK_THROWS_AS(exact_values(g, pi), std::invalid_argument);
    TabularPolicy neg = TabularPolicy::uniform(g);
    neg.factors[1](1, 0) = -0.5;
    neg.factors[1](1, 1) = 1.5;
    CHECK_THROWS_AS(exact_values(g, neg), std::invalid_argument);
    TabularPolicy missing = TabularPolicy::uniform(g);
    missing.factors.pop_back();
    CHECK_THROWS_AS(exact_values(g, missing), std::invalid_argument);
}

TEST_CASE("q_marginal: full assignment, empty assignment, and hand-checked partials") {
    RandomSource rng(77);
    TabularGame g = Env::random_game(11, 2, 2, 3, 0.9);
    TabularPolicy pi = random_policy(g, rng);
    ExactValues vals = exact_values(g, pi);

    for (int s = 0; s < g.n_states; ++s) {
        // all agents fixed -> plain Q entry
        for (std::int64_t j = 0; j < g.joint_count(); ++j) {
            const std::vector<int> a = g.joint_actions(j);
            CHECK(q_marginal(vals, g, pi, s, {0, 1}, a) == doctest::Approx(vals.q(s, j)).epsilon(1e-14));
        }
        // nobody fixed -> E_pi[Q] = V
        CHECK(q_marginal(vals, g, pi, s, {}, {}) == doctest::Approx(vals.v[s]).epsilon(1e-12));
        // one agent fixed -> exact expectation over the other agent's policy
        for (int a0 = 0; a0 < 2; ++a0) {
            double expected = 0.0;
            for (int a1 = 0; a1 < 2; ++a1)
                expected += pi.factors[1](s, a1) * vals.q(s, g.joint_index({a0, a1}));
            CHECK(q_marginal(vals, g, pi, s, {0}, {a0}) == doctest::Approx(expected).epsilon(1e-13));
        }
    }
    CHECK_THROWS_AS(q_marginal(vals, g, pi, 0, {0, 0}, {0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(q_marginal(vals, g, pi, 0, {0}, {0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(q_marginal(vals, g, pi, 0, {5}, {0}), std::invalid_argument);
}

TEST_CASE("multi-agent advantage: degenerate subsets behave per definition") {
    RandomSource rng(13);
    TabularGame g = Env::random_game(21, 3, 2, 2, 0.8);
    TabularPolicy pi = random_policy(g, rng);
    ExactValues vals = exact_values(g, pi);

    CHECK(multi_agent_advantage(vals, g, pi, 0, {0}, {1}, {}, {}) == 0.0);
    for (std::int64_t j = 0; j < g.joint_count(); ++j) {
        const std::vector<int> a = g.joint_actions(j);
        const double adv = multi_agent_advantage(vals, g, pi, 1, {}, {}, {0, 1, 2}, a);
        CHECK(adv == doctest::Approx(vals.q(1, j) - vals.v[1]).epsilon(1e-12));
    }
    CHECK_THROWS_AS(multi_agent_advantage(vals, g, pi, 0, {0, 1}, {0, 0}, {1}, {0}),
                    std::invalid_argument);
}

TEST_CASE("advantage decomposition holds for every order and joint action") {
    // randomized dimensions; both uniform and random product policies
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        RandomSource dims(seed * 31 + 7);
        const int n_agents = 2 + dims.uniform_int(2);   // 2..3
        const int n_actions = 2 + dims.uniform_int(2);  // 2..3
        const int n_states = 1 + dims.uniform_int(4);   // 1..4
        TabularGame g = Env::random_game(seed, n_agents, n_actions, n_states, 0.9);
        RandomSource rng(seed + 900);
        for (const TabularPolicy& pi : {TabularPolicy::uniform(g), random_policy(g, rng)}) {
            ExactValues vals = exact_values(g, pi);
            for (int s = 0; s < g.n_states; ++s)
                for (const Permutation& order : all_permutations(g.n_agents))
                    for (std::int64_t j = 0; j < g.joint_count(); ++j)
                        CHECK(verify_decomposition(vals, g, pi, s, order, g.joint_actions(j)) < 1e-9);
        }
    }
}

TEST_CASE("key-agent-match: all six orders decompose exactly at n=3") {
    TabularGame g = tabular_from_spec([] {
        EnvSpec s;
        s.kind = EnvKind::key_agent_match;
        s.n_agents = 3;
        s.n_actions = 3;
        return s;
    }());
    TabularPolicy pi = TabularPolicy::uniform(g);
    ExactValues vals = exact_values(g, pi);
    for (int s = 0; s < g.n_states; ++s)
        for (const Permutation& order : all_permutations(3))
            for (std::int64_t j = 0; j < g.joint_count(); ++j)
                CHECK(verify_decomposition(vals, g, pi, s, order, g.joint_actions(j)) < 1e-9);
}

TEST_CASE("single-action game: decomposition residual is exactly zero when undiscounted") {
    TabularGame g;
    g.n_agents = 2;
    g.n_actions = 1;
    g.n_states = 2;
    g.gamma = 0.0;
    g.reward = Matrix<double>(2, 1);
    g.reward << 0.3, -0.8;
    g.transition = Matrix<double>(2, 2);
    g.transition << 0.0, 1.0, 1.0, 0.0;
    g.initial = Vector<double>::Constant(2, 0.5);
    TabularPolicy pi;
    pi.factors.assign(2, Matrix<double>::Ones(2, 1));
    ExactValues vals = exact_values(g, pi);
    for (int s = 0; s < 2; ++s)
        for (const Permutation& order : all_permutations(2))
            CHECK(verify_decomposition(vals, g, pi, s, order, {0, 0}) == 0.0);
}

TEST_CASE("order search: key first wins strictly wherever the target breaks ties") {
    EnvSpec spec;
    spec.kind = EnvKind::key_agent_match;
    spec.n_agents = 2;
    spec.n_actions = 2;
    TabularGame g = tabular_from_spec(spec);
    TabularPolicy pi = TabularPolicy::uniform(g);
    ExactValues vals = exact_values(g, pi);

    for (int s = 0; s < g.n_states; ++s) {
        const int key = s / spec.n_actions;
        const int tau = s % spec.n_actions;
        OrderSearchResult res = optimal_order_search(vals, g, pi, s);
        REQUIRE(res.evaluations.size() == 2);
        double best = res.evaluations[static_cast<std::size_t>(res.argmax_index)].joint_advantage;
        double worst = best;
        for (const auto& ev : res.evaluations) worst = std::min(worst, ev.joint_advantage);

        if (tau != 0) {
            // greedy tie-breaking to action 0 misses the target for followers
            // moving first, so key-first is the strict argmax
            const auto& argmax = res.evaluations[static_cast<std::size_t>(res.argmax_index)];
            CHECK(argmax.order.at(0) == key);
            CHECK(best > worst + 1e-9);
            // the greedy joint action under the optimal order plays the target everywhere
            for (int a : argmax.best_response_actions) CHECK(a == tau);
        } else {
            // tau = 0 coincides with the greedy tie-break, every order reaches the max
            CHECK(best - worst < 1e-12);
        }
        // key-first always attains the global maximum over orders
        for (const auto& ev : res.evaluations)
            if (ev.order.at(0) == key) CHECK(ev.joint_advantage == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("order search: joint-guess is order-insensitive") {
    EnvSpec spec;
    spec.kind = EnvKind::joint_guess;
    spec.n_agents = 3;
    spec.n_actions = 2;
    TabularGame g = tabular_from_spec(spec);
    TabularPolicy pi = TabularPolicy::uniform(g);
    ExactValues vals = exact_values(g, pi);
    for (int s = 0; s < g.n_states; ++s) {
        OrderSearchResult res = optimal_order_search(vals, g, pi, s);
        REQUIRE(res.evaluations.size() == 6);
        double mx = res.evaluations[0].joint_advantage, mn = mx;
        for (const auto& ev : res.evaluations) {
            mx = std::max(mx, ev.joint_advantage);
            mn = std::min(mn, ev.joint_advantage);
        }
        CHECK(mx - mn < 1e-9);
    }
}

TEST_CASE("order search argmax is invariant under constant reward shifts") {
    for (std::uint64_t seed : {3u, 14u, 25u}) {
        TabularGame g = Env::random_game(seed, 3, 2, 3, 0.9);
        TabularGame shifted = g;
        shifted.reward.array() += 0.37;
        TabularPolicy pi = TabularPolicy::uniform(g);
        ExactValues v1 = exact_values(g, pi);
        ExactValues v2 = exact_values(shifted, pi);
        for (int s = 0; s < g.n_states; ++s) {
            OrderSearchResult a = optimal_order_search(v1, g, pi, s);
            OrderSearchResult b = optimal_order_search(v2, shifted, pi, s);
            CHECK(a.evaluations[static_cast<std::size_t>(a.argmax_index)].order ==
                  b.evaluations[static_cast<std::size_t>(b.argmax_index)].order);
            for (std::size_t i = 0; i < a.evaluations.size(); ++i)
                CHECK(a.evaluations[i].joint_advantage ==
                      doctest::Approx(b.evaluations[i].joint_advantage).epsilon(1e-9));
        }
    }
}

TEST_CASE("order search handles n=1 and rejects n>6") {
    TabularGame g1 = constant_game(1, 3, 0.5, 0.9);
    TabularPolicy pi1 = TabularPolicy::uniform(g1);
    ExactValues v1 = exact_values(g1, pi1);
    OrderSearchResult res = optimal_order_search(v1, g1, pi1, 0);
    CHECK(res.evaluations.size() == 1);
    CHECK(res.argmax_index == 0);
    CHECK(res.evaluations[0].order == Permutation::identity(1));

    TabularGame g7 = constant_game(7, 2, 0.1, 0.5);
    TabularPolicy pi7 = TabularPolicy::uniform(g7);
    ExactValues v7 = exact_values(g7, pi7);
    CHECK_THROWS_AS((void)optimal_order_search(v7, g7, pi7, 0), std::length_error);
}
