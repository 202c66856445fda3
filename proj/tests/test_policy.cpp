#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/gradcheck.hpp"

#include "plmarl/policy.hpp"
#include "plmarl/stats.hpp"

#include <cmath>
#include <set>

using namespace plmarl;

namespace {

template <class Scalar>
Matrix<Scalar> random_obs(int rows, int cols, RandomSource& rng) {
    Matrix<Scalar> m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = static_cast<Scalar>(rng.gaussian());
    return m;
}

ModelConfig small_config(int n_agents, int obs_dim, int n_actions, int d_model = 8) {
    ModelConfig cfg;
    cfg.n_agents = n_agents;
    cfg.obs_dim = obs_dim;
    cfg.n_actions = n_actions;
    cfg.d_model = d_model;
    return cfg;
}

OrderingStrategy learned() { return {StrategyKind::learned_pl, {}}; }

}  // namespace

TEST_CASE("encode: shapes, identical rows, and cross-block independence") {
    Policy<double> policy(small_config(3, 4, 2), learned(), 11);
    RandomSource rng(5);

    Matrix<double> obs = random_obs<double>(3, 4, rng);
    obs.row(1) = obs.row(0);  // agents 0 and 1 see the same thing
    auto e = policy.encode(obs);
    CHECK(e.reps.rows() == 3);
    CHECK(e.reps.cols() == 8);
    CHECK(e.values.size() == 3);
    CHECK((e.reps.row(0) - e.reps.row(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(e.values[0] == e.values[1]);
    CHECK((e.reps.row(0) - e.reps.row(2)).cwiseAbs().maxCoeff() > 0.0);

    // Attention never crosses block boundaries: block 0 results are bitwise
    // independent of what block 1 contains.
    Matrix<double> two_blocks(6, 4);
    two_blocks.topRows(3) = obs;
    two_blocks.bottomRows(3) = random_obs<double>(3, 4, rng);
    ad::Tape<double> tape;
    nn::GraphContext<double> ctx(tape, policy.params(), false);
    auto ev = policy.encode_graph(ctx, two_blocks);
    CHECK((tape.value(ev.reps).topRows(3) - e.reps).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(policy.encode(random_obs<double>(3, 5, rng)), std::invalid_argument);
    Matrix<double> bad = obs;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(policy.encode(bad), std::invalid_argument);
}

TEST_CASE("encode: value head gradients through the encoder match finite differences") {
    Policy<double> p64(small_config(3, 3, 2), learned(), 17);
    Matrix<double> obs64 = random_obs<double>(3, 3, *std::make_unique<RandomSource>(9));
    auto loss64 = [&](nn::GraphContext<double>& ctx) {
        auto e = p64.encode_graph(ctx, obs64);
        return ctx.tape.mean_all(e.values);
    };
    CHECK(gradcheck::max_param_grad_error(p64.params(), loss64, 1e-5) < 1e-6);

    // f32: the analytic gradient must stay within 1e-3 relative of the exact
    // gradient. Direct f32 finite differences drown in rounding noise, so the
    // oracle is an f64 twin evaluated at the same (cast-up) parameter values,
    // whose analytic gradient is itself FD-validated above.
    Policy<float> p32(small_config(3, 3, 2), learned(), 17);
    Policy<double> twin(small_config(3, 3, 2), learned(), 17);
    for (int uid = 0; uid < p32.params().count(); ++uid)
        twin.params().value(nn::ParamId{uid}) =
            p32.params().value(nn::ParamId{uid}).cast<double>();
    Matrix<float> obs32 = obs64.cast<float>();
    Matrix<double> obs_twin = obs32.cast<double>();
    auto g32 = gradcheck::analytic_param_grads(p32.params(), [&](nn::GraphContext<float>& ctx) {
        auto e = p32.encode_graph(ctx, obs32);
        return ctx.tape.mean_all(e.values);
    });
    auto g64 = gradcheck::analytic_param_grads(twin.params(), [&](nn::GraphContext<double>& ctx) {
        auto e = twin.encode_graph(ctx, obs_twin);
        return ctx.tape.mean_all(e.values);
    });
    double worst = 0.0;
    for (int uid = 0; uid < p32.params().count(); ++uid) {
        const Matrix<double> a = g32.of(nn::ParamId{uid}).cast<double>();
        const Matrix<double>& b = g64.of(nn::ParamId{uid});
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < a.cols(); ++c)
                worst = std::max(worst, std::abs(a(r, c) - b(r, c)) /
                                            std::max(1.0, std::abs(b(r, c))));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("score_credits: row-wise application and near-zero spread at init") {
    Policy<double> policy(small_config(4, 3, 2), learned(), 23);
    RandomSource rng(3);

    Matrix<double> obs = random_obs<double>(4, 3, rng);
    obs.row(2) = obs.row(0);
    auto e = policy.encode(obs);
    Vector<double> credits = policy.score_credits(e.reps);
    CHECK(credits.size() == 4);
    CHECK(credits[0] == credits[2]);

    double max_spread = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        auto enc = policy.encode(random_obs<double>(4, 3, rng));
        Vector<double> c = policy.score_credits(enc.reps);
        max_spread = std::max(max_spread, c.maxCoeff() - c.minCoeff());
        Permutation m = pl::mode(c);
        CHECK(m.size() == 4);  // valid permutation out of pl_mode
    }
    CHECK(max_spread <= 0.5);  // small-gain scoring head keeps fresh orders near uniform
}

TEST_CASE("select_order: learned inference takes the mode with its exact log-prob") {
    Vector<double> credits(3);
    credits << 0.2, 1.5, -3.0;
    RandomSource rng(1);
    auto s = select_order(credits, learned(), Mode::infer, rng);
    CHECK(s.order == Permutation::of({1, 0, 2}));
    CHECK(s.log_prob == doctest::Approx(pl::log_prob(credits, s.order)).epsilon(1e-15));

    // exact translation invariance of the inferred order
    for (double shift : {1.5, -2.25, 100.0}) {
        Vector<double> shifted = credits.array() + shift;
        CHECK(select_order(shifted, learned(), Mode::infer, rng).order == s.order);
    }
}

TEST_CASE("select_order: train mode samples orders with Plackett-Luce frequencies") {
    Vector<double> credits(3);
    credits << 0.4, -0.3, 0.9;
    RandomSource rng(77);
    auto perms = all_permutations(3);
    auto ref = pl::enumerate_log_probs(credits);
    std::map<std::vector<int>, int> index;
    for (std::size_t i = 0; i < perms.size(); ++i) index[perms[i].indices()] = static_cast<int>(i);

    const int N = 30000;
    std::vector<std::int64_t> counts(perms.size(), 0);
    for (int i = 0; i < N; ++i) {
        auto s = select_order(credits, learned(), Mode::train, rng);
        counts[static_cast<std::size_t>(index.at(s.order.indices()))]++;
        CHECK(s.log_prob == doctest::Approx(pl::log_prob(credits, s.order)).epsilon(1e-12));
    }
    std::vector<double> probs(perms.size());
    for (std::size_t i = 0; i < perms.size(); ++i) {
        CHECK(ref[i].first == perms[i]);  // enumeration is in lexicographic order
        probs[i] = std::exp(ref[i].second);
    }
    auto gof = stats::chi_square_goodness_of_fit(counts, probs);
    CHECK(gof.pass);
}

TEST_CASE("select_order: fixed and random strategies") {
    Vector<double> credits(3);
    credits << 0.3, -1.0, 0.2;
    RandomSource rng(13);

    OrderingStrategy fixed{StrategyKind::fixed, Permutation::of({0, 1, 2})};
    for (int i = 0; i < 20; ++i) {
        auto s = select_order(credits, fixed, i % 2 ? Mode::train : Mode::infer, rng);
        CHECK(s.order == fixed.fixed_order);
        CHECK(s.log_prob == doctest::Approx(pl::log_prob(credits, fixed.fixed_order)).epsilon(1e-15));
    }

    OrderingStrategy random{StrategyKind::random, {}};
    std::map<std::vector<int>, int> freq;
    const int N = 60000;
    for (int i = 0; i < N; ++i) {
        auto s = select_order(credits, random, Mode::train, rng);
        CHECK(s.log_prob == doctest::Approx(-std::log(6.0)).epsilon(1e-12));
        freq[s.order.indices()]++;
    }
    CHECK(freq.size() == 6);
    for (const auto& [perm, count] : freq)
        CHECK(std::abs(count / double(N) - 1.0 / 6.0) < 0.01);

    OrderingStrategy bad{StrategyKind::fixed, {}};
    CHECK_THROWS_AS((void)select_order(credits, bad, Mode::infer, rng), std::invalid_argument);
}

TEST_CASE("teacher-forced log-probs equal sequential decoding log-probs") {
    RandomSource rng(31);
    for (int n = 2; n <= 5; ++n) {
        Policy<double> policy(small_config(n, 3, 3), learned(), 100 + static_cast<std::uint64_t>(n));
        for (int rep = 0; rep < 5; ++rep) {
            auto e = policy.encode(random_obs<double>(n, 3, rng));
            Permutation order = Permutation::uniform_random(n, rng);
            auto record = policy.decode_infer(e.reps, order, &rng, false);
            auto forced = policy.decode_train(e.reps, order, record.actions);
            for (int i = 0; i < n; ++i) {
                CHECK(forced.per_agent_log_probs[static_cast<std::size_t>(i)] ==
                      doctest::Approx(record.per_agent_log_probs[static_cast<std::size_t>(i)])
                          .epsilon(1e-9));
                CHECK(forced.per_agent_log_probs[static_cast<std::size_t>(i)] <= 0.0);
                CHECK(forced.per_agent_entropy[static_cast<std::size_t>(i)] >= 0.0);
                CHECK(forced.per_agent_entropy[static_cast<std::size_t>(i)] <=
                      std::log(3.0) + 1e-12);
            }
        }
    }
}

TEST_CASE("deterministic decoding is repeatable") {
    RandomSource rng(41);
    Policy<double> policy(small_config(4, 3, 3), learned(), 55);
    auto e = policy.encode(random_obs<double>(4, 3, rng));
    Permutation order = Permutation::of({2, 0, 3, 1});
    auto a = policy.decode_infer(e.reps, order, nullptr, true);
    auto b = policy.decode_infer(e.reps, order, nullptr, true);
    CHECK(a.order == b.order);
    CHECK(a.actions == b.actions);
    CHECK(a.per_agent_log_probs == b.per_agent_log_probs);
}

TEST_CASE("order causality: later actions cannot influence earlier log-probs") {
    RandomSource rng(47);
    const int n = 5;
    Policy<double> policy(small_config(n, 3, 3), learned(), 77);
    auto e = policy.encode(random_obs<double>(n, 3, rng));

    for (const auto& order : {Permutation::of({0, 1, 2, 3, 4}), Permutation::of({4, 2, 0, 3, 1})}) {
        std::vector<int> actions = {1, 0, 2, 1, 2};
        auto base = policy.decode_train(e.reps, order, actions);
        for (int k = 1; k < n; ++k) {
            std::vector<int> mutated = actions;
            const int agent_k = order.at(k);
            mutated[static_cast<std::size_t>(agent_k)] = (actions[static_cast<std::size_t>(agent_k)] + 1) % 3;
            auto changed = policy.decode_train(e.reps, order, mutated);
            for (int j = 0; j < k; ++j) {
                const int agent_j = order.at(j);
                // bitwise equality: the causal mask zeroes masked probabilities
                CHECK(changed.per_agent_log_probs[static_cast<std::size_t>(agent_j)] ==
                      base.per_agent_log_probs[static_cast<std::size_t>(agent_j)]);
                CHECK(changed.per_agent_entropy[static_cast<std::size_t>(agent_j)] ==
                      base.per_agent_entropy[static_cast<std::size_t>(agent_j)]);
            }
        }
    }
}

TEST_CASE("hand-built imitation decoder: the two orders induce different joint distributions") {
    // Decoder rigged so a decider's logits follow direction u = (1,-1,1,-1):
    // agent 0's representation pushes hard toward action 0, agent 1's is zero,
    // and each action embedding pushes the *next* decider toward copying it.
    Policy<double> policy(small_config(2, 3, 2, /*d_model=*/4), learned(), 3);
    auto& store = policy.params();
    Vector<double> u(4);
    u << 1.0, -1.0, 1.0, -1.0;

    auto set = [&](const std::string& name, const Matrix<double>& v) {
        nn::ParamId id = store.find(name);
        REQUIRE(id.valid());
        REQUIRE(store.value(id).rows() == v.rows());
        REQUIRE(store.value(id).cols() == v.cols());
        store.value(id) = v;
    };
    // neutralise the transformer block: residual stream passes through untouched
    set("decoder/block0.attn.out.w", Matrix<double>::Zero(4, 4));
    set("decoder/block0.mlp2.w", Matrix<double>::Zero(4, 4));
    Matrix<double> embed = Matrix<double>::Zero(3, 4);
    embed.row(0) = 3.0 * u.transpose();   // action 0
    embed.row(1) = -3.0 * u.transpose();  // action 1
    embed.row(2).setZero();               // start token -> exactly uniform logits
    set("decoder/embed_action", embed);
    Matrix<double> head = Matrix<double>::Zero(4, 2);
    head.col(0) = 3.0 * u;
    head.col(1) = -3.0 * u;
    set("decoder/action_head.w", head);

    Matrix<double> reps(2, 4);
    reps.row(0) = 8.0 * u.transpose();  // agent 0 wants action 0 regardless
    reps.row(1).setZero();              // agent 1 is indifferent alone

    auto joint_distribution = [&](const Permutation& order) {
        std::map<std::pair<int, int>, double> dist;
        double total = 0.0;
        for (int a0 = 0; a0 < 2; ++a0)
            for (int a1 = 0; a1 < 2; ++a1) {
                auto r = policy.decode_train(reps, order, {a0, a1});
                const double p = std::exp(r.per_agent_log_probs[0] + r.per_agent_log_probs[1]);
                dist[{a0, a1}] = p;
                total += p;
            }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        return dist;
    };

    auto d01 = joint_distribution(Permutation::of({0, 1}));  // agent 0 first: (0,0) almost surely
    auto d10 = joint_distribution(Permutation::of({1, 0}));  // agent 1 first: uniform a1, a0=0
    CHECK(d01.at({0, 0}) > 0.99);
    CHECK(d10.at({0, 0}) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(d10.at({0, 1}) == doctest::Approx(0.5).epsilon(1e-6));
    double tv = 0.0;
    for (const auto& [ja, p] : d01) tv += std::abs(p - d10.at(ja));
    CHECK(tv / 2.0 > 0.3);

    // the indifferent first decider's entropy is exactly ln 2
    auto r = policy.decode_train(reps, Permutation::of({1, 0}), {0, 0});
    CHECK(r.per_agent_entropy[1] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("single-agent decoding works with only the start token") {
    RandomSource rng(61);
    Policy<double> policy(small_config(1, 2, 4), learned(), 19);
    auto e = policy.encode(random_obs<double>(1, 2, rng));
    auto forced = policy.decode_train(e.reps, Permutation::identity(1), {2});
    CHECK(forced.per_agent_log_probs[0] <= 0.0);
    CHECK(std::isfinite(forced.per_agent_log_probs[0]));
    auto drawn = policy.decode_infer(e.reps, Permutation::identity(1), &rng, false);
    CHECK(drawn.actions[0] >= 0);
    CHECK(drawn.actions[0] < 4);
    CHECK(drawn.per_agent_log_probs[0] <= 0.0);
    CHECK(std::isfinite(drawn.per_agent_log_probs[0]));
}

TEST_CASE("order re-indexing round trips") {
    Permutation order = Permutation::of({2, 0, 3, 1});
    std::vector<double> by_agent = {10.0, 11.0, 12.0, 13.0};
    auto by_pos = order.to_position_indexed(by_agent);
    CHECK(by_pos == std::vector<double>{12.0, 10.0, 13.0, 11.0});
    CHECK(order.to_agent_indexed(by_pos) == by_agent);
    std::vector<int> by_position = {7, 8, 9, 6};
    CHECK(order.to_position_indexed(order.to_agent_indexed(by_position)) == by_position);
}

TEST_CASE("act_batch produces complete, consistent records") {
    const int n = 3, B = 4;
    Policy<double> policy(small_config(n, 2, 3), learned(), 99);
    RandomSource obs_rng(7);
    Matrix<double> obs = random_obs<double>(B * n, 2, obs_rng);

    std::vector<RandomSource> rngs;
    for (int b = 0; b < B; ++b) rngs.emplace_back(1000 + static_cast<std::uint64_t>(b));
    std::vector<RandomSource*> rng_ptrs;
    for (auto& r : rngs) rng_ptrs.push_back(&r);

    auto records = policy.act_batch(obs, Mode::train, rng_ptrs);
    REQUIRE(records.size() == static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        const auto& r = records[static_cast<std::size_t>(b)];
        CHECK(r.order.size() == n);
        CHECK(r.actions.size() == static_cast<std::size_t>(n));
        CHECK(r.values.size() == static_cast<std::size_t>(n));
        CHECK(r.order_log_prob <= 1e-12);
        for (int i = 0; i < n; ++i) {
            CHECK(r.actions[static_cast<std::size_t>(i)] >= 0);
            CHECK(r.actions[static_cast<std::size_t>(i)] < 3);
            CHECK(r.per_agent_log_probs[static_cast<std::size_t>(i)] <= 0.0);
            CHECK(std::isfinite(r.values[static_cast<std::size_t>(i)]));
        }
        // values agree with a standalone encode of the same block
        auto e = policy.encode(obs.middleRows(b * n, n));
        for (int i = 0; i < n; ++i)
            CHECK(r.values[static_cast<std::size_t>(i)] ==
                  doctest::Approx(e.values[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }

    // inference mode with the same parameters is deterministic across calls
    auto r1 = policy.act_batch(obs, Mode::infer, rng_ptrs);
    auto r2 = policy.act_batch(obs, Mode::infer, rng_ptrs);
    for (int b = 0; b < B; ++b) {
        CHECK(r1[static_cast<std::size_t>(b)].order == r2[static_cast<std::size_t>(b)].order);
        CHECK(r1[static_cast<std::size_t>(b)].actions == r2[static_cast<std::size_t>(b)].actions);
    }
}
