#include "plmarl/selfcheck.hpp"

#include "plmarl/oracle.hpp"
#include "plmarl/rollout.hpp"
#include "plmarl/trainer.hpp"

#include <functional>
#include <ostream>
#include <sstream>

namespace plmarl {
namespace {

Vector<double> random_credits(int n, RandomSource& rng) {
    Vector<double> z(n);
    for (int i = 0; i < n; ++i) z[i] = 4.0 * rng.uniform() - 2.0;
    return z;
}

// Property: total probability over all orders is 1.
bool check_pl_normalization(std::string& detail) {
    RandomSource rng(101);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 2 + rng.uniform_int(4);
        const Vector<double> z = random_credits(n, rng);
        double total = 0.0;
        for (const auto& [order, lp] : pl::enumerate_log_probs(z)) total += std::exp(lp);
        if (std::abs(total - 1.0) >= 1e-9) {
            detail = "sum of order probabilities deviates by " + std::to_string(total - 1.0);
            return false;
        }
    }
    return true;
}

// Property: the analytic credit gradient of log P(order) matches central
// finite differences.
bool check_pl_gradient_fd(std::string& detail, bool break_sign) {
    RandomSource rng(102);
    const double h = 1e-6;
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 2 + rng.uniform_int(4);
        const Vector<double> z = random_credits(n, rng);
        const Permutation order = Permutation::uniform_random(n, rng);
        Vector<double> g = pl::log_prob_grad(z, order);
        if (break_sign) g = -g;
        for (int i = 0; i < n; ++i) {
            Vector<double> zp = z, zm = z;
            zp[i] += h;
            zm[i] -= h;
            const double fd = (pl::log_prob(zp, order) - pl::log_prob(zm, order)) / (2.0 * h);
            if (std::abs(g[i] - fd) >= 1e-6) {
                detail = "analytic " + std::to_string(g[i]) + " vs finite-difference " +
                         std::to_string(fd);
                return false;
            }
        }
    }
    return true;
}

// Property: the exact expectation of the score function is zero.
bool check_pl_score_zero_mean(std::string& detail) {
    RandomSource rng(103);
    for (int rep = 0; rep < 10; ++rep) {
        const int n = 2 + rng.uniform_int(3);
        const Vector<double> z = random_credits(n, rng);
        Vector<double> mean = Vector<double>::Zero(n);
        for (const auto& [order, lp] : pl::enumerate_log_probs(z))
            mean += std::exp(lp) * pl::log_prob_grad(z, order);
        if (mean.cwiseAbs().maxCoeff() >= 1e-9) {
            detail = "max component " + std::to_string(mean.cwiseAbs().maxCoeff());
            return false;
        }
    }
    return true;
}

// Property: masked decoding is causal — changing the recorded action at a
// later order position leaves every earlier position's log-prob bit-identical.
bool check_attention_causality(std::string& detail) {
    ModelConfig cfg;
    cfg.n_agents = 4;
    cfg.obs_dim = 3;
    cfg.n_actions = 3;
    cfg.d_model = 8;
    cfg.heads = 2;
    OrderingStrategy strat;
    Policy<double> pol(cfg, strat, 104);
    RandomSource rng(105);
    Matrix<double> obs(cfg.n_agents, cfg.obs_dim);
    for (int i = 0; i < obs.rows(); ++i)
        for (int j = 0; j < obs.cols(); ++j) obs(i, j) = rng.uniform();
    const auto enc = pol.encode(obs);
    const Permutation order = Permutation::of({2, 0, 3, 1});
    std::vector<int> actions = {0, 1, 2, 0};
    const auto base = pol.decode_train(enc.reps, order, actions);
    for (int k = 1; k < cfg.n_agents; ++k) {
        std::vector<int> mutated = actions;
        mutated[static_cast<std::size_t>(order.at(k))] =
            (mutated[static_cast<std::size_t>(order.at(k))] + 1) % cfg.n_actions;
        const auto alt = pol.decode_train(enc.reps, order, mutated);
        for (int j = 0; j < k; ++j) {
            const int agent = order.at(j);
            if (base.per_agent_log_probs[static_cast<std::size_t>(agent)] !=
                alt.per_agent_log_probs[static_cast<std::size_t>(agent)]) {
                detail = "position " + std::to_string(j) + " changed when position " +
                         std::to_string(k) + " was mutated";
                return false;
            }
        }
    }
    return true;
}

// Property: the linear-time advantage recursion equals the explicit
// quadratic-time discounted sum.
bool check_gae_oracle(std::string& detail) {
    RandomSource rng(106);
    for (int rep = 0; rep < 50; ++rep) {
        const int T = 2 + rng.uniform_int(20);
        const int n = 1 + rng.uniform_int(3);
        RolloutBatch b;
        b.n_agents = n;
        b.obs_dim = 1;
        b.reserve(T);
        b.orders.resize(static_cast<std::size_t>(T));
        b.dones.resize(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
            b.orders[static_cast<std::size_t>(t)] = Permutation::identity(n);
            b.order_log_probs[t] = -1.0;
            b.rewards[t] = 2.0 * rng.uniform() - 1.0;
            for (int i = 0; i < n; ++i) {
                b.observations(t * n + i, 0) = 0.0;
                b.actions(t, i) = 0;
                b.behavior_log_probs(t, i) = -0.5;
                b.values(t, i) = 2.0 * rng.uniform() - 1.0;
            }
            b.dones[static_cast<std::size_t>(t)] = rng.uniform() < 0.3 ? 1 : 0;
        }
        b.dones[static_cast<std::size_t>(T - 1)] = 1;
        const double gamma = rng.uniform(), lambda = rng.uniform();

        Vector<double> vhat(T);
        for (int t = 0; t < T; ++t) vhat[t] = b.values.row(t).mean();
        Vector<double> ref(T);
        for (int t = 0; t < T; ++t) {
            double sum = 0.0, w = 1.0;
            for (int l = t; l < T; ++l) {
                const double next = (l + 1 < T) ? vhat[l + 1] : 0.0;
                const double nd = b.dones[static_cast<std::size_t>(l)] ? 0.0 : 1.0;
                sum += w * (b.rewards[l] + gamma * next * nd - vhat[l]);
                if (b.dones[static_cast<std::size_t>(l)]) break;
                w *= gamma * lambda;
            }
            ref[t] = sum;
        }
        compute_gae(b, gamma, lambda);
        for (int t = 0; t < T; ++t)
            if (std::abs(b.advantages[t] - ref[t]) >= 1e-9) {
                detail = "t=" + std::to_string(t) + " deviation " +
                         std::to_string(b.advantages[t] - ref[t]);
                return false;
            }
    }
    return true;
}

// Property: sequential (auto-regressive) action log-probs equal teacher-forced
// recomputation on the recorded actions.
bool check_train_infer_consistency(std::string& detail) {
    ModelConfig cfg;
    cfg.n_agents = 3;
    cfg.obs_dim = 2;
    cfg.n_actions = 3;
    cfg.d_model = 8;
    cfg.heads = 2;
    OrderingStrategy strat;
    Policy<double> pol(cfg, strat, 107);
    envs::EnvSpec spec;
    spec.kind = envs::EnvKind::key_agent_match;
    spec.n_agents = 3;
    spec.n_actions = 3;
    envs::Env env(spec, 108);
    RandomSource rng(109);
    for (int rep = 0; rep < 20; ++rep) {
        Matrix<double> obs = env.reset();
        auto rec = pol.act_batch(obs, Mode::train, {&rng});
        const auto enc = pol.encode(obs);
        const auto dec = pol.decode_train(enc.reps, rec[0].order, rec[0].actions);
        for (int i = 0; i < cfg.n_agents; ++i) {
            const double a = rec[0].per_agent_log_probs[static_cast<std::size_t>(i)];
            const double d = dec.per_agent_log_probs[static_cast<std::size_t>(i)];
            if (std::abs(a - d) >= 1e-6) {
                detail = "agent " + std::to_string(i) + ": sequential " + std::to_string(a) +
                         " vs teacher-forced " + std::to_string(d);
                return false;
            }
        }
    }
    return true;
}

// Property: joint advantage equals the sum of sequential per-agent advantages
// for every order and joint action of random games.
bool check_advantage_decomposition(std::string& detail) {
    RandomSource rng(110);
    for (int rep = 0; rep < 5; ++rep) {
        const envs::TabularGame game =
            envs::Env::random_game(200 + static_cast<std::uint64_t>(rep), 2 + rng.uniform_int(2),
                                   2 + rng.uniform_int(2), 1 + rng.uniform_int(3), 0.9);
        const oracle::TabularPolicy policy = oracle::TabularPolicy::uniform(game);
        const oracle::ExactValues values = oracle::exact_values(game, policy);
        const std::int64_t J = game.joint_count();
        for (int s = 0; s < game.n_states; ++s)
            for (const Permutation& order : all_permutations(game.n_agents))
                for (std::int64_t j = 0; j < J; ++j) {
                    const double r = oracle::verify_decomposition(values, game, policy, s, order,
                                                                  game.joint_actions(j));
                    if (r >= 1e-9) {
                        detail = "state " + std::to_string(s) + " residual " + std::to_string(r);
                        return false;
                    }
                }
    }
    return true;
}

}  // namespace

int run_selfcheck(std::ostream& out, const SelfcheckOptions& opts) {
    struct Property {
        const char* name;
        std::function<bool(std::string&)> run;
    };
    const Property properties[] = {
        {"pl-normalization", [](std::string& d) { return check_pl_normalization(d); }},
        {"pl-gradient-finite-difference",
         [&](std::string& d) { return check_pl_gradient_fd(d, opts.break_gradient_sign); }},
        {"pl-score-zero-mean", [](std::string& d) { return check_pl_score_zero_mean(d); }},
        {"attention-causality", [](std::string& d) { return check_attention_causality(d); }},
        {"gae-oracle", [](std::string& d) { return check_gae_oracle(d); }},
        {"train-infer-consistency",
         [](std::string& d) { return check_train_infer_consistency(d); }},
        {"advantage-decomposition",
         [](std::string& d) { return check_advantage_decomposition(d); }},
    };
    int failures = 0;
    for (const auto& p : properties) {
        std::string detail;
        const bool ok = p.run(detail);
        if (ok) {
            out << "PASS " << p.name << "\n";
        } else {
            ++failures;
            out << "FAIL " << p.name;
            if (!detail.empty()) out << " (" << detail << ")";
            out << "\n";
        }
    }
    out << (failures == 0 ? "selfcheck: all properties passed"
                          : "selfcheck: " + std::to_string(failures) + " properties failed")
        << "\n";
    return failures;
}

}  // namespace plmarl
