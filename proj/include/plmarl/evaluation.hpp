#pragma once

// Deterministic-policy evaluation with order statistics: runs inference-mode
// episodes, tallies the decision-order distribution over visited states, and
// (for tabular-convertible environments) scores each chosen order against the
// exhaustive-search oracle, counting it optimal when its greedy joint
// advantage ties the argmax within tolerance.

#include "plmarl/oracle.hpp"
#include "plmarl/policy.hpp"

#include <map>
#include <string>

namespace plmarl {

inline std::string order_to_string(const Permutation& p) {
    std::string s;
    for (int i = 0; i < p.size(); ++i) {
        if (i) s += '>';
        s += std::to_string(p.at(i));
    }
    return s;
}

struct PolicyEvalReport {
    int episodes = 0;
    std::int64_t steps = 0;
    double mean_return = 0.0;
    double key_first_fraction = -1.0;  // key-agent-match only, else -1
    double p_oracle_optimal = -1.0;    // fraction of steps whose order ties the oracle argmax
    std::map<std::string, std::int64_t> order_counts;
};

template <class Scalar>
PolicyEvalReport evaluate_policy(const Policy<Scalar>& policy, const envs::EnvSpec& spec,
                                 double gamma, int episodes, std::uint64_t seed,
                                 bool with_oracle = true) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
    spec.validate();
    PolicyEvalReport rep;
    rep.episodes = episodes;

    const bool key_env = spec.kind == envs::EnvKind::key_agent_match;
    envs::Env env(spec, derive_seed(seed, 11));
    RandomSource rng(derive_seed(seed, 12));

    envs::TabularGame game;
    oracle::ExactValues values;
    std::map<int, oracle::OrderSearchResult> search_cache;
    oracle::TabularPolicy baseline;
    if (with_oracle) {
        game = envs::tabular_from_spec(spec, gamma);
        baseline = oracle::TabularPolicy::uniform(game);
        values = oracle::exact_values(game, baseline);
    }
    auto search_for = [&](int s) -> const oracle::OrderSearchResult& {
        auto it = search_cache.find(s);
        if (it == search_cache.end())
            it = search_cache.emplace(s, oracle::optimal_order_search(values, game, baseline, s))
                     .first;
        return it->second;
    };

    double total_return = 0.0;
    std::int64_t key_first = 0, optimal = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        Matrix<double> obs = env.reset();
        bool done = false;
        while (!done) {
            const int s = env.state_id();
            auto rec = policy.act_batch(obs.template cast<Scalar>(), Mode::infer, {&rng});
            const Permutation& order = rec[0].order;
            ++rep.order_counts[order_to_string(order)];
            ++rep.steps;
            if (key_env && order.at(0) == s / spec.n_actions) ++key_first;
            if (with_oracle) {
                const auto& sr = search_for(s);
                double best = sr.evaluations[static_cast<std::size_t>(sr.argmax_index)]
                                  .joint_advantage;
                double chosen = 0.0;
                bool found = false;
                for (const auto& ev : sr.evaluations)
                    if (ev.order == order) {
                        chosen = ev.joint_advantage;
                        found = true;
                        break;
                    }
                if (!found) throw std::logic_error("evaluate: order missing from oracle sweep");
                if (chosen >= best - 1e-9) ++optimal;
            }
            envs::StepResult r = env.step(rec[0].actions);
            total_return += r.reward;
            done = r.done;
            obs = r.obs;
        }
    }
    rep.mean_return = total_return / episodes;
    if (key_env) rep.key_first_fraction = static_cast<double>(key_first) / static_cast<double>(rep.steps);
    if (with_oracle) rep.p_oracle_optimal = static_cast<double>(optimal) / static_cast<double>(rep.steps);
    return rep;
}

}  // namespace plmarl
