#include "plmarl/oracle_report.hpp"

#include "plmarl/evaluation.hpp"
#include "plmarl/metrics.hpp"

#include <json.hpp>

namespace plmarl {

OracleReport build_oracle_report(const envs::EnvSpec& spec, double gamma) {
    spec.validate();
    if (spec.n_agents > 6)
        throw std::length_error("oracle report: limited to n_agents <= 6");
    const envs::TabularGame game = envs::tabular_from_spec(spec, gamma);
    const oracle::TabularPolicy baseline = oracle::TabularPolicy::uniform(game);
    const oracle::ExactValues values = oracle::exact_values(game, baseline);

    OracleReport rep;
    rep.bellman_residual = oracle::bellman_residual(values, game, baseline);
    rep.all_states_order_insensitive = true;

    const std::vector<Permutation> orders = all_permutations(game.n_agents);
    const std::int64_t J = game.joint_count();
    for (int s = 0; s < game.n_states; ++s) {
        const oracle::OrderSearchResult search =
            oracle::optimal_order_search(values, game, baseline, s);
        OracleStateReport st;
        st.state = s;
        double mx = -std::numeric_limits<double>::infinity();
        double mn = std::numeric_limits<double>::infinity();
        for (const auto& ev : search.evaluations) {
            st.order_advantages.emplace_back(order_to_string(ev.order), ev.joint_advantage);
            mx = std::max(mx, ev.joint_advantage);
            mn = std::min(mn, ev.joint_advantage);
        }
        const auto& best = search.evaluations[static_cast<std::size_t>(search.argmax_index)];
        st.argmax_order = order_to_string(best.order);
        st.argmax_first_agent = best.order.at(0);
        st.max_joint_advantage = mx;
        st.min_joint_advantage = mn;
        st.order_insensitive = (mx - mn) < 1e-9;
        rep.all_states_order_insensitive = rep.all_states_order_insensitive && st.order_insensitive;
        rep.states.push_back(std::move(st));

        for (const Permutation& order : orders)
            for (std::int64_t j = 0; j < J; ++j)
                rep.decomposition_residual_max =
                    std::max(rep.decomposition_residual_max,
                             oracle::verify_decomposition(values, game, baseline, s, order,
                                                          game.joint_actions(j)));
    }

    nlohmann::ordered_json doc;
    doc["env"] = {{"kind", envs::to_string(spec.kind)},
                  {"n_agents", spec.n_agents},
                  {"n_actions", spec.n_actions},
                  {"n_states", game.n_states}};
    doc["gamma"] = gamma;
    doc["baseline_policy"] = "uniform";
    doc["states"] = nlohmann::ordered_json::array();
    for (const auto& st : rep.states) {
        nlohmann::ordered_json s;
        s["state"] = st.state;
        s["orders"] = nlohmann::ordered_json::array();
        for (const auto& [name, adv] : st.order_advantages)
            s["orders"].push_back({{"order", name}, {"joint_advantage", adv}});
        s["argmax_order"] = st.argmax_order;
        s["argmax_first_agent"] = st.argmax_first_agent;
        s["max_joint_advantage"] = st.max_joint_advantage;
        s["min_joint_advantage"] = st.min_joint_advantage;
        s["order_insensitive"] = st.order_insensitive;
        doc["states"].push_back(std::move(s));
    }
    doc["all_states_order_insensitive"] = rep.all_states_order_insensitive;
    doc["decomposition_residual_max"] = rep.decomposition_residual_max;
    doc["bellman_residual"] = rep.bellman_residual;
    rep.json = doc.dump(2) + "\n";
    return rep;
}

}  // namespace plmarl
