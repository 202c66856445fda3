#pragma once

// The three training losses as tape graphs over a minibatch of timesteps.
//
// build_batch_graph encodes the selected observations once; the losses share
// its representation/value nodes, so value-regression and action gradients
// both reach the encoder while ranking gradients stop at the scoring input
// (per the policy's scoring_grad_to_encoder flag).

#include "plmarl/policy.hpp"
#include "plmarl/rollout.hpp"

namespace plmarl {

template <class Scalar>
struct BatchGraph {
    using Var = typename ad::Tape<Scalar>::Var;

    int n_agents = 0;
    int count = 0;                    // selected timesteps
    typename Policy<Scalar>::EncodeVars enc;
    std::vector<Permutation> orders;  // per selected timestep
    MatrixXi actions;                 // count x n_agents
    Vector<Scalar> advantages;        // per selected timestep (normalized here if asked)
    Vector<Scalar> value_targets;     // per selected timestep
    Vector<Scalar> behavior_order_log_probs;   // per selected timestep
    Matrix<Scalar> behavior_log_probs;         // count x n_agents, agent-indexed
};

// Slice `idx` out of the batch and run the encoder. Advantages are optionally
// normalized to mean 0 / std 1 across this minibatch.
template <class Scalar>
BatchGraph<Scalar> build_batch_graph(nn::GraphContext<Scalar>& ctx, const Policy<Scalar>& policy,
                                     const RolloutBatch& batch, const std::vector<int>& idx,
                                     bool normalize_advantages) {
    if (idx.empty()) throw std::invalid_argument("batch graph: empty timestep selection");
    if (!batch.gae_ready) throw std::logic_error("batch graph: run compute_gae first");
    batch.validate();
    const int n = batch.n_agents;
    const int m = static_cast<int>(idx.size());

    BatchGraph<Scalar> g;
    g.n_agents = n;
    g.count = m;
    Matrix<Scalar> obs(static_cast<Eigen::Index>(m) * n, batch.obs_dim);
    g.actions.resize(m, n);
    g.advantages.resize(m);
    g.value_targets.resize(m);
    g.behavior_order_log_probs.resize(m);
    g.behavior_log_probs.resize(m, n);
    for (int r = 0; r < m; ++r) {
        const int t = idx[static_cast<std::size_t>(r)];
        if (t < 0 || t >= batch.size()) throw std::invalid_argument("batch graph: timestep out of range");
        obs.middleRows(static_cast<Eigen::Index>(r) * n, n) =
            batch.observations.middleRows(static_cast<Eigen::Index>(t) * n, n).template cast<Scalar>();
        g.orders.push_back(batch.orders[static_cast<std::size_t>(t)]);
        g.actions.row(r) = batch.actions.row(t);
        g.advantages[r] = static_cast<Scalar>(batch.advantages[t]);
        g.value_targets[r] = static_cast<Scalar>(batch.value_targets[t]);
        g.behavior_order_log_probs[r] = static_cast<Scalar>(batch.order_log_probs[t]);
        g.behavior_log_probs.row(r) = batch.behavior_log_probs.row(t).template cast<Scalar>();
    }
    if (normalize_advantages) {
        const Scalar mean = g.advantages.mean();
        const Scalar var = (g.advantages.array() - mean).square().mean();
        const Scalar sd = std::sqrt(var + Scalar(1e-8));
        g.advantages = ((g.advantages.array() - mean) / sd).matrix();
    }
    g.enc = policy.encode_graph(ctx, obs);
    return g;
}

// Mean over agents and timesteps of the squared error between each agent's
// value estimate and the shared per-timestep regression target.
template <class Scalar>
typename ad::Tape<Scalar>::Var encoder_loss(nn::GraphContext<Scalar>& ctx,
                                            const BatchGraph<Scalar>& g) {
    auto& tape = ctx.tape;
    Matrix<Scalar> target(static_cast<Eigen::Index>(g.count) * g.n_agents, 1);
    for (int r = 0; r < g.count; ++r)
        for (int i = 0; i < g.n_agents; ++i) target(r * g.n_agents + i, 0) = g.value_targets[r];
    return tape.mean_all(tape.square(tape.sub(g.enc.values, tape.constant(target))));
}

template <class Scalar>
struct DecoderLossVars {
    typename ad::Tape<Scalar>::Var loss;
    typename ad::Tape<Scalar>::Var new_log_probs;  // (count*n) x 1, position-major
    typename ad::Tape<Scalar>::Var mean_entropy;   // 1x1
};

// Clipped PPO surrogate over per-agent action log-probs, minus an entropy
// bonus. The advantage of a timestep is shared by all its agents.
template <class Scalar>
DecoderLossVars<Scalar> decoder_loss(nn::GraphContext<Scalar>& ctx, const Policy<Scalar>& policy,
                                     const BatchGraph<Scalar>& g, Scalar clip_eps,
                                     Scalar entropy_coef) {
    if (!(clip_eps > Scalar(0))) throw std::invalid_argument("decoder loss: clip_eps must be positive");
    auto& tape = ctx.tape;
    const int n = g.n_agents;
    auto dec = policy.decode_train_graph(ctx, g.enc.reps, g.orders, g.actions);

    Matrix<Scalar> behavior(static_cast<Eigen::Index>(g.count) * n, 1);
    Matrix<Scalar> adv(static_cast<Eigen::Index>(g.count) * n, 1);
    for (int r = 0; r < g.count; ++r)
        for (int j = 0; j < n; ++j) {
            const int agent = g.orders[static_cast<std::size_t>(r)].at(j);
            behavior(r * n + j, 0) = g.behavior_log_probs(r, agent);  // position-major
            adv(r * n + j, 0) = g.advantages[r];
        }
    auto ratio = tape.exp(tape.sub(dec.log_probs, tape.constant(behavior)));
    auto adv_c = tape.constant(adv);
    auto surrogate = tape.min(tape.cmul(ratio, adv_c),
                              tape.cmul(tape.clamp(ratio, Scalar(1) - clip_eps, Scalar(1) + clip_eps),
                                        adv_c));
    DecoderLossVars<Scalar> out;
    out.new_log_probs = dec.log_probs;
    out.mean_entropy = tape.mean_all(dec.entropy);
    out.loss = tape.sub(tape.scale(tape.mean_all(surrogate), Scalar(-1)),
                        tape.scale(out.mean_entropy, entropy_coef));
    return out;
}

template <class Scalar>
struct RankingLossVars {
    typename ad::Tape<Scalar>::Var loss;
    typename ad::Tape<Scalar>::Var new_order_log_probs;  // count x 1
};

// Clipped surrogate on the order distribution: the new order log-prob comes
// from the scoring head's credits, with its gradient routed through the exact
// closed-form expression. Averaged over timesteps only.
template <class Scalar>
RankingLossVars<Scalar> ranking_loss(nn::GraphContext<Scalar>& ctx, const Policy<Scalar>& policy,
                                     const BatchGraph<Scalar>& g, Scalar clip_eps) {
    if (!(clip_eps > Scalar(0))) throw std::invalid_argument("ranking loss: clip_eps must be positive");
    auto& tape = ctx.tape;
    auto credits = policy.credits_graph(ctx, g.enc.reps);
    auto new_lp = tape.pl_log_prob_blocks(credits, g.n_agents, g.orders);

    Matrix<Scalar> behavior(g.count, 1);
    Matrix<Scalar> adv(g.count, 1);
    for (int r = 0; r < g.count; ++r) {
        behavior(r, 0) = g.behavior_order_log_probs[r];
        adv(r, 0) = g.advantages[r];
    }
    auto ratio = tape.exp(tape.sub(new_lp, tape.constant(behavior)));
    auto adv_c = tape.constant(adv);
    auto surrogate = tape.min(tape.cmul(ratio, adv_c),
                              tape.cmul(tape.clamp(ratio, Scalar(1) - clip_eps, Scalar(1) + clip_eps),
                                        adv_c));
    RankingLossVars<Scalar> out;
    out.new_order_log_probs = new_lp;
    out.loss = tape.scale(tape.mean_all(surrogate), Scalar(-1));
    return out;
}

}  // namespace plmarl
