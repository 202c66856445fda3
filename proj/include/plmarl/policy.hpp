#pragma once

// The sequential multi-agent policy: an unmasked-attention encoder that turns
// per-agent observations into representations and values, a row-wise scoring
// MLP producing per-agent decision credits, an order-selection step (learned
// Plackett-Luce sampling, or fixed/random baselines), and an order-conditioned
// auto-regressive decoder over discrete actions.
//
// All graph builders are batched: rows are grouped into B blocks of n_agents
// tokens, and attention never crosses block boundaries.

#include "plmarl/nn.hpp"
#include "plmarl/plackett_luce.hpp"

namespace plmarl {

struct ModelConfig {
    int n_agents = 0;
    int obs_dim = 0;
    int n_actions = 0;
    int d_model = 64;
    int heads = 1;
    int blocks = 1;
    int scoring_layers = 2;              // total dense layers in the scoring MLP
    bool scoring_grad_to_encoder = false;  // propagate ranking gradients into the encoder

    void validate() const {
        if (n_agents < 1) throw std::invalid_argument("model: n_agents must be >= 1");
        if (obs_dim < 1) throw std::invalid_argument("model: obs_dim must be >= 1");
        if (n_actions < 2) throw std::invalid_argument("model: n_actions must be >= 2");
        if (d_model < 1) throw std::invalid_argument("model: d_model must be >= 1");
        if (heads < 1 || d_model % heads != 0)
            throw std::invalid_argument("model: heads must divide d_model");
        if (blocks < 1) throw std::invalid_argument("model: blocks must be >= 1");
        if (scoring_layers < 1) throw std::invalid_argument("model: scoring_layers must be >= 1");
    }
};

enum class StrategyKind { learned_pl, fixed, random };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::learned_pl: return "learned-pl";
        case StrategyKind::fixed: return "fixed";
        case StrategyKind::random: return "random";
    }
    return "?";
}

struct OrderingStrategy {
    StrategyKind kind = StrategyKind::learned_pl;
    Permutation fixed_order;  // required when kind == fixed

    void validate(int n_agents) const {
        if (kind == StrategyKind::fixed && fixed_order.size() != n_agents)
            throw std::invalid_argument("strategy: fixed ordering requires a fixed_order permutation of the agents");
    }
};

enum class Mode { train, infer };

struct JointActionRecord {
    Permutation order;
    std::vector<int> actions;                 // agent-indexed
    std::vector<double> per_agent_log_probs;  // agent-indexed, <= 0
    double order_log_prob = 0.0;
    std::vector<double> values;               // agent-indexed
};

// Draw a decision order from the strategy. Learned strategies use the
// Plackett-Luce distribution over the credits (stochastic in train mode, the
// mode in infer mode); fixed strategies always return their permutation with
// the credits' log-probability of it; random strategies draw uniformly.
template <class Scalar>
pl::OrderSample<Scalar> select_order(const Vector<Scalar>& credits, const OrderingStrategy& strategy,
                                     Mode mode, RandomSource& rng) {
    const int n = static_cast<int>(credits.size());
    strategy.validate(n);
    switch (strategy.kind) {
        case StrategyKind::learned_pl: {
            if (mode == Mode::train) return pl::sample(credits, rng);
            Permutation m = pl::mode(credits);
            return {m, pl::log_prob(credits, m)};
        }
        case StrategyKind::fixed:
            return {strategy.fixed_order, pl::log_prob(credits, strategy.fixed_order)};
        case StrategyKind::random: {
            Permutation r = Permutation::uniform_random(n, rng);
            Scalar lp = Scalar(0);
            for (int i = 2; i <= n; ++i) lp -= std::log(static_cast<Scalar>(i));
            return {r, lp};
        }
    }
    throw std::invalid_argument("select_order: unknown strategy kind");
}

template <class Scalar>
class Policy {
public:
    using Var = typename ad::Tape<Scalar>::Var;
    using Ctx = nn::GraphContext<Scalar>;

    Policy(const ModelConfig& cfg, const OrderingStrategy& strategy, std::uint64_t init_seed)
        : cfg_(cfg), strategy_(strategy) {
        cfg_.validate();
        strategy_.validate(cfg_.n_agents);
        RandomSource rng(init_seed);
        seg_encoder_ = store_.add_segment("encoder");
        seg_decoder_ = store_.add_segment("decoder");
        seg_scoring_ = store_.add_segment("scoring");
        const int d = cfg_.d_model;

        embed_obs_ = nn::make_dense(store_, seg_encoder_, "embed_obs", cfg_.obs_dim, d, 1.0, rng);
        for (int b = 0; b < cfg_.blocks; ++b)
            enc_blocks_.push_back(nn::make_transformer_block(store_, seg_encoder_,
                                                             "block" + std::to_string(b), d,
                                                             cfg_.heads, rng));
        enc_ln_ = nn::make_layer_norm(store_, seg_encoder_, "final_ln", d);
        value_head_ = nn::make_dense(store_, seg_encoder_, "value_head", d, 1, 1.0, rng);

        // Action embeddings; index n_actions is the start-of-decoding token.
        embed_action_ = store_.add(seg_decoder_, "embed_action", cfg_.n_actions + 1, d);
        store_.value(embed_action_) =
            nn::orthogonal_init<Scalar>(cfg_.n_actions + 1, d, 1.0, rng);
        for (int b = 0; b < cfg_.blocks; ++b)
            dec_blocks_.push_back(nn::make_transformer_block(store_, seg_decoder_,
                                                             "block" + std::to_string(b), d,
                                                             cfg_.heads, rng));
        dec_ln_ = nn::make_layer_norm(store_, seg_decoder_, "final_ln", d);
        // Small-gain head so the initial action distribution is near uniform.
        action_head_ = nn::make_dense(store_, seg_decoder_, "action_head", d, cfg_.n_actions, 0.01, rng);

        for (int l = 0; l < cfg_.scoring_layers; ++l) {
            const bool last = (l == cfg_.scoring_layers - 1);
            const int in = d, out = last ? 1 : d;
            // Small-gain output so fresh credits stay near zero (near-uniform orders).
            scoring_.push_back(nn::make_dense(store_, seg_scoring_, "mlp" + std::to_string(l), in,
                                              out, last ? 0.01 : std::sqrt(2.0), rng));
        }
    }

    nn::ParameterStore<Scalar>& params() { return store_; }
    const nn::ParameterStore<Scalar>& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }
    const OrderingStrategy& strategy() const { return strategy_; }
    int encoder_segment() const { return seg_encoder_; }
    int decoder_segment() const { return seg_decoder_; }
    int scoring_segment() const { return seg_scoring_; }

    // ----- batched graph builders -----

    struct EncodeVars {
        Var reps;    // (B*n) x d
        Var values;  // (B*n) x 1
    };

    // obs: (B * n_agents) x obs_dim, agents in canonical order within each block.
    EncodeVars encode_graph(Ctx& ctx, const Matrix<Scalar>& obs) const {
        if (obs.cols() != cfg_.obs_dim || obs.rows() % cfg_.n_agents != 0)
            throw std::invalid_argument("encode: observations must be (B*n_agents) x obs_dim");
        check_finite(obs, "encode: observations");
        auto& tape = ctx.tape;
        Var x = nn::dense(ctx, embed_obs_, tape.constant(obs));
        const ad::AttentionMask mask = ad::AttentionMask::none();
        for (const auto& blk : enc_blocks_) x = nn::transformer_block(ctx, blk, x, cfg_.n_agents, mask);
        Var reps = nn::layer_norm(ctx, enc_ln_, x);
        Var values = nn::dense(ctx, value_head_, reps);
        return {reps, values};
    }

    // Row-wise scoring MLP from representations to per-agent credits, (B*n) x 1.
    // By default the encoder is treated as a constant input here (stop-gradient)
    // so ranking updates touch only the scoring segment.
    Var credits_graph(Ctx& ctx, Var reps) const {
        auto& tape = ctx.tape;
        Var x = cfg_.scoring_grad_to_encoder ? reps : tape.constant(tape.value(reps));
        for (std::size_t l = 0; l < scoring_.size(); ++l) {
            x = nn::dense(ctx, scoring_[l], x);
            if (l + 1 < scoring_.size()) x = tape.relu(x);
        }
        return x;
    }

    struct DecodeVars {
        Var log_probs;  // (B*n) x 1, position-major: row b*n+j is order position j of block b
        Var entropy;    // (B*n) x 1, same layout
    };

    // Teacher-forced parallel decoding of recorded actions.
    // orders[b] is block b's decision order; actions(b, i) is agent i's action.
    DecodeVars decode_train_graph(Ctx& ctx, Var reps, const std::vector<Permutation>& orders,
                                  const MatrixXi& actions) const {
        const int n = cfg_.n_agents;
        const Eigen::Index B = static_cast<Eigen::Index>(orders.size());
        if (ctx.tape.value(reps).rows() != B * n)
            throw std::invalid_argument("decode_train: representation rows must equal B * n_agents");
        if (actions.rows() != B || actions.cols() != n)
            throw std::invalid_argument("decode_train: actions must be B x n_agents");
        std::vector<int> chosen(static_cast<std::size_t>(B) * n);
        for (Eigen::Index b = 0; b < B; ++b)
            for (int j = 0; j < n; ++j) {
                const int a = actions(b, orders[static_cast<std::size_t>(b)].at(j));
                if (a < 0 || a >= cfg_.n_actions)
                    throw std::invalid_argument("decode_train: action id out of range");
                chosen[static_cast<std::size_t>(b * n + j)] = a;
            }
        Var lsm = decoder_log_softmax(ctx, reps, orders, actions);
        std::vector<int> rows(static_cast<std::size_t>(B) * n);
        std::iota(rows.begin(), rows.end(), 0);
        Var log_probs = ctx.tape.gather_coeffs(lsm, rows, chosen);
        Var p = ctx.tape.exp(lsm);
        Var entropy = ctx.tape.scale(ctx.tape.row_sum(ctx.tape.cmul(p, lsm)), Scalar(-1));
        return {log_probs, entropy};
    }

    // ----- single-timestep public API -----

    struct Encoded {
        Matrix<Scalar> reps;           // n x d
        std::vector<double> values;    // length n
    };

    Encoded encode(const Matrix<Scalar>& obs) const {
        if (obs.rows() != cfg_.n_agents)
            throw std::invalid_argument("encode: expected one observation row per agent");
        ad::Tape<Scalar> tape;
        Ctx ctx(tape, store_, false);
        EncodeVars e = encode_graph(ctx, obs);
        Encoded out;
        out.reps = tape.value(e.reps);
        out.values.resize(static_cast<std::size_t>(cfg_.n_agents));
        for (int i = 0; i < cfg_.n_agents; ++i)
            out.values[static_cast<std::size_t>(i)] = static_cast<double>(tape.value(e.values)(i, 0));
        return out;
    }

    Vector<Scalar> score_credits(const Matrix<Scalar>& reps) const {
        ad::Tape<Scalar> tape;
        Ctx ctx(tape, store_, false);
        Var c = credits_graph(ctx, tape.constant(reps));
        return tape.value(c).col(0);
    }

    struct DecodeTrainResult {
        std::vector<double> per_agent_log_probs;  // agent-indexed
        std::vector<double> per_agent_entropy;    // agent-indexed
    };

    DecodeTrainResult decode_train(const Matrix<Scalar>& reps, const Permutation& order,
                                   const std::vector<int>& actions) const {
        if (static_cast<int>(actions.size()) != cfg_.n_agents)
            throw std::invalid_argument("decode_train: one action per agent required");
        ad::Tape<Scalar> tape;
        Ctx ctx(tape, store_, false);
        MatrixXi am(1, cfg_.n_agents);
        for (int i = 0; i < cfg_.n_agents; ++i) am(0, i) = actions[static_cast<std::size_t>(i)];
        DecodeVars dv = decode_train_graph(ctx, tape.constant(reps), {order}, am);
        DecodeTrainResult out;
        out.per_agent_log_probs.resize(static_cast<std::size_t>(cfg_.n_agents));
        out.per_agent_entropy.resize(static_cast<std::size_t>(cfg_.n_agents));
        for (int j = 0; j < cfg_.n_agents; ++j) {
            out.per_agent_log_probs[static_cast<std::size_t>(order.at(j))] =
                static_cast<double>(tape.value(dv.log_probs)(j, 0));
            out.per_agent_entropy[static_cast<std::size_t>(order.at(j))] =
                static_cast<double>(tape.value(dv.entropy)(j, 0));
        }
        return out;
    }

    // Sequential auto-regressive decoding. Each position samples (or argmaxes)
    // from its categorical head given the start token and the embedded actions
    // of earlier positions. rng may be null when deterministic.
    JointActionRecord decode_infer(const Matrix<Scalar>& reps, const Permutation& order,
                                   RandomSource* rng, bool deterministic) const {
        std::vector<JointActionRecord> rec = decode_infer_batch(reps, {order}, {rng}, deterministic);
        return rec[0];
    }

    // Batched variant: reps is (B*n) x d, one order and one rng per block.
    std::vector<JointActionRecord> decode_infer_batch(const Matrix<Scalar>& reps,
                                                      const std::vector<Permutation>& orders,
                                                      const std::vector<RandomSource*>& rngs,
                                                      bool deterministic) const {
        const int n = cfg_.n_agents;
        const Eigen::Index B = static_cast<Eigen::Index>(orders.size());
        if (reps.rows() != B * n)
            throw std::invalid_argument("decode_infer: representation rows must equal B * n_agents");
        if (rngs.size() != orders.size())
            throw std::invalid_argument("decode_infer: one rng per block required");
        MatrixXi actions = MatrixXi::Zero(B, n);
        std::vector<JointActionRecord> out(static_cast<std::size_t>(B));
        for (Eigen::Index b = 0; b < B; ++b) {
            out[static_cast<std::size_t>(b)].order = orders[static_cast<std::size_t>(b)];
            out[static_cast<std::size_t>(b)].actions.assign(static_cast<std::size_t>(n), 0);
            out[static_cast<std::size_t>(b)].per_agent_log_probs.assign(static_cast<std::size_t>(n), 0.0);
        }
        for (int m = 0; m < n; ++m) {
            ad::Tape<Scalar> tape;
            Ctx ctx(tape, store_, false);
            Var lsm = decoder_log_softmax(ctx, tape.constant(reps), orders, actions);
            for (Eigen::Index b = 0; b < B; ++b) {
                const auto& order = orders[static_cast<std::size_t>(b)];
                const auto row = tape.value(lsm).row(b * n + m);
                int a;
                if (deterministic) {
                    a = 0;
                    for (int c = 1; c < cfg_.n_actions; ++c)
                        if (row(c) > row(a)) a = c;  // ties keep the lowest action id
                } else {
                    if (rngs[static_cast<std::size_t>(b)] == nullptr)
                        throw std::invalid_argument("decode_infer: rng required for stochastic decoding");
                    std::vector<double> p(static_cast<std::size_t>(cfg_.n_actions));
                    for (int c = 0; c < cfg_.n_actions; ++c)
                        p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(row(c)));
                    a = rngs[static_cast<std::size_t>(b)]->categorical(p.data(), cfg_.n_actions);
                }
                const int agent = order.at(m);
                actions(b, agent) = a;
                out[static_cast<std::size_t>(b)].actions[static_cast<std::size_t>(agent)] = a;
                out[static_cast<std::size_t>(b)].per_agent_log_probs[static_cast<std::size_t>(agent)] =
                    static_cast<double>(row(a));
            }
        }
        return out;
    }

    // Full act step over a batch of observations: encode, score, draw orders,
    // decode, and assemble complete records (values and order log-probs filled).
    std::vector<JointActionRecord> act_batch(const Matrix<Scalar>& obs, Mode mode,
                                             const std::vector<RandomSource*>& rngs) const {
        const int n = cfg_.n_agents;
        const Eigen::Index B = static_cast<Eigen::Index>(rngs.size());
        if (obs.rows() != B * n)
            throw std::invalid_argument("act: observation rows must equal B * n_agents");
        ad::Tape<Scalar> tape;
        Ctx ctx(tape, store_, false);
        EncodeVars e = encode_graph(ctx, obs);
        Var credits = credits_graph(ctx, e.reps);
        std::vector<Permutation> orders;
        std::vector<double> order_lps;
        orders.reserve(static_cast<std::size_t>(B));
        for (Eigen::Index b = 0; b < B; ++b) {
            Vector<Scalar> z = tape.value(credits).middleRows(b * n, n).col(0);
            RandomSource* rng = rngs[static_cast<std::size_t>(b)];
            if (rng == nullptr) throw std::invalid_argument("act: rng required per block");
            pl::OrderSample<Scalar> s = select_order(z, strategy_, mode, *rng);
            orders.push_back(s.order);
            order_lps.push_back(static_cast<double>(s.log_prob));
        }
        std::vector<JointActionRecord> rec =
            decode_infer_batch(tape.value(e.reps), orders, rngs, mode == Mode::infer);
        for (Eigen::Index b = 0; b < B; ++b) {
            auto& r = rec[static_cast<std::size_t>(b)];
            r.order_log_prob = order_lps[static_cast<std::size_t>(b)];
            r.values.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                r.values[static_cast<std::size_t>(i)] =
                    static_cast<double>(tape.value(e.values)(b * n + i, 0));
        }
        return rec;
    }

private:
    // Shared decoder forward: returns row-wise log-softmax over actions,
    // (B*n) x n_actions, position-major rows. The input at order position j is
    // the reordered representation plus the embedding of the action taken at
    // position j-1 (start token at position 0). The causal mask restricts
    // attention to positions <= j, so rows for undecided later positions can
    // hold anything without affecting earlier outputs.
    Var decoder_log_softmax(Ctx& ctx, Var reps, const std::vector<Permutation>& orders,
                            const MatrixXi& actions) const {
        const int n = cfg_.n_agents;
        const Eigen::Index B = static_cast<Eigen::Index>(orders.size());
        auto& tape = ctx.tape;
        std::vector<int> reorder(static_cast<std::size_t>(B) * n);
        std::vector<int> prev(static_cast<std::size_t>(B) * n);
        for (Eigen::Index b = 0; b < B; ++b) {
            const auto& order = orders[static_cast<std::size_t>(b)];
            if (order.size() != n) throw std::invalid_argument("decode: order size must equal n_agents");
            for (int j = 0; j < n; ++j) {
                reorder[static_cast<std::size_t>(b * n + j)] = static_cast<int>(b) * n + order.at(j);
                prev[static_cast<std::size_t>(b * n + j)] =
                    j == 0 ? cfg_.n_actions : actions(b, order.at(j - 1));
            }
        }
        Var x = tape.add(tape.gather_rows(reps, std::move(reorder)),
                         tape.gather_rows(ctx.use(embed_action_), std::move(prev)));
        std::vector<int> positions(static_cast<std::size_t>(n));
        std::iota(positions.begin(), positions.end(), 0);
        const ad::AttentionMask mask = ad::AttentionMask::causal(positions);
        for (const auto& blk : dec_blocks_) x = nn::transformer_block(ctx, blk, x, n, mask);
        x = nn::layer_norm(ctx, dec_ln_, x);
        Var logits = nn::dense(ctx, action_head_, x);
        return tape.log_softmax_rows(logits);
    }

    static void check_finite(const Matrix<Scalar>& m, const char* what) {
        if (!m.allFinite()) throw std::invalid_argument(std::string(what) + " must be finite");
    }

    ModelConfig cfg_;
    OrderingStrategy strategy_;
    nn::ParameterStore<Scalar> store_;
    int seg_encoder_ = -1, seg_decoder_ = -1, seg_scoring_ = -1;
    nn::DenseIds embed_obs_, value_head_, action_head_;
    nn::ParamId embed_action_;
    nn::LayerNormIds enc_ln_, dec_ln_;
    std::vector<nn::TransformerBlockIds> enc_blocks_, dec_blocks_;
    std::vector<nn::DenseIds> scoring_;
};

}  // namespace plmarl
