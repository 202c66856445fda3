#pragma once

// Neural-network layers expressed as free functions over a Tape, plus the
// GraphContext that binds store parameters into a tape once per forward pass.

#include "plmarl/param_store.hpp"
#include "plmarl/tape.hpp"

#include <map>

namespace plmarl::nn {

template <class Scalar>
struct GraphContext {
    using Var = typename ad::Tape<Scalar>::Var;

    GraphContext(ad::Tape<Scalar>& t, const ParameterStore<Scalar>& s, bool track = true)
        : tape(t), store(s), track_grads(track) {}

    ad::Tape<Scalar>& tape;
    const ParameterStore<Scalar>& store;
    bool track_grads;
    std::map<int, Var> bound;

    // Bind a parameter into the tape (once; later uses share the node).
    Var use(ParamId id) {
        auto it = bound.find(id.uid);
        if (it != bound.end()) return it->second;
        Var v = track_grads ? tape.input(store.value(id)) : tape.constant(store.value(id));
        bound.emplace(id.uid, v);
        return v;
    }

    // After tape.backward, accumulate every bound parameter's gradient.
    void export_grads(GradientMap<Scalar>& out) const {
        if (!track_grads) throw std::logic_error("export_grads: context does not track gradients");
        for (const auto& [uid, var] : bound) out.add(ParamId{uid}, tape.grad(var));
    }
};

struct DenseIds {
    ParamId w, b;
};
struct LayerNormIds {
    ParamId gain, bias;
};
struct AttentionIds {
    DenseIds q, k, v, out;
    int heads = 1;
};
struct TransformerBlockIds {
    LayerNormIds ln1, ln2;
    AttentionIds attn;
    DenseIds mlp1, mlp2;
};

// ----- parameter construction -----

template <class Scalar>
DenseIds make_dense(ParameterStore<Scalar>& store, int segment, const std::string& name, int in,
                    int out, double gain, RandomSource& rng) {
    DenseIds ids;
    ids.w = store.add(segment, name + ".w", in, out);
    store.value(ids.w) = orthogonal_init<Scalar>(in, out, gain, rng);
    ids.b = store.add(segment, name + ".b", 1, out);
    return ids;
}

template <class Scalar>
LayerNormIds make_layer_norm(ParameterStore<Scalar>& store, int segment, const std::string& name,
                             int d) {
    LayerNormIds ids;
    ids.gain = store.add(segment, name + ".gain", 1, d);
    store.value(ids.gain).setOnes();
    ids.bias = store.add(segment, name + ".bias", 1, d);
    return ids;
}

template <class Scalar>
AttentionIds make_attention(ParameterStore<Scalar>& store, int segment, const std::string& name,
                            int d, int heads, RandomSource& rng) {
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("make_attention: heads must divide d_model");
    AttentionIds ids;
    ids.q = make_dense(store, segment, name + ".q", d, d, 1.0, rng);
    ids.k = make_dense(store, segment, name + ".k", d, d, 1.0, rng);
    ids.v = make_dense(store, segment, name + ".v", d, d, 1.0, rng);
    ids.out = make_dense(store, segment, name + ".out", d, d, 1.0, rng);
    ids.heads = heads;
    return ids;
}

template <class Scalar>
TransformerBlockIds make_transformer_block(ParameterStore<Scalar>& store, int segment,
                                           const std::string& name, int d, int heads,
                                           RandomSource& rng) {
    TransformerBlockIds ids;
    ids.ln1 = make_layer_norm(store, segment, name + ".ln1", d);
    ids.ln2 = make_layer_norm(store, segment, name + ".ln2", d);
    ids.attn = make_attention(store, segment, name + ".attn", d, heads, rng);
    ids.mlp1 = make_dense(store, segment, name + ".mlp1", d, d, std::sqrt(2.0), rng);
    ids.mlp2 = make_dense(store, segment, name + ".mlp2", d, d, 1.0, rng);
    return ids;
}

// ----- forward pieces -----

template <class Scalar>
typename ad::Tape<Scalar>::Var dense(GraphContext<Scalar>& ctx, const DenseIds& ids,
                                     typename ad::Tape<Scalar>::Var x) {
    return ctx.tape.add_row_broadcast(ctx.tape.matmul(x, ctx.use(ids.w)), ctx.use(ids.b));
}

template <class Scalar>
typename ad::Tape<Scalar>::Var layer_norm(GraphContext<Scalar>& ctx, const LayerNormIds& ids,
                                          typename ad::Tape<Scalar>::Var x) {
    return ctx.tape.layer_norm_rows(x, ctx.use(ids.gain), ctx.use(ids.bias));
}

// Multi-head attention over rows grouped into blocks of `block` tokens.
template <class Scalar>
typename ad::Tape<Scalar>::Var attention(GraphContext<Scalar>& ctx, const AttentionIds& ids,
                                         typename ad::Tape<Scalar>::Var x, int block,
                                         const ad::AttentionMask& mask) {
    using Var = typename ad::Tape<Scalar>::Var;
    auto& tape = ctx.tape;
    Var q = dense(ctx, ids.q, x), k = dense(ctx, ids.k, x), v = dense(ctx, ids.v, x);
    const int d = static_cast<int>(tape.value(q).cols());
    const int dh = d / ids.heads;
    Var merged;
    if (ids.heads == 1) {
        merged = tape.block_attention(q, k, v, block, mask);
    } else {
        std::vector<Var> heads;
        for (int h = 0; h < ids.heads; ++h)
            heads.push_back(tape.block_attention(tape.slice_cols(q, h * dh, dh),
                                                 tape.slice_cols(k, h * dh, dh),
                                                 tape.slice_cols(v, h * dh, dh), block, mask));
        merged = tape.concat_cols(heads);
    }
    return dense(ctx, ids.out, merged);
}

// Pre-norm residual transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <class Scalar>
typename ad::Tape<Scalar>::Var transformer_block(GraphContext<Scalar>& ctx,
                                                 const TransformerBlockIds& ids,
                                                 typename ad::Tape<Scalar>::Var x, int block,
                                                 const ad::AttentionMask& mask) {
    auto& tape = ctx.tape;
    x = tape.add(x, attention(ctx, ids.attn, layer_norm(ctx, ids.ln1, x), block, mask));
    auto h = dense(ctx, ids.mlp2, tape.relu(dense(ctx, ids.mlp1, layer_norm(ctx, ids.ln2, x))));
    return tape.add(x, h);
}

}  // namespace plmarl::nn
