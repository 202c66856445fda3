#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape owns a growing list of nodes created eagerly by the op methods; each
// op computes its value immediately and registers a closure that adds into
// its parents' gradients. backward(loss) seeds the (1x1) loss gradient with 1
// and runs the closures in reverse creation order.
//
// Gradients are only propagated through nodes that require them; constants
// (observations, advantages, recorded log-probs) are free.

#include "plmarl/common.hpp"
#include "plmarl/plackett_luce.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace plmarl::ad {

// Attention mask for block_attention. `none` lets every token in a block
// attend to every other; `causal_by_position` lets token i attend to token j
// only when positions[j] <= positions[i] (positions are block-local).
struct AttentionMask {
    enum class Kind { none, causal_by_position };
    Kind kind = Kind::none;
    std::vector<int> positions;

    static AttentionMask none() { return {Kind::none, {}}; }
    static AttentionMask causal(std::vector<int> pos) { return {Kind::causal_by_position, std::move(pos)}; }
    bool allows(int query, int key) const {
        if (kind == Kind::none) return true;
        return positions[static_cast<std::size_t>(key)] <= positions[static_cast<std::size_t>(query)];
    }
};

template <class Scalar>
class Tape {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    // ----- leaves -----

    Var constant(Matrix<Scalar> value) { return make(std::move(value), false); }

    // A gradient-tracked leaf (network parameters, or test probes).
    Var input(Matrix<Scalar> value) { return make(std::move(value), true); }

    // ----- shape-preserving elementwise ops -----

    Var add(Var a, Var b) {
        same_shape(a, b, "add");
        Var out = make(val(a) + val(b), needs(a) || needs(b));
        if (needs(out))
            record(out, [this, a, b, out] {
                if (needs(a)) grad_ref(a) += grad_ref(out);
                if (needs(b)) grad_ref(b) += grad_ref(out);
            });
        return out;
    }

    Var sub(Var a, Var b) {
        same_shape(a, b, "sub");
        Var out = make(val(a) - val(b), needs(a) || needs(b));
        if (needs(out))
            record(out, [this, a, b, out] {
                if (needs(a)) grad_ref(a) += grad_ref(out);
                if (needs(b)) grad_ref(b) -= grad_ref(out);
            });
        return out;
    }

    Var cmul(Var a, Var b) {
        same_shape(a, b, "cmul");
        Var out = make(val(a).cwiseProduct(val(b)), needs(a) || needs(b));
        if (needs(out))
            record(out, [this, a, b, out] {
                if (needs(a)) grad_ref(a) += grad_ref(out).cwiseProduct(val(b));
                if (needs(b)) grad_ref(b) += grad_ref(out).cwiseProduct(val(a));
            });
        return out;
    }

    Var scale(Var a, Scalar s) {
        Var out = make(val(a) * s, needs(a));
        if (needs(out))
            record(out, [this, a, out, s] { grad_ref(a) += grad_ref(out) * s; });
        return out;
    }

    Var relu(Var a) {
        Var out = make(val(a).cwiseMax(Scalar(0)), needs(a));
        if (needs(out))
            record(out, [this, a, out] {
                grad_ref(a) += grad_ref(out).cwiseProduct(
                    (val(a).array() > Scalar(0)).template cast<Scalar>().matrix());
            });
        return out;
    }

    Var exp(Var a) {
        Var out = make(val(a).array().exp().matrix(), needs(a));
        if (needs(out))
            record(out, [this, a, out] { grad_ref(a) += grad_ref(out).cwiseProduct(val(out)); });
        return out;
    }

    Var square(Var a) {
        Var out = make(val(a).cwiseProduct(val(a)), needs(a));
        if (needs(out))
            record(out, [this, a, out] {
                grad_ref(a) += Scalar(2) * grad_ref(out).cwiseProduct(val(a));
            });
        return out;
    }

    // Elementwise minimum; on ties the gradient goes to a.
    Var min(Var a, Var b) {
        same_shape(a, b, "min");
        Var out = make(val(a).cwiseMin(val(b)), needs(a) || needs(b));
        if (needs(out))
            record(out, [this, a, b, out] {
                Matrix<Scalar> take_a =
                    (val(a).array() <= val(b).array()).template cast<Scalar>().matrix();
                if (needs(a)) grad_ref(a) += grad_ref(out).cwiseProduct(take_a);
                if (needs(b))
                    grad_ref(b) += grad_ref(out).cwiseProduct(
                        (Matrix<Scalar>::Ones(take_a.rows(), take_a.cols()) - take_a));
            });
        return out;
    }

    // Clamp to [lo, hi]; gradient passes where the input lies inside (inclusive).
    Var clamp(Var a, Scalar lo, Scalar hi) {
        if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
        Var out = make(val(a).cwiseMax(lo).cwiseMin(hi), needs(a));
        if (needs(out))
            record(out, [this, a, out, lo, hi] {
                Matrix<Scalar> inside = ((val(a).array() >= lo) && (val(a).array() <= hi))
                                            .template cast<Scalar>()
                                            .matrix();
                grad_ref(a) += grad_ref(out).cwiseProduct(inside);
            });
        return out;
    }

    // ----- linear algebra -----

    Var matmul(Var a, Var b) {
        if (val(a).cols() != val(b).rows())
            throw std::invalid_argument("matmul: inner dimensions disagree");
        Var out = make(val(a) * val(b), needs(a) || needs(b));
        if (needs(out))
            record(out, [this, a, b, out] {
                if (needs(a)) grad_ref(a) += grad_ref(out) * val(b).transpose();
                if (needs(b)) grad_ref(b) += val(a).transpose() * grad_ref(out);
            });
        return out;
    }

    // Add a 1 x C row vector to every row of a.
    Var add_row_broadcast(Var a, Var row) {
        if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
            throw std::invalid_argument("add_row_broadcast: row must be 1 x cols(a)");
        Var out = make(val(a).rowwise() + val(row).row(0), needs(a) || needs(row));
        if (needs(out))
            record(out, [this, a, row, out] {
                if (needs(a)) grad_ref(a) += grad_ref(out);
                if (needs(row)) grad_ref(row) += grad_ref(out).colwise().sum();
            });
        return out;
    }

    // ----- reductions / reshaping -----

    Var mean_all(Var a) {
        const Scalar n = static_cast<Scalar>(val(a).size());
        Matrix<Scalar> m(1, 1);
        m(0, 0) = val(a).sum() / n;
        Var out = make(std::move(m), needs(a));
        if (needs(out))
            record(out, [this, a, out, n] {
                grad_ref(a).array() += grad_ref(out)(0, 0) / n;
            });
        return out;
    }

    Var sum_all(Var a) {
        Matrix<Scalar> m(1, 1);
        m(0, 0) = val(a).sum();
        Var out = make(std::move(m), needs(a));
        if (needs(out))
            record(out, [this, a, out] { grad_ref(a).array() += grad_ref(out)(0, 0); });
        return out;
    }

    // Row sums: R x C -> R x 1.
    Var row_sum(Var a) {
        Var out = make(val(a).rowwise().sum(), needs(a));
        if (needs(out))
            record(out, [this, a, out] {
                grad_ref(a) += grad_ref(out) * Matrix<Scalar>::Ones(1, val(a).cols());
            });
        return out;
    }

    Var slice_cols(Var a, int c0, int width) {
        if (c0 < 0 || width <= 0 || c0 + width > val(a).cols())
            throw std::invalid_argument("slice_cols: range out of bounds");
        Var out = make(val(a).middleCols(c0, width), needs(a));
        if (needs(out))
            record(out, [this, a, out, c0, width] {
                grad_ref(a).middleCols(c0, width) += grad_ref(out);
            });
        return out;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: need at least one part");
        Eigen::Index rows = val(parts[0]).rows(), cols = 0;
        bool any = false;
        for (Var p : parts) {
            if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: row counts disagree");
            cols += val(p).cols();
            any = any || needs(p);
        }
        Matrix<Scalar> value(rows, cols);
        Eigen::Index c = 0;
        for (Var p : parts) {
            value.middleCols(c, val(p).cols()) = val(p);
            c += val(p).cols();
        }
        Var out = make(std::move(value), any);
        if (needs(out)) {
            std::vector<Var> ps = parts;
            record(out, [this, ps, out] {
                Eigen::Index c0 = 0;
                for (Var p : ps) {
                    if (needs(p)) grad_ref(p) += grad_ref(out).middleCols(c0, val(p).cols());
                    c0 += val(p).cols();
                }
            });
        }
        return out;
    }

    // out.row(i) = a.row(idx[i]); backward scatter-adds. Also serves as the
    // embedding lookup and as row reordering.
    Var gather_rows(Var a, std::vector<int> idx) {
        for (int i : idx)
            if (i < 0 || i >= val(a).rows()) throw std::invalid_argument("gather_rows: index out of range");
        Matrix<Scalar> value(static_cast<Eigen::Index>(idx.size()), val(a).cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
            value.row(static_cast<Eigen::Index>(r)) = val(a).row(idx[r]);
        Var out = make(std::move(value), needs(a));
        if (needs(out))
            record(out, [this, a, out, idx = std::move(idx)] {
                for (std::size_t r = 0; r < idx.size(); ++r)
                    grad_ref(a).row(idx[r]) += grad_ref(out).row(static_cast<Eigen::Index>(r));
            });
        return out;
    }

    // N x 1 column of a(rows[i], cols[i]).
    Var gather_coeffs(Var a, std::vector<int> rows, std::vector<int> cols) {
        if (rows.size() != cols.size())
            throw std::invalid_argument("gather_coeffs: rows and cols must have equal length");
        Matrix<Scalar> value(static_cast<Eigen::Index>(rows.size()), 1);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= val(a).rows() || cols[i] < 0 || cols[i] >= val(a).cols())
                throw std::invalid_argument("gather_coeffs: index out of range");
            value(static_cast<Eigen::Index>(i), 0) = val(a)(rows[i], cols[i]);
        }
        Var out = make(std::move(value), needs(a));
        if (needs(out))
            record(out, [this, a, out, rows = std::move(rows), cols = std::move(cols)] {
                for (std::size_t i = 0; i < rows.size(); ++i)
                    grad_ref(a)(rows[i], cols[i]) += grad_ref(out)(static_cast<Eigen::Index>(i), 0);
            });
        return out;
    }

    // ----- normalisation / softmax -----

    // Row-wise layer norm with learned gain/bias (both 1 x C).
    Var layer_norm_rows(Var x, Var gain, Var bias, Scalar eps = Scalar(1e-5)) {
        if (val(gain).rows() != 1 || val(gain).cols() != val(x).cols() ||
            val(bias).rows() != 1 || val(bias).cols() != val(x).cols())
            throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols(x)");
        const Eigen::Index R = val(x).rows(), C = val(x).cols();
        Matrix<Scalar> xhat(R, C);
        Vector<Scalar> inv_sd(R);
        Matrix<Scalar> value(R, C);
        for (Eigen::Index r = 0; r < R; ++r) {
            const Scalar mu = val(x).row(r).mean();
            const Scalar var = (val(x).row(r).array() - mu).square().mean();
            inv_sd[r] = Scalar(1) / std::sqrt(var + eps);
            xhat.row(r) = (val(x).row(r).array() - mu).matrix() * inv_sd[r];
            value.row(r) = xhat.row(r).cwiseProduct(val(gain).row(0)) + val(bias).row(0);
        }
        Var out = make(std::move(value), needs(x) || needs(gain) || needs(bias));
        if (needs(out))
            record(out, [this, x, gain, bias, out, xhat = std::move(xhat), inv_sd = std::move(inv_sd)] {
                const auto& gout = grad_ref(out);
                if (needs(gain)) grad_ref(gain) += gout.cwiseProduct(xhat).colwise().sum();
                if (needs(bias)) grad_ref(bias) += gout.colwise().sum();
                if (needs(x)) {
                    for (Eigen::Index r = 0; r < gout.rows(); ++r) {
                        // dx = (1/sd) * (dxh - mean(dxh) - xh * mean(dxh .* xh))
                        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dxh =
                            gout.row(r).cwiseProduct(val(gain).row(0));
                        const Scalar m1 = dxh.mean();
                        const Scalar m2 = dxh.cwiseProduct(xhat.row(r)).mean();
                        grad_ref(x).row(r) +=
                            inv_sd[r] * (dxh.array() - m1 - xhat.row(r).array() * m2).matrix();
                    }
                }
            });
        return out;
    }

    Var log_softmax_rows(Var x) {
        const Eigen::Index R = val(x).rows();
        Matrix<Scalar> value(R, val(x).cols());
        for (Eigen::Index r = 0; r < R; ++r) {
            const Scalar mx = val(x).row(r).maxCoeff();
            const Scalar lse = mx + std::log((val(x).row(r).array() - mx).exp().sum());
            value.row(r) = val(x).row(r).array() - lse;
        }
        Var out = make(std::move(value), needs(x));
        if (needs(out))
            record(out, [this, x, out] {
                const auto& gout = grad_ref(out);
                Matrix<Scalar> p = val(out).array().exp().matrix();
                Vector<Scalar> rowsum = gout.rowwise().sum();
                grad_ref(x) += gout - (p.array().colwise() * rowsum.array()).matrix();
            });
        return out;
    }

    // ----- fused attention core -----
    //
    // q, k, v are (B * block) x d_head; rows are grouped into B blocks and
    // attention runs independently per block: out_i = sum_j P_ij v_j with
    // P = softmax(q k^T / sqrt(d_head)) over the keys the mask allows.
    //
    // The row max and the normaliser are computed over allowed entries only
    // and masked probabilities are exactly zero, so an output row never
    // depends on tokens its mask excludes - not even at the bit level.
    Var block_attention(Var q, Var k, Var v, int block, const AttentionMask& mask) {
        const Eigen::Index R = val(q).rows(), D = val(q).cols();
        if (val(k).rows() != R || val(v).rows() != R || val(k).cols() != D || val(v).cols() != D)
            throw std::invalid_argument("block_attention: q, k, v must share shape");
        if (block <= 0 || R % block != 0)
            throw std::invalid_argument("block_attention: rows must be a multiple of the block size");
        if (mask.kind == AttentionMask::Kind::causal_by_position &&
            static_cast<int>(mask.positions.size()) != block)
            throw std::invalid_argument("block_attention: mask positions must match the block size");
        const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(D));
        const Eigen::Index B = R / block;

        Matrix<Scalar> out_value(R, D);
        Matrix<Scalar> probs = Matrix<Scalar>::Zero(R, block);  // row r: P over keys in r's block
        for (Eigen::Index b = 0; b < B; ++b) {
            const Eigen::Index r0 = b * block;
            for (int i = 0; i < block; ++i) {
                Scalar mx = -std::numeric_limits<Scalar>::infinity();
                for (int j = 0; j < block; ++j) {
                    if (!mask.allows(i, j)) continue;
                    const Scalar s = val(q).row(r0 + i).dot(val(k).row(r0 + j)) * inv_sqrt;
                    probs(r0 + i, j) = s;
                    mx = std::max(mx, s);
                }
                Scalar z = Scalar(0);
                for (int j = 0; j < block; ++j) {
                    if (!mask.allows(i, j)) continue;
                    probs(r0 + i, j) = std::exp(probs(r0 + i, j) - mx);
                    z += probs(r0 + i, j);
                }
                out_value.row(r0 + i).setZero();
                for (int j = 0; j < block; ++j) {
                    if (!mask.allows(i, j)) continue;
                    probs(r0 + i, j) /= z;
                    out_value.row(r0 + i) += probs(r0 + i, j) * val(v).row(r0 + j);
                }
            }
        }
        Var out = make(std::move(out_value), needs(q) || needs(k) || needs(v));
        if (needs(out))
            record(out, [this, q, k, v, out, block, B, inv_sqrt, probs = std::move(probs)] {
                const auto& gout = grad_ref(out);
                for (Eigen::Index b = 0; b < B; ++b) {
                    const Eigen::Index r0 = b * block;
                    auto P = probs.middleRows(r0, block);           // block x block
                    auto dO = gout.middleRows(r0, block);           // block x d
                    if (needs(v)) grad_ref(v).middleRows(r0, block) += P.transpose() * dO;
                    if (needs(q) || needs(k)) {
                        Matrix<Scalar> dP = dO * val(v).middleRows(r0, block).transpose();
                        Matrix<Scalar> dS(block, block);
                        for (int i = 0; i < block; ++i) {
                            const Scalar dot = dP.row(i).dot(P.row(i));
                            dS.row(i) = P.row(i).cwiseProduct(
                                (dP.row(i).array() - dot).matrix());
                        }
                        if (needs(q))
                            grad_ref(q).middleRows(r0, block) +=
                                inv_sqrt * (dS * val(k).middleRows(r0, block));
                        if (needs(k))
                            grad_ref(k).middleRows(r0, block) +=
                                inv_sqrt * (dS.transpose() * val(q).middleRows(r0, block));
                    }
                }
            });
        return out;
    }

    // ----- ordering log-probability -----
    //
    // credits is a (B * n) x 1 column of per-agent credits, grouped into B
    // blocks; orders[b] is the decision order drawn for block b. Returns the
    // B x 1 column of order log-probabilities, with the analytic gradient
    // routed through the closed-form expression rather than through softmax
    // graph pieces.
    Var pl_log_prob_blocks(Var credits, int n, const std::vector<Permutation>& orders) {
        if (val(credits).cols() != 1) throw std::invalid_argument("pl_log_prob_blocks: credits must be a column");
        const Eigen::Index B = static_cast<Eigen::Index>(orders.size());
        if (val(credits).rows() != B * n)
            throw std::invalid_argument("pl_log_prob_blocks: credits rows must equal n * number of orders");
        Matrix<Scalar> value(B, 1);
        for (Eigen::Index b = 0; b < B; ++b) {
            Vector<Scalar> z = val(credits).middleRows(b * n, n).col(0);
            value(b, 0) = pl::log_prob(z, orders[static_cast<std::size_t>(b)]);
        }
        Var out = make(std::move(value), needs(credits));
        if (needs(out))
            record(out, [this, credits, out, n, orders] {
                for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(orders.size()); ++b) {
                    Vector<Scalar> z = val(credits).middleRows(b * n, n).col(0);
                    Vector<Scalar> g = pl::log_prob_grad(z, orders[static_cast<std::size_t>(b)]);
                    grad_ref(credits).middleRows(b * n, n).col(0) += grad_ref(out)(b, 0) * g;
                }
            });
        return out;
    }

    // ----- execution -----

    void backward(Var loss) {
        if (val(loss).rows() != 1 || val(loss).cols() != 1)
            throw std::invalid_argument("backward: loss must be a 1x1 scalar");
        for (Node& n : nodes_)
            if (n.requires_grad) n.grad.setZero(n.value.rows(), n.value.cols());
        ran_backward_ = true;
        if (!needs(loss)) return;  // constant loss: all gradients are zero
        nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) = Scalar(1);
        for (std::size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].backward) nodes_[i].backward();
    }

    const Matrix<Scalar>& value(Var v) const { return val(v); }

    const Matrix<Scalar>& grad(Var v) const {
        const Node& n = node(v);
        if (!n.requires_grad) throw std::logic_error("grad: variable does not track gradients");
        if (!ran_backward_) throw std::logic_error("grad: call backward first");
        return n.grad;
    }

    bool tracks_grad(Var v) const { return node(v).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix<Scalar> value;
        Matrix<Scalar> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Var make(Matrix<Scalar> value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <class F>
    void record(Var out, F&& fn) {
        nodes_[static_cast<std::size_t>(out.id)].backward = std::forward<F>(fn);
    }

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("tape: invalid variable handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    void same_shape(Var a, Var b, const char* op) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw std::invalid_argument(std::string(op) + ": operands must share shape");
    }

    const Matrix<Scalar>& val(Var v) const { return node(v).value; }
    bool needs(Var v) const { return node(v).requires_grad; }
    Matrix<Scalar>& grad_ref(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

}  // namespace plmarl::ad
