#pragma once

// Plackett-Luce distribution over decision orders.
//
// A credit vector z in R^n induces a distribution over permutations of
// {0..n-1}: the first slot is drawn by softmax over all credits, the next by
// softmax over the remaining ones, and so on. Everything here works in log
// space with max-subtraction so large positive or negative credits are safe.

#include "plmarl/common.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace plmarl::pl {

template <class Scalar>
void check_credits(const Vector<Scalar>& z) {
    if (z.size() == 0) throw std::invalid_argument("plackett-luce: credits must be non-empty");
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (!std::isfinite(static_cast<double>(z[i])))
            throw std::invalid_argument("plackett-luce: credits must be finite");
    }
}

// log(exp(a) + exp(b)) without overflow.
template <class Scalar>
Scalar log_add_exp(Scalar a, Scalar b) {
    const Scalar hi = std::max(a, b);
    const Scalar lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

// Suffix log-sum-exp over credits in order position: L[i] = log sum_{k>=i} exp(z[order(k)]).
// L is non-increasing in i.
template <class Scalar>
Vector<Scalar> suffix_log_sum_exp(const Vector<Scalar>& z, const Permutation& order) {
    const int n = order.size();
    Vector<Scalar> L(n);
    L[n - 1] = z[order.at(n - 1)];
    for (int i = n - 2; i >= 0; --i) L[i] = log_add_exp(z[order.at(i)], L[i + 1]);
    return L;
}

// Log-probability of drawing `order` from the Plackett-Luce distribution with
// credits z: sum_i (z[order(i)] - log sum_{k>=i} exp(z[order(k)])).
template <class Scalar>
Scalar log_prob(const Vector<Scalar>& z, const Permutation& order) {
    check_credits(z);
    if (order.size() != static_cast<int>(z.size()))
        throw std::invalid_argument("plackett-luce: order length must match credit count");
    const Vector<Scalar> L = suffix_log_sum_exp(z, order);
    Scalar lp = Scalar(0);
    for (int i = 0; i < order.size(); ++i) lp += z[order.at(i)] - L[i];
    return lp;
}

// Analytic gradient of log_prob with respect to the credits.
//
// For the agent at order position i the derivative is
//   1 - exp(z[order(i)]) * sum_{k<=i} 1 / sum_{j>=k} exp(z[order(j)]).
// Evaluated through the running product T[i] = exp(L[i] - L[i-1]) * T[i-1] + 1
// (with T[0] = 1), which keeps every factor in [0, 1] x [1, n], so the result
// is stable for credits anywhere in the finite range:
//   grad[order(i)] = 1 - exp(z[order(i)] - L[i]) * T[i].
// The components always sum to zero (the distribution is translation
// invariant in z).
template <class Scalar>
Vector<Scalar> log_prob_grad(const Vector<Scalar>& z, const Permutation& order) {
    check_credits(z);
    if (order.size() != static_cast<int>(z.size()))
        throw std::invalid_argument("plackett-luce: order length must match credit count");
    const int n = order.size();
    const Vector<Scalar> L = suffix_log_sum_exp(z, order);
    Vector<Scalar> grad(n);
    Scalar T = Scalar(1);
    for (int i = 0; i < n; ++i) {
        if (i > 0) T = std::exp(L[i] - L[i - 1]) * T + Scalar(1);
        grad[order.at(i)] = Scalar(1) - std::exp(z[order.at(i)] - L[i]) * T;
    }
    return grad;
}

template <class Scalar>
struct OrderSample {
    Permutation order;
    Scalar log_prob = Scalar(0);
};

// Sample via Gumbel perturbation: argsort-descending of z_i + g_i with g_i
// i.i.d. standard Gumbel draws an order distributed exactly as the sequential
// softmax process.
template <class Scalar>
OrderSample<Scalar> sample(const Vector<Scalar>& z, RandomSource& rng) {
    check_credits(z);
    const int n = static_cast<int>(z.size());
    std::vector<std::pair<double, int>> keyed(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) keyed[static_cast<std::size_t>(i)] = {static_cast<double>(z[i]) + rng.gumbel(), i};
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = keyed[static_cast<std::size_t>(i)].second;
    Permutation order = Permutation::of(std::move(idx));
    return {order, log_prob(z, order)};
}

// Sample by drawing each slot from a softmax over the not-yet-chosen credits.
// Same distribution as sample(); kept as an independent path for testing.
template <class Scalar>
OrderSample<Scalar> sample_sequential(const Vector<Scalar>& z, RandomSource& rng) {
    check_credits(z);
    const int n = static_cast<int>(z.size());
    std::vector<int> remaining(static_cast<std::size_t>(n));
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n));
    std::vector<double> probs;
    while (!remaining.empty()) {
        const int m = static_cast<int>(remaining.size());
        double mx = -std::numeric_limits<double>::infinity();
        for (int a : remaining) mx = std::max(mx, static_cast<double>(z[a]));
        probs.assign(static_cast<std::size_t>(m), 0.0);
        double total = 0.0;
        for (int j = 0; j < m; ++j) {
            probs[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(z[remaining[static_cast<std::size_t>(j)]]) - mx);
            total += probs[static_cast<std::size_t>(j)];
        }
        for (double& p : probs) p /= total;
        const int j = rng.categorical(probs.data(), m);
        idx.push_back(remaining[static_cast<std::size_t>(j)]);
        remaining.erase(remaining.begin() + j);
    }
    Permutation order = Permutation::of(std::move(idx));
    return {order, log_prob(z, order)};
}

// Most probable order: credits sorted descending, ties broken by ascending
// agent index. Invariant under adding a constant to all credits.
template <class Scalar>
Permutation mode(const Vector<Scalar>& z) {
    check_credits(z);
    const int n = static_cast<int>(z.size());
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return z[a] > z[b]; });
    return Permutation::of(std::move(idx));
}

// All n! orders with their log-probabilities. Guarded to n <= 8; this is the
// brute-force reference the sampling and gradient paths are tested against.
template <class Scalar>
std::vector<std::pair<Permutation, Scalar>> enumerate_log_probs(const Vector<Scalar>& z) {
    check_credits(z);
    const int n = static_cast<int>(z.size());
    if (n > 8) throw std::length_error("plackett-luce: enumeration limited to n <= 8");
    std::vector<std::pair<Permutation, Scalar>> out;
    for (const Permutation& order : all_permutations(n)) out.emplace_back(order, log_prob(z, order));
    return out;
}

// Score-function (REINFORCE) estimate of the gradient of E[weight] with
// respect to the credits: mean over samples of weight_i * grad log P(order_i).
template <class Scalar>
Vector<Scalar> estimate_order_objective_grad(const Vector<Scalar>& z,
                                             const std::vector<Permutation>& orders,
                                             const std::vector<Scalar>& weights) {
    check_credits(z);
    if (orders.empty()) throw std::invalid_argument("plackett-luce: gradient estimate needs at least one sample");
    if (orders.size() != weights.size())
        throw std::invalid_argument("plackett-luce: orders and weights must have equal length");
    Vector<Scalar> acc = Vector<Scalar>::Zero(z.size());
    for (std::size_t i = 0; i < orders.size(); ++i)
        acc += weights[i] * log_prob_grad(z, orders[i]);
    return acc / static_cast<Scalar>(orders.size());
}

}  // namespace plmarl::pl
