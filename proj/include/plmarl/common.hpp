#pragma once

// Shared aliases and small utilities used across the library.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace plmarl {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXi = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Deterministic 64-bit RNG. All stochastic code in the library draws from one
// of these; seeds are derived explicitly so runs are reproducible.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

    std::mt19937_64& engine() { return engine_; }

    // Uniform in [0, 1).
    double uniform() {
        return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    }

    // Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        return static_cast<int>(std::uniform_int_distribution<std::uint64_t>(0, static_cast<std::uint64_t>(n) - 1)(engine_));
    }

    double gaussian() {
        return std::normal_distribution<double>(0.0, 1.0)(engine_);
    }

    // Standard Gumbel draw: -log(-log(u)), u in (0, 1).
    double gumbel() {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return -std::log(-std::log(u));
    }

    // Draw an index from an explicit discrete distribution given as
    // probabilities (need not be perfectly normalised; tolerates tiny drift).
    int categorical(const double* probs, int n) {
        double u = uniform();
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        return n - 1;
    }

private:
    std::mt19937_64 engine_;
};

// Derive an independent stream seed from a base seed, splitmix64-style.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// A permutation of {0..n-1} describing a decision order: at(i) is the agent
// deciding at position i; position_of(a) is the inverse map.
class Permutation {
public:
    Permutation() = default;

    static Permutation identity(int n) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        return Permutation(std::move(idx), /*validated=*/true);
    }

    static Permutation of(std::vector<int> idx) { return Permutation(std::move(idx), false); }

    static Permutation uniform_random(int n, RandomSource& rng) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            int j = rng.uniform_int(i + 1);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        return Permutation(std::move(idx), true);
    }

    int size() const { return static_cast<int>(order_.size()); }
    int at(int position) const { return order_[static_cast<std::size_t>(position)]; }
    int position_of(int agent) const { return inverse_[static_cast<std::size_t>(agent)]; }
    const std::vector<int>& indices() const { return order_; }

    bool operator==(const Permutation& other) const { return order_ == other.order_; }
    bool operator!=(const Permutation& other) const { return order_ != other.order_; }

    // Map order-position-indexed values to agent-indexed values.
    template <class T>
    std::vector<T> to_agent_indexed(const std::vector<T>& by_position) const {
        std::vector<T> out(by_position.size());
        for (int p = 0; p < size(); ++p) out[static_cast<std::size_t>(at(p))] = by_position[static_cast<std::size_t>(p)];
        return out;
    }

    // Map agent-indexed values to order-position-indexed values.
    template <class T>
    std::vector<T> to_position_indexed(const std::vector<T>& by_agent) const {
        std::vector<T> out(by_agent.size());
        for (int p = 0; p < size(); ++p) out[static_cast<std::size_t>(p)] = by_agent[static_cast<std::size_t>(at(p))];
        return out;
    }

private:
    Permutation(std::vector<int> idx, bool validated) : order_(std::move(idx)) {
        const int n = static_cast<int>(order_.size());
        if (!validated) {
            std::vector<bool> seen(static_cast<std::size_t>(n), false);
            for (int v : order_) {
                if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)])
                    throw std::invalid_argument("Permutation: indices must be a permutation of 0..n-1");
                seen[static_cast<std::size_t>(v)] = true;
            }
        }
        inverse_.resize(static_cast<std::size_t>(n));
        for (int p = 0; p < n; ++p) inverse_[static_cast<std::size_t>(order_[static_cast<std::size_t>(p)])] = p;
    }

    std::vector<int> order_;
    std::vector<int> inverse_;
};

// Enumerate all permutations of {0..n-1} in lexicographic order.
inline std::vector<Permutation> all_permutations(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Permutation> out;
    do {
        out.push_back(Permutation::of(idx));
    } while (std::next_permutation(idx.begin(), idx.end()));
    return out;
}

inline std::int64_t ipow(std::int64_t base, int exp) {
    std::int64_t r = 1;
    for (int i = 0; i < exp; ++i) r *= base;
    return r;
}

}  // namespace plmarl
