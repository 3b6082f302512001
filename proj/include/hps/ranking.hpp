#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "hps/numeric.hpp"

namespace hps {

using Permutation = std::vector<std::size_t>;

inline bool is_permutation_of_range(std::span<const std::size_t> perm, std::size_t n) {
    if (perm.size() != n) return false;
    std::vector<bool> seen(n, false);
    for (std::size_t v : perm) {
        if (v >= n || seen[v]) return false;
        seen[v] = true;
    }
    return true;
}

/// log P(order | rewards) under Plackett-Luce: each position picks one of
/// the remaining items with softmax odds. Suffix log-sum-exp keeps it stable.
inline double pl_log_probability(std::span<const double> rewards, std::span<const std::size_t> order) {
    const std::size_t n = rewards.size();
    if (!is_permutation_of_range(order, n))
        throw std::invalid_argument("pl_log_probability: order is not a permutation of 0..n-1");
    for (double r : rewards)
        if (!std::isfinite(r)) throw std::invalid_argument("pl_log_probability: non-finite reward");

    double log_p = 0.0;
    double suffix = -std::numeric_limits<double>::infinity();
    for (std::size_t j = n; j-- > 0;) {
        const double r = rewards[order[j]];
        suffix = log_add_exp(suffix, r);
        log_p += r - suffix;
    }
    return log_p;
}

inline double pl_rank_probability(std::span<const double> rewards, std::span<const std::size_t> order) {
    return std::exp(pl_log_probability(rewards, order));
}

/// Exact PL sampler: sequential draws without replacement, each proportional
/// to exp(reward) among the items not yet placed.
inline Permutation sample_ranking(std::span<const double> rewards, Rng& rng) {
    const std::size_t n = rewards.size();
    for (double r : rewards)
        if (!std::isfinite(r)) throw std::invalid_argument("sample_ranking: non-finite reward");

    std::vector<std::size_t> remaining(n);
    std::iota(remaining.begin(), remaining.end(), std::size_t{0});
    Permutation order;
    order.reserve(n);
    std::vector<double> weights;
    while (!remaining.empty()) {
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t i : remaining) hi = std::max(hi, rewards[i]);
        weights.resize(remaining.size());
        for (std::size_t k = 0; k < remaining.size(); ++k) weights[k] = std::exp(rewards[remaining[k]] - hi);
        const std::size_t pick = sample_categorical(weights, rng);
        order.push_back(remaining[pick]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return order;
}

}  // namespace hps
