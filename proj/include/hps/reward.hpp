#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hps/io.hpp"
#include "hps/world.hpp"

namespace hps {

enum class RewardKind { linear, dpo_implicit, kto, simpo };

inline std::string_view to_string(RewardKind k) {
    switch (k) {
        case RewardKind::linear: return "linear";
        case RewardKind::dpo_implicit: return "dpo_implicit";
        case RewardKind::kto: return "kto";
        case RewardKind::simpo: return "simpo";
    }
    return "?";
}

inline RewardKind reward_kind_from_string(std::string_view s) {
    if (s == "linear") return RewardKind::linear;
    if (s == "dpo_implicit" || s == "dpo") return RewardKind::dpo_implicit;
    if (s == "kto") return RewardKind::kto;
    if (s == "simpo") return RewardKind::simpo;
    throw std::invalid_argument("unknown reward kind '" + std::string(s) + "'");
}

/// A differentiable reward r_theta(x, y).
///
/// linear: theta has feature_dim entries, r = <theta, phi(x, y)>.
/// Policy kinds (dpo_implicit, kto, simpo): theta is a logit table over every
/// prompt's pool, laid out like World::ref_logits, and pi_theta(.|x) is the
/// softmax of the prompt's slice. The beta * log Z(x) term of the implicit
/// reward is dropped; it is a per-prompt constant and every loss here only
/// compares rewards within one prompt.
struct RewardParameterization {
    RewardKind kind = RewardKind::linear;
    Eigen::VectorXd theta;
    double beta = 0.1;
    // KTO normalizer l(y), one per world entry. Empty means l(y) = 1.
    std::vector<double> l_factor;

    bool is_policy() const { return kind != RewardKind::linear; }
    std::size_t dim() const { return static_cast<std::size_t>(theta.size()); }
};

using RewardGradient = Eigen::VectorXd;

inline std::size_t parameter_dim(RewardKind kind, const World& world) {
    return kind == RewardKind::linear ? world.feature_dim() : world.entry_count();
}

inline RewardParameterization make_linear_reward(const World& world) {
    RewardParameterization p;
    p.kind = RewardKind::linear;
    p.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(world.feature_dim()));
    return p;
}

/// Policy logits start at the reference logits, so every implicit reward starts at zero.
inline RewardParameterization make_policy_reward(RewardKind kind, const World& world, double beta = 0.1) {
    if (kind == RewardKind::linear) throw std::invalid_argument("make_policy_reward: linear is not a policy kind");
    RewardParameterization p;
    p.kind = kind;
    p.theta = world.ref_logits;
    p.beta = beta;
    return p;
}

inline void validate(const RewardParameterization& param, const World& world) {
    if (param.dim() != parameter_dim(param.kind, world))
        throw std::invalid_argument("reward parameterization: parameter dimension does not match the world");
    if (!(param.beta > 0.0) || !std::isfinite(param.beta))
        throw std::invalid_argument("reward parameterization: beta must be positive");
    if (!param.l_factor.empty()) {
        if (param.l_factor.size() != world.entry_count())
            throw std::invalid_argument("reward parameterization: l_factor must have one entry per response");
        for (double l : param.l_factor)
            if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("reward parameterization: l_factor must be positive");
    }
    if (!param.theta.allFinite()) throw std::invalid_argument("reward parameterization: non-finite parameters");
}

namespace detail {

template <class Slice>
double slice_log_sum_exp(const Slice& slice) {
    const double hi = slice.maxCoeff();
    const double lse = hi + std::log((slice.array() - hi).exp().sum());
    if (!std::isfinite(lse)) throw std::domain_error("reward: non-finite logits");
    return lse;
}

inline auto theta_slice(const RewardParameterization& param, const World& world, PromptId p) {
    return param.theta.segment(static_cast<Eigen::Index>(world.index(p, 0)), static_cast<Eigen::Index>(world.pool_size()));
}

inline double l_of(const RewardParameterization& param, const World& world, PromptId p, ResponseId y) {
    return param.l_factor.empty() ? 1.0 : param.l_factor[world.index(p, y)];
}

// Coefficient c such that r = c * log pi_theta(y|x) + (terms constant in theta).
inline double policy_scale(const RewardParameterization& param, const World& world, PromptId p, ResponseId y) {
    switch (param.kind) {
        case RewardKind::dpo_implicit: return param.beta;
        case RewardKind::kto: return l_of(param, world, p, y);
        case RewardKind::simpo: return param.beta / static_cast<double>(world.length(p, y));
        case RewardKind::linear: break;
    }
    return 1.0;
}

}  // namespace detail

inline double log_reference(const World& world, PromptId p, ResponseId y) {
    return world.ref_logit(p, y) - detail::slice_log_sum_exp(world.ref_slice(p));
}

/// log pi_theta(y | x). For the linear kind this is the Boltzmann policy of the
/// linear reward over the prompt's pool.
inline double log_policy(const RewardParameterization& param, const World& world, PromptId p, ResponseId y) {
    const auto i = static_cast<Eigen::Index>(world.index(p, y));
    if (param.kind == RewardKind::linear) {
        const auto base = static_cast<Eigen::Index>(world.index(p, 0));
        const auto k = static_cast<Eigen::Index>(world.pool_size());
        const Eigen::VectorXd scores = world.features.middleRows(base, k) * param.theta;
        return scores[i - base] - detail::slice_log_sum_exp(scores);
    }
    return param.theta[i] - detail::slice_log_sum_exp(detail::theta_slice(param, world, p));
}

/// grad += scale * d log pi_theta(y|x) / d theta
inline void accumulate_log_policy_gradient(const RewardParameterization& param, const World& world, PromptId p,
                                           ResponseId y, double scale, Eigen::Ref<Eigen::VectorXd> grad) {
    const auto base = static_cast<Eigen::Index>(world.index(p, 0));
    const auto k = static_cast<Eigen::Index>(world.pool_size());
    const auto local = static_cast<Eigen::Index>(y);
    if (param.kind == RewardKind::linear) {
        const auto rows = world.features.middleRows(base, k);
        const Eigen::VectorXd scores = rows * param.theta;
        const Eigen::VectorXd pi = (scores.array() - detail::slice_log_sum_exp(scores)).exp();
        grad.noalias() += scale * (rows.row(local).transpose() - rows.transpose() * pi);
        return;
    }
    const auto slice = detail::theta_slice(param, world, p);
    const double lse = detail::slice_log_sum_exp(slice);
    auto g = grad.segment(base, k);
    g.array() -= scale * (slice.array() - lse).exp();
    g[local] += scale;
}

inline double reward(const RewardParameterization& param, const World& world, PromptId p, ResponseId y) {
    switch (param.kind) {
        case RewardKind::linear: return world.feature(p, y).dot(param.theta);
        case RewardKind::dpo_implicit:
        case RewardKind::kto:
            return detail::policy_scale(param, world, p, y) * (log_policy(param, world, p, y) - log_reference(world, p, y));
        case RewardKind::simpo: return detail::policy_scale(param, world, p, y) * log_policy(param, world, p, y);
    }
    return 0.0;
}

/// grad += scale * d r_theta(x, y) / d theta, touching only the prompt's slice
/// for policy kinds.
inline void accumulate_reward_gradient(const RewardParameterization& param, const World& world, PromptId p,
                                       ResponseId y, double scale, Eigen::Ref<Eigen::VectorXd> grad) {
    if (param.kind == RewardKind::linear) {
        grad.noalias() += scale * world.feature(p, y).transpose();
        return;
    }
    accumulate_log_policy_gradient(param, world, p, y, scale * detail::policy_scale(param, world, p, y), grad);
}

inline RewardGradient reward_gradient(const RewardParameterization& param, const World& world, PromptId p, ResponseId y) {
    RewardGradient g = RewardGradient::Zero(param.theta.size());
    accumulate_reward_gradient(param, world, p, y, 1.0, g);
    return g;
}

/// Projects parameters so rewards stay bounded: the L2 ball of radius `bound`
/// for linear, the box [-bound, bound] on every logit for policy kinds.
inline void clamp_parameters(RewardParameterization& param, double bound) {
    if (!(bound >= 0.0)) throw std::invalid_argument("clamp_parameters: bound must be non-negative");
    if (param.kind == RewardKind::linear) {
        const double norm = param.theta.norm();
        if (norm > bound) param.theta *= bound / norm;
    } else {
        param.theta = param.theta.cwiseMax(-bound).cwiseMin(bound);
    }
}

/// An alpha_0 with |r_theta(x, y)| <= alpha_0 for every parameter vector
/// inside clamp_parameters(., bound).
inline double reward_bound(const RewardParameterization& param, const World& world, double bound) {
    if (param.kind == RewardKind::linear) {
        double max_norm = 0.0;
        for (Eigen::Index i = 0; i < world.features.rows(); ++i) max_norm = std::max(max_norm, world.features.row(i).norm());
        return bound * max_norm;
    }
    // |log pi_theta| <= 2 bound + log K inside the box.
    const double log_pi_max = 2.0 * bound + std::log(static_cast<double>(world.pool_size()));
    double worst = 0.0;
    for (PromptId p = 0; p < world.prompt_count(); ++p)
        for (ResponseId y = 0; y < world.pool_size(); ++y) {
            const double scale = detail::policy_scale(param, world, p, y);
            const double extent = param.kind == RewardKind::simpo ? log_pi_max
                                                                   : log_pi_max + std::abs(log_reference(world, p, y));
            worst = std::max(worst, scale * extent);
        }
    return worst;
}

// Checkpoint: kind, hyperparameters, flat parameters and their index map.
inline std::string checkpoint_to_json(const RewardParameterization& param, const World& world) {
    std::ostringstream os;
    os << "{\"kind\":\"" << to_string(param.kind) << "\",\"beta\":" << format_double(param.beta);
    if (!param.l_factor.empty()) {
        os << ",\"l_factor\":";
        io::write_array(os, std::span<const double>(param.l_factor));
    }
    if (param.kind == RewardKind::linear) {
        os << ",\"index_map\":{\"layout\":\"feature\",\"feature_dim\":" << world.feature_dim() << '}';
    } else {
        os << ",\"index_map\":{\"layout\":\"prompt_major\",\"prompt_count\":" << world.prompt_count()
           << ",\"responses_per_prompt\":" << world.pool_size() << '}';
    }
    os << ",\"theta\":";
    io::write_array(os, std::span<const double>(param.theta.data(), param.dim()));
    os << "}\n";
    return os.str();
}

inline RewardParameterization checkpoint_from_json(const io::Json& j, const World& world) {
    RewardParameterization p;
    p.kind = reward_kind_from_string(j.at("kind").get<std::string>());
    p.beta = j.at("beta").get<double>();
    if (j.contains("l_factor")) p.l_factor = j.at("l_factor").get<std::vector<double>>();
    const auto& map = j.at("index_map");
    const auto layout = map.at("layout").get<std::string>();
    if (p.kind == RewardKind::linear) {
        if (layout != "feature" || map.at("feature_dim").get<std::size_t>() != world.feature_dim())
            throw std::invalid_argument("checkpoint: index map does not match the world");
    } else if (layout != "prompt_major" || map.at("prompt_count").get<std::size_t>() != world.prompt_count() ||
               map.at("responses_per_prompt").get<std::size_t>() != world.pool_size()) {
        throw std::invalid_argument("checkpoint: index map does not match the world");
    }
    const auto theta = j.at("theta").get<std::vector<double>>();
    p.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    validate(p, world);
    return p;
}

}  // namespace hps
