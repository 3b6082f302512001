#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "hps/dataset.hpp"
#include "hps/numeric.hpp"
#include "hps/reward.hpp"

namespace hps {

enum class LossKind { pl, bt, hps_exact, hps_sampled, weighted_hps, slic, lipo };

inline std::string_view to_string(LossKind k) {
    switch (k) {
        case LossKind::pl: return "pl";
        case LossKind::bt: return "bt";
        case LossKind::hps_exact: return "hps_exact";
        case LossKind::hps_sampled: return "hps_sampled";
        case LossKind::weighted_hps: return "weighted_hps";
        case LossKind::slic: return "slic";
        case LossKind::lipo: return "lipo";
    }
    return "?";
}

inline LossKind loss_kind_from_string(std::string_view s) {
    for (auto k : {LossKind::pl, LossKind::bt, LossKind::hps_exact, LossKind::hps_sampled, LossKind::weighted_hps,
                   LossKind::slic, LossKind::lipo})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown loss kind '" + std::string(s) + "'");
}

inline bool is_hps_loss(LossKind k) {
    return k == LossKind::hps_exact || k == LossKind::hps_sampled || k == LossKind::weighted_hps;
}

/// How the importance-weighted negative term enters the HPS denominator.
///   expectation: e^{r1} + N * sum_i q_i e^{r_i}   (recovers the plain softmax loss for uniform q)
///   uniform_p:   e^{r1} +     sum_i q_i e^{r_i}   (empirical form with p uniform over the N negatives)
enum class HpsNormalization { expectation, uniform_p };

struct LossOptions {
    double gamma = 1.0;
    double weight_lambda = 1.0;  // weighted HPS: weight of the second-preferred term
    double slic_delta = 1.0;
    double slic_lambda = 0.0;
    HpsNormalization normalization = HpsNormalization::expectation;
};

/// Softmax of gamma * r_est over the dispreferred responses of one sample.
struct HardSamplingWeights {
    double gamma = 0.0;
    std::vector<double> weights;      // aligned with responses[1..n-1]
    std::vector<double> log_weights;  // same, in log space (no underflow at large gamma)
};

struct LossValue {
    double value = 0.0;
    Eigen::VectorXd gradient;
    std::optional<std::size_t> sampled_index;  // position in the ranked list (hps_sampled)
    std::vector<double> terms;                 // per-term breakdown where the loss is a sum
    std::size_t reward_evals = 0;
};

/// Loss as a function of the per-response scores, with d(loss)/d(score).
struct ScalarLoss {
    double value = 0.0;
    std::vector<double> d_scores;
    std::vector<double> terms;
};

// ---------------------------------------------------------------------------
// Hard sampling distribution

inline HardSamplingWeights hard_sampling_weights(std::span<const double> est_rewards, double gamma) {
    if (est_rewards.empty()) throw std::invalid_argument("hard_sampling_weights: no dispreferred responses");
    HardSamplingWeights q;
    q.gamma = gamma;
    q.log_weights.resize(est_rewards.size());
    for (std::size_t i = 0; i < est_rewards.size(); ++i) {
        if (!std::isfinite(est_rewards[i])) throw std::invalid_argument("hard_sampling_weights: non-finite est_reward");
        q.log_weights[i] = gamma * est_rewards[i];
    }
    const double lse = log_sum_exp(q.log_weights);
    q.weights.resize(est_rewards.size());
    for (std::size_t i = 0; i < est_rewards.size(); ++i) {
        q.log_weights[i] -= lse;
        q.weights[i] = std::exp(q.log_weights[i]);
    }
    return q;
}

inline HardSamplingWeights hard_sampling_distribution(const PreferenceSample& sample, double gamma) {
    if (sample.size() < 2 || sample.est_rewards.size() != sample.size())
        throw std::invalid_argument("hard_sampling_distribution: malformed sample");
    return hard_sampling_weights(std::span<const double>(sample.est_rewards).subspan(1), gamma);
}

// ---------------------------------------------------------------------------
// Scalar-level losses. scores[0] is the preferred response throughout.

/// Sum over positions j of -log softmax_j among positions j..n-1.
inline ScalarLoss pl_loss_from_scores(std::span<const double> r) {
    const std::size_t n = r.size();
    if (n < 2) throw std::invalid_argument("pl loss: need at least two responses");
    std::vector<double> suffix(n);
    double acc = -std::numeric_limits<double>::infinity();
    for (std::size_t j = n; j-- > 0;) {
        acc = log_add_exp(acc, r[j]);
        suffix[j] = acc;
    }
    ScalarLoss out;
    out.terms.resize(n);
    out.d_scores.assign(n, -1.0);
    for (std::size_t j = 0; j < n; ++j) {
        out.terms[j] = suffix[j] - r[j];
        out.value += out.terms[j];
    }
    // d/dr_k = -1 + sum_{j<=k} softmax_{j}(k)
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j <= k; ++j) out.d_scores[k] += std::exp(r[k] - suffix[j]);
    return out;
}

/// -log sigmoid(r_first - r_last).
inline ScalarLoss bt_loss_from_scores(double preferred, double rejected) {
    const double margin = preferred - rejected;
    ScalarLoss out;
    out.value = softplus(-margin);
    const double s = sigmoid(-margin);
    out.d_scores = {-s, s};
    return out;
}

/// -log( e^{r_0} / (e^{r_0} + c * sum_i q_i e^{r_i}) ) with c = N or 1 by normalization.
/// log_q[i] pairs with r[i + 1].
inline ScalarLoss hps_loss_from_scores(std::span<const double> r, std::span<const double> log_q,
                                       HpsNormalization norm = HpsNormalization::expectation) {
    const std::size_t n = r.size();
    if (n < 2 || log_q.size() != n - 1) throw std::invalid_argument("hps loss: scores and weights misaligned");
    const double log_n = norm == HpsNormalization::expectation ? std::log(static_cast<double>(n - 1)) : 0.0;
    std::vector<double> a(n);
    a[0] = r[0];
    for (std::size_t i = 1; i < n; ++i) a[i] = log_n + log_q[i - 1] + r[i];
    const double lse = log_sum_exp(a);
    ScalarLoss out;
    out.value = lse - r[0];
    out.d_scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.d_scores[i] = std::exp(a[i] - lse);
    out.d_scores[0] -= 1.0;
    return out;
}

/// -log( e^{r_pos} / (e^{r_pos} + N e^{r_neg}) ) for a single drawn negative.
inline ScalarLoss hps_single_from_scores(double preferred, double negative, std::size_t negatives) {
    const double z = negative - preferred + std::log(static_cast<double>(negatives));
    ScalarLoss out;
    out.value = softplus(z);
    const double s = sigmoid(z);
    out.d_scores = {-s, s};
    return out;
}

/// Hinge on sequence log-probabilities; d_scores = d/d(pos, neg, ref).
/// The subgradient at the kink is zero.
inline ScalarLoss slic_from_logprobs(double pos, double neg, double ref, double delta, double lambda) {
    if (!(delta >= 0.0)) throw std::invalid_argument("slic: delta must be non-negative");
    const double z = delta - pos + neg - lambda * ref;
    ScalarLoss out;
    out.value = std::max(0.0, z);
    out.d_scores = z > 0.0 ? std::vector<double>{-1.0, 1.0, -lambda} : std::vector<double>{0.0, 0.0, 0.0};
    return out;
}

/// Rank positions (1-based) of the ordering induced by scores, highest first.
/// Ties keep the incoming order.
inline std::vector<std::size_t> induced_ranks(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> rank(scores.size());
    for (std::size_t pos = 0; pos < idx.size(); ++pos) rank[idx[pos]] = pos + 1;
    return rank;
}

/// Lambda-weighted pairwise logistic loss. The lambda weights are piecewise
/// constant in the scores and are treated as constants when differentiating.
inline ScalarLoss lipo_from_scores(std::span<const double> s, std::span<const double> psi) {
    if (s.size() != psi.size()) throw std::invalid_argument("lipo: psi length does not match the responses");
    const auto rank = induced_ranks(s);
    ScalarLoss out;
    out.d_scores.assign(s.size(), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (!(psi[i] > psi[j])) continue;
            const double gain = std::abs(std::exp2(psi[i]) - std::exp2(psi[j]));
            const double discount = std::abs(1.0 / std::log(1.0 + static_cast<double>(rank[i])) -
                                              1.0 / std::log(1.0 + static_cast<double>(rank[j])));
            const double delta = gain * discount;
            if (delta == 0.0) continue;
            const double diff = s[i] - s[j];
            out.value += delta * softplus(-diff);
            const double g = delta * sigmoid(-diff);
            out.d_scores[i] -= g;
            out.d_scores[j] += g;
        }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter-level losses.

namespace detail {

inline std::vector<double> rewards_at(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                                      std::span<const std::size_t> positions) {
    std::vector<double> r(positions.size());
    for (std::size_t k = 0; k < positions.size(); ++k) r[k] = reward(param, world, s.prompt_id, s.responses[positions[k]]);
    return r;
}

inline std::vector<double> all_rewards(const PreferenceSample& s, const RewardParameterization& param, const World& world) {
    std::vector<double> r(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) r[j] = reward(param, world, s.prompt_id, s.responses[j]);
    return r;
}

inline void push_reward_grads(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                              std::span<const std::size_t> positions, std::span<const double> coeffs, double scale,
                              Eigen::Ref<Eigen::VectorXd> grad) {
    for (std::size_t k = 0; k < positions.size(); ++k)
        if (coeffs[k] != 0.0)
            accumulate_reward_gradient(param, world, s.prompt_id, s.responses[positions[k]], scale * coeffs[k], grad);
}

inline std::vector<std::size_t> iota_positions(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> v(end - begin);
    std::iota(v.begin(), v.end(), begin);
    return v;
}

inline void require_ranked(const PreferenceSample& s, std::size_t min_n, const char* who) {
    if (s.size() < min_n)
        throw std::invalid_argument(std::string(who) + ": need at least " + std::to_string(min_n) + " responses");
    if (s.est_rewards.size() != s.size()) throw std::invalid_argument(std::string(who) + ": est_rewards misaligned");
}

}  // namespace detail

/// Adds scale * d(loss)/d(theta) into grad and returns value, evals and
/// breakdown (the returned gradient is left empty). This is the path the
/// trainer uses; the named loss functions below wrap it.
inline LossValue accumulate_loss(LossKind kind, const PreferenceSample& s, const RewardParameterization& param,
                                 const World& world, const LossOptions& opt, Rng& rng, double scale,
                                 Eigen::Ref<Eigen::VectorXd> grad) {
    LossValue out;
    const std::size_t n = s.size();
    switch (kind) {
        case LossKind::pl: {
            detail::require_ranked(s, 2, "pl_loss");
            const auto pos = detail::iota_positions(0, n);
            const auto r = detail::all_rewards(s, param, world);
            auto l = pl_loss_from_scores(r);
            detail::push_reward_grads(s, param, world, pos, l.d_scores, scale, grad);
            out.value = l.value;
            out.terms = std::move(l.terms);
            out.reward_evals = n;
            break;
        }
        case LossKind::bt: {
            detail::require_ranked(s, 2, "bt_loss");
            const std::size_t pos[2] = {0, n - 1};
            const auto r = detail::rewards_at(s, param, world, pos);
            const auto l = bt_loss_from_scores(r[0], r[1]);
            detail::push_reward_grads(s, param, world, pos, l.d_scores, scale, grad);
            out.value = l.value;
            out.reward_evals = 2;
            break;
        }
        case LossKind::hps_exact: {
            detail::require_ranked(s, 2, "hps_exact_loss");
            const auto q = hard_sampling_distribution(s, opt.gamma);
            const auto pos = detail::iota_positions(0, n);
            const auto r = detail::all_rewards(s, param, world);
            const auto l = hps_loss_from_scores(r, q.log_weights, opt.normalization);
            detail::push_reward_grads(s, param, world, pos, l.d_scores, scale, grad);
            out.value = l.value;
            out.reward_evals = n;
            break;
        }
        case LossKind::hps_sampled: {
            detail::require_ranked(s, 2, "hps_sampled_loss");
            const auto q = hard_sampling_distribution(s, opt.gamma);
            const std::size_t drawn = 1 + sample_categorical(q.weights, rng);
            const std::size_t pos[2] = {0, drawn};
            const auto r = detail::rewards_at(s, param, world, pos);
            const std::size_t negatives = opt.normalization == HpsNormalization::expectation ? n - 1 : 1;
            const auto l = hps_single_from_scores(r[0], r[1], negatives);
            detail::push_reward_grads(s, param, world, pos, l.d_scores, scale, grad);
            out.value = l.value;
            out.sampled_index = drawn;
            out.reward_evals = 2;
            break;
        }
        case LossKind::weighted_hps: {
            detail::require_ranked(s, 3, "weighted_hps_loss");
            const auto r = detail::all_rewards(s, param, world);
            const std::span<const double> est(s.est_rewards);
            const auto q1 = hard_sampling_weights(est.subspan(1), opt.gamma);
            const auto q2 = hard_sampling_weights(est.subspan(2), opt.gamma);
            const auto l1 = hps_loss_from_scores(r, q1.log_weights, opt.normalization);
            const auto l2 = hps_loss_from_scores(std::span<const double>(r).subspan(1), q2.log_weights, opt.normalization);
            std::vector<double> coeffs(l1.d_scores);
            for (std::size_t i = 1; i < n; ++i) coeffs[i] += opt.weight_lambda * l2.d_scores[i - 1];
            const auto pos = detail::iota_positions(0, n);
            detail::push_reward_grads(s, param, world, pos, coeffs, scale, grad);
            out.value = l1.value + opt.weight_lambda * l2.value;
            out.terms = {l1.value, l2.value};
            out.reward_evals = n;
            break;
        }
        case LossKind::slic: {
            // y+ = most preferred, y- = least preferred, y_ref = y+.
            detail::require_ranked(s, 2, "slic_loss");
            const ResponseId pos_y = s.responses.front();
            const ResponseId neg_y = s.responses.back();
            const double pos = log_policy(param, world, s.prompt_id, pos_y);
            const double neg = log_policy(param, world, s.prompt_id, neg_y);
            const auto l = slic_from_logprobs(pos, neg, pos, opt.slic_delta, opt.slic_lambda);
            const double d_pos = l.d_scores[0] + l.d_scores[2];
            if (d_pos != 0.0) accumulate_log_policy_gradient(param, world, s.prompt_id, pos_y, scale * d_pos, grad);
            if (l.d_scores[1] != 0.0)
                accumulate_log_policy_gradient(param, world, s.prompt_id, neg_y, scale * l.d_scores[1], grad);
            out.value = l.value;
            out.reward_evals = 2;
            break;
        }
        case LossKind::lipo: {
            detail::require_ranked(s, 2, "lipo_loss");
            const auto r = detail::all_rewards(s, param, world);
            const auto l = lipo_from_scores(r, s.est_rewards);
            const auto pos = detail::iota_positions(0, n);
            detail::push_reward_grads(s, param, world, pos, l.d_scores, scale, grad);
            out.value = l.value;
            out.reward_evals = n;
            break;
        }
    }
    return out;
}

inline LossValue evaluate_loss(LossKind kind, const PreferenceSample& s, const RewardParameterization& param,
                               const World& world, const LossOptions& opt, Rng& rng) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(param.theta.size());
    LossValue out = accumulate_loss(kind, s, param, world, opt, rng, 1.0, grad);
    out.gradient = std::move(grad);
    return out;
}

namespace detail {
inline Rng& unused_rng() {
    thread_local Rng rng{0};
    return rng;
}
}  // namespace detail

inline LossValue pl_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world) {
    return evaluate_loss(LossKind::pl, s, param, world, {}, detail::unused_rng());
}

inline LossValue bt_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world) {
    return evaluate_loss(LossKind::bt, s, param, world, {}, detail::unused_rng());
}

inline LossValue hps_exact_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                                double gamma, HpsNormalization norm = HpsNormalization::expectation) {
    LossOptions opt;
    opt.gamma = gamma;
    opt.normalization = norm;
    return evaluate_loss(LossKind::hps_exact, s, param, world, opt, detail::unused_rng());
}

inline LossValue hps_sampled_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                                  double gamma, Rng& rng) {
    LossOptions opt;
    opt.gamma = gamma;
    return evaluate_loss(LossKind::hps_sampled, s, param, world, opt, rng);
}

inline LossValue weighted_hps_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                                   double gamma, double lambda) {
    LossOptions opt;
    opt.gamma = gamma;
    opt.weight_lambda = lambda;
    return evaluate_loss(LossKind::weighted_hps, s, param, world, opt, detail::unused_rng());
}

/// Scalar SLiC-HF hinge; the gradient is with respect to (pos, neg, ref).
inline LossValue slic_loss(double pos_logprob, double neg_logprob, double ref_logprob, double delta, double lambda) {
    const auto l = slic_from_logprobs(pos_logprob, neg_logprob, ref_logprob, delta, lambda);
    LossValue out;
    out.value = l.value;
    out.gradient = Eigen::Map<const Eigen::VectorXd>(l.d_scores.data(), 3);
    return out;
}

inline LossValue slic_sample_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                                  double delta, double lambda) {
    LossOptions opt;
    opt.slic_delta = delta;
    opt.slic_lambda = lambda;
    return evaluate_loss(LossKind::slic, s, param, world, opt, detail::unused_rng());
}

/// psi: true scores aligned with the ranked responses.
inline LossValue lipo_loss(const PreferenceSample& s, const RewardParameterization& param, const World& world,
                           std::span<const double> psi) {
    if (psi.size() != s.size()) throw std::invalid_argument("lipo_loss: psi length does not match the responses");
    PreferenceSample scored = s;
    scored.est_rewards.assign(psi.begin(), psi.end());
    return evaluate_loss(LossKind::lipo, scored, param, world, {}, detail::unused_rng());
}

// ---------------------------------------------------------------------------

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// between the analytic gradient and central finite differences. When both
/// gradients vanish (below 1e-12) the absolute difference is returned.
/// `loss_at` maps a parameterization to a LossValue and must be deterministic.
template <class LossAt>
double loss_gradient_check(LossAt&& loss_at, const RewardParameterization& param, double h = 1e-5) {
    const LossValue base = loss_at(param);
    Eigen::VectorXd numeric(param.theta.size());
    RewardParameterization probe = param;
    for (Eigen::Index k = 0; k < param.theta.size(); ++k) {
        const double orig = probe.theta[k];
        probe.theta[k] = orig + h;
        const double up = loss_at(probe).value;
        probe.theta[k] = orig - h;
        const double down = loss_at(probe).value;
        probe.theta[k] = orig;
        numeric[k] = (up - down) / (2.0 * h);
    }
    const double scale = std::max(base.gradient.norm(), numeric.norm());
    const double diff = (base.gradient - numeric).norm();
    return scale < 1e-12 ? diff : diff / scale;
}

}  // namespace hps
