#pragma once

#include <random>
#include <vector>

#include "hps/dataset.hpp"
#include "hps/reward.hpp"
#include "hps/world.hpp"

namespace hps::testing {

// One prompt, d = 1, phi = reward: with theta = (1) the linear reward of
// response j is exactly rewards[j].
inline World world_with_rewards(const std::vector<double>& rewards) {
    WorldConfig c;
    c.prompt_count = 1;
    c.responses_per_prompt = rewards.size();
    c.feature_dim = 1;
    c.ball_radius = 1.0;
    World w;
    w.config = c;
    w.features.resize(static_cast<Eigen::Index>(rewards.size()), 1);
    for (std::size_t j = 0; j < rewards.size(); ++j) w.features(static_cast<Eigen::Index>(j), 0) = rewards[j];
    w.theta_star = Eigen::VectorXd::Ones(1);
    w.ref_logits = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rewards.size()));
    w.lengths.assign(rewards.size(), 10);
    return w;
}

inline RewardParameterization unit_linear() {
    RewardParameterization p;
    p.theta = Eigen::VectorXd::Ones(1);
    return p;
}

// Identity ranking over the whole pool of prompt 0.
inline PreferenceSample identity_sample(const World& w, std::vector<double> est = {}) {
    PreferenceSample s;
    s.prompt_id = 0;
    for (ResponseId y = 0; y < w.pool_size(); ++y) {
        s.responses.push_back(y);
        s.lengths.push_back(w.length(0, y));
    }
    s.est_rewards = est.empty() ? std::vector<double>(s.responses.size(), 0.0) : std::move(est);
    return s;
}

inline World small_world(std::size_t prompts, std::size_t pool, std::size_t dim, std::uint64_t seed, double radius = 2.0) {
    WorldConfig c;
    c.prompt_count = prompts;
    c.responses_per_prompt = pool;
    c.feature_dim = dim;
    c.ball_radius = radius;
    return build_world(c, seed);
}

// Random parameter point of the given kind; policy logits are jittered
// around the reference so rewards are nonzero.
inline RewardParameterization random_param(RewardKind kind, const World& w, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    RewardParameterization p = kind == RewardKind::linear ? make_linear_reward(w) : make_policy_reward(kind, w, 0.1);
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += normal(rng);
    return p;
}

}  // namespace hps::testing
