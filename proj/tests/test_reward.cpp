#include <cmath>

#include <gtest/gtest.h>

#include "hps/reward.hpp"
#include "support.hpp"

using namespace hps;
using hps::testing::random_param;
using hps::testing::small_world;

namespace {

// Central differences of the scalar reward, one coordinate at a time.
Eigen::VectorXd numeric_reward_gradient(RewardParameterization p, const World& w, PromptId x, ResponseId y) {
    const double h = 1e-5;
    Eigen::VectorXd g(p.theta.size());
    for (Eigen::Index k = 0; k < p.theta.size(); ++k) {
        const double orig = p.theta[k];
        p.theta[k] = orig + h;
        const double up = reward(p, w, x, y);
        p.theta[k] = orig - h;
        const double down = reward(p, w, x, y);
        p.theta[k] = orig;
        g[k] = (up - down) / (2 * h);
    }
    return g;
}

const RewardKind kAllKinds[] = {RewardKind::linear, RewardKind::dpo_implicit, RewardKind::kto, RewardKind::simpo};

}  // namespace

TEST(Reward, ImplicitRewardVanishesAtReference) {
    const World w = small_world(3, 6, 2, 1);
    const auto p = make_policy_reward(RewardKind::dpo_implicit, w);
    for (PromptId x = 0; x < 3; ++x)
        for (ResponseId y = 0; y < 6; ++y) EXPECT_NEAR(reward(p, w, x, y), 0.0, 1e-15);
}

TEST(Reward, ImplicitRewardScalesLogRatioByBeta) {
    // Uniform reference over K; choose pi_theta(y0) = e^{2} / K.
    const std::size_t k = 20;
    World w = small_world(1, k, 1, 2);
    w.ref_logits.setZero();
    auto p = make_policy_reward(RewardKind::dpo_implicit, w, 0.1);
    p.theta.setZero();
    const double target = std::exp(2.0) / static_cast<double>(k);
    p.theta[0] = std::log(target * static_cast<double>(k - 1) / (1.0 - target));
    EXPECT_NEAR(log_policy(p, w, 0, 0) - log_reference(w, 0, 0), 2.0, 1e-12);
    EXPECT_NEAR(reward(p, w, 0, 0), 0.2, 1e-12);
}

TEST(Reward, SimpoWithUnitLengthIsLogPolicy) {
    World w = small_world(1, 4, 1, 3);
    w.lengths.assign(4, 1);
    auto p = make_policy_reward(RewardKind::simpo, w, 1.0);
    p.theta << 0.3, -1.0, 0.0, 2.0;
    EXPECT_NEAR(reward(p, w, 0, 1), log_policy(p, w, 0, 1), 1e-15);
    // pick theta so that log pi(y0) = -0.7
    p.theta.setZero();
    const double pi0 = std::exp(-0.7);
    p.theta[0] = std::log(pi0 * 3.0 / (1.0 - pi0));
    EXPECT_NEAR(reward(p, w, 0, 0), -0.7, 1e-12);
}

TEST(Reward, KtoUsesPerResponseFactor) {
    const World w = small_world(2, 5, 1, 4);
    Rng rng = make_rng(4);
    auto p = random_param(RewardKind::kto, w, rng);
    const double plain = reward(p, w, 1, 2);
    p.l_factor.assign(w.entry_count(), 1.0);
    p.l_factor[w.index(1, 2)] = 3.0;
    EXPECT_NEAR(reward(p, w, 1, 2), 3.0 * plain, 1e-14);
}

TEST(RewardGradient, LinearIsFeature) {
    const World w = small_world(4, 7, 5, 5);
    Rng rng = make_rng(5);
    const auto p = random_param(RewardKind::linear, w, rng);
    for (ResponseId y = 0; y < 7; ++y) {
        const Eigen::VectorXd expected = w.feature(2, y).transpose();
        EXPECT_EQ(reward_gradient(p, w, 2, y), expected);
    }
}

TEST(RewardGradient, UniformPolicySoftmaxJacobian) {
    const std::size_t k = 6;
    const World w = small_world(2, k, 1, 6);
    auto p = make_policy_reward(RewardKind::dpo_implicit, w, 0.1);
    p.theta.setConstant(0.4);
    const auto g = reward_gradient(p, w, 1, 3);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        const bool own_prompt = i >= static_cast<Eigen::Index>(k);
        double expected = 0.0;
        if (own_prompt) expected = i == static_cast<Eigen::Index>(k + 3) ? 0.1 * (1.0 - 1.0 / k) : -0.1 / k;
        EXPECT_NEAR(g[i], expected, 1e-15) << i;
    }
}

TEST(RewardGradient, MatchesFiniteDifferencesForEveryKind) {
    const World w = small_world(3, 5, 4, 7);
    Rng rng = make_rng(7);
    std::uniform_int_distribution<std::size_t> px(0, 2), py(0, 4);
    for (RewardKind kind : kAllKinds) {
        double worst = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            auto p = random_param(kind, w, rng);
            if (kind == RewardKind::kto) {
                p.l_factor.resize(w.entry_count());
                for (auto& l : p.l_factor) l = 0.5 + uniform01(rng);
            }
            const PromptId x = px(rng);
            const ResponseId y = py(rng);
            const auto a = reward_gradient(p, w, x, y);
            const auto f = numeric_reward_gradient(p, w, x, y);
            const double scale = std::max(a.norm(), f.norm());
            worst = std::max(worst, scale < 1e-12 ? (a - f).norm() : (a - f).norm() / scale);
        }
        EXPECT_LE(worst, 1e-5) << to_string(kind);
    }
}

TEST(Reward, PromptShiftLeavesDifferencesUnchanged) {
    const World w = small_world(3, 6, 1, 8);
    Rng rng = make_rng(8);
    for (RewardKind kind : {RewardKind::dpo_implicit, RewardKind::kto, RewardKind::simpo}) {
        auto p = random_param(kind, w, rng);
        auto shifted = p;
        shifted.theta.segment(6, 6).array() += 17.25;
        for (ResponseId a = 0; a < 6; ++a)
            for (ResponseId b = 0; b < 6; ++b)
                EXPECT_NEAR(reward(p, w, 1, a) - reward(p, w, 1, b), reward(shifted, w, 1, a) - reward(shifted, w, 1, b),
                            1e-12);
    }
}

TEST(Reward, ClampingEnforcesRewardBound) {
    const World w = small_world(3, 8, 4, 9);
    Rng rng = make_rng(9);
    for (RewardKind kind : kAllKinds) {
        for (int rep = 0; rep < 20; ++rep) {
            auto p = random_param(kind, w, rng, 5.0);
            clamp_parameters(p, 1.5);
            const double alpha0 = reward_bound(p, w, 1.5);
            for (PromptId x = 0; x < 3; ++x)
                for (ResponseId y = 0; y < 8; ++y) EXPECT_LE(std::abs(reward(p, w, x, y)), alpha0 * (1.0 + 1e-12)) << to_string(kind);
        }
    }
}

TEST(Reward, RejectsUnknownIdsAndBadParameters) {
    const World w = small_world(2, 3, 2, 10);
    const auto lin = make_linear_reward(w);
    EXPECT_THROW(reward(lin, w, 2, 0), std::out_of_range);
    EXPECT_THROW(reward(lin, w, 0, 3), std::out_of_range);

    auto p = make_policy_reward(RewardKind::dpo_implicit, w);
    p.beta = 0.0;
    EXPECT_THROW(validate(p, w), std::invalid_argument);
    p.beta = 0.1;
    p.l_factor = {1.0, -1.0};
    EXPECT_THROW(validate(p, w), std::invalid_argument);

    auto bad = make_policy_reward(RewardKind::dpo_implicit, w);
    bad.theta[0] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(reward(bad, w, 0, 1), std::domain_error);
}

TEST(Checkpoint, RoundTripsBitExact) {
    const World w = small_world(3, 4, 2, 11);
    Rng rng = make_rng(11);
    for (RewardKind kind : kAllKinds) {
        const auto p = random_param(kind, w, rng);
        const std::string text = checkpoint_to_json(p, w);
        const auto back = checkpoint_from_json(io::Json::parse(text), w);
        EXPECT_EQ(back.kind, p.kind);
        EXPECT_EQ(back.theta, p.theta);
        EXPECT_EQ(checkpoint_to_json(back, w), text);
    }
    const World other = small_world(3, 5, 2, 11);
    const auto policy = make_policy_reward(RewardKind::simpo, w);
    EXPECT_THROW(checkpoint_from_json(io::Json::parse(checkpoint_to_json(policy, w)), other), std::invalid_argument);
}
