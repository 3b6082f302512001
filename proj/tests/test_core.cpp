#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <gtest/gtest.h>

#include "hps/dataset.hpp"
#include "hps/ranking.hpp"
#include "hps/world.hpp"

using namespace hps;

namespace {

WorldConfig small_config() {
    WorldConfig c;
    c.prompt_count = 6;
    c.responses_per_prompt = 10;
    c.feature_dim = 3;
    c.ball_radius = 2.0;
    return c;
}

}  // namespace

TEST(World, DeterministicInConfigAndSeed) {
    const World a = build_world(small_config(), 11);
    const World b = build_world(small_config(), 11);
    EXPECT_EQ(world_to_json(a), world_to_json(b));
    const World c = build_world(small_config(), 12);
    EXPECT_NE(world_to_json(a), world_to_json(c));
}

TEST(World, FeaturesAndThetaStayInTheirBalls) {
    WorldConfig c;
    c.feature_dim = 8;
    c.prompt_count = 50;
    c.responses_per_prompt = 100;
    c.ball_radius = 3.0;
    const World w = build_world(c, 7);
    for (Eigen::Index i = 0; i < w.features.rows(); ++i) EXPECT_LE(w.features.row(i).norm(), 1.0 + 1e-12);
    EXPECT_LE(w.theta_star.norm(), c.ball_radius);
    for (int l : w.lengths) {
        EXPECT_GE(l, 4);
        EXPECT_LE(l, 64);
    }
}

TEST(World, ForcedZeroThetaGivesZeroRewards) {
    WorldConfig c = small_config();
    c.feature_dim = 1;
    c.theta_star = std::vector<double>{0.0};
    const World w = build_world(c, 3);
    EXPECT_EQ(w.theta_star.norm(), 0.0);
    for (PromptId p = 0; p < w.prompt_count(); ++p)
        for (ResponseId y = 0; y < w.pool_size(); ++y) EXPECT_EQ(w.true_reward(p, y), 0.0);
}

TEST(World, RejectsBadConfigs) {
    WorldConfig c = small_config();
    c.feature_dim = 0;
    EXPECT_THROW(build_world(c, 0), std::invalid_argument);
    c = small_config();
    c.ball_radius = 0.0;
    EXPECT_THROW(build_world(c, 0), std::invalid_argument);
    c = small_config();
    c.ball_radius = -1.0;
    EXPECT_THROW(build_world(c, 0), std::invalid_argument);
    c = small_config();
    c.theta_star = std::vector<double>{5.0, 0.0, 0.0};
    EXPECT_THROW(build_world(c, 0), std::invalid_argument);
}

TEST(World, UnknownIdThrows) {
    const World w = build_world(small_config(), 1);
    EXPECT_THROW(w.feature(6, 0), std::out_of_range);
    EXPECT_THROW(w.ref_logit(0, 10), std::out_of_range);
}

TEST(World, JsonRoundTripIsExact) {
    const World w = build_world(small_config(), 5);
    const std::string text = world_to_json(w);
    const World back = world_from_json(io::Json::parse(text));
    EXPECT_EQ(back.features, w.features);
    EXPECT_EQ(back.theta_star, w.theta_star);
    EXPECT_EQ(back.ref_logits, w.ref_logits);
    EXPECT_EQ(back.lengths, w.lengths);
    EXPECT_EQ(back.config_hash(), w.config_hash());
    EXPECT_EQ(world_to_json(back), text);
}

TEST(PlProbability, HandValues) {
    const std::vector<double> zeros = {0.0, 0.0, 0.0};
    for (const Permutation& t : {Permutation{0, 1, 2}, Permutation{2, 0, 1}, Permutation{1, 2, 0}})
        EXPECT_NEAR(pl_rank_probability(zeros, t), 1.0 / 6.0, 1e-15);
    const std::vector<double> two = {std::log(2.0), 0.0};
    EXPECT_NEAR(pl_rank_probability(two, Permutation{0, 1}), 2.0 / 3.0, 1e-15);
    const std::vector<double> three = {std::log(3.0), std::log(2.0), 0.0};
    EXPECT_NEAR(pl_rank_probability(three, Permutation{0, 1, 2}), 1.0 / 3.0, 1e-15);
}

TEST(PlProbability, SumsToOneOverAllPermutations) {
    Rng rng = make_rng(21);
    std::normal_distribution<double> normal(0.0, 2.0);
    for (std::size_t n = 1; n <= 5; ++n) {
        for (int rep = 0; rep < 5; ++rep) {
            std::vector<double> r(n);
            for (auto& v : r) v = normal(rng);
            Permutation t(n);
            std::iota(t.begin(), t.end(), std::size_t{0});
            double total = 0.0;
            do total += pl_rank_probability(r, t);
            while (std::next_permutation(t.begin(), t.end()));
            EXPECT_NEAR(total, 1.0, 1e-12) << "n=" << n;
        }
    }
}

TEST(PlProbability, ShiftInvariantAndBtAtTwo) {
    Rng rng = make_rng(22);
    std::normal_distribution<double> normal(0.0, 3.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> r(4);
        for (auto& v : r) v = normal(rng);
        Permutation t = {2, 0, 3, 1};
        std::vector<double> shifted = r;
        const double c = normal(rng) * 10.0;
        for (auto& v : shifted) v += c;
        EXPECT_NEAR(pl_rank_probability(r, t), pl_rank_probability(shifted, t), 1e-12);

        const std::vector<double> pair = {r[0], r[1]};
        EXPECT_NEAR(pl_rank_probability(pair, Permutation{0, 1}), sigmoid(r[0] - r[1]), 1e-12);
    }
}

TEST(PlProbability, StableForLargeRewards) {
    const std::vector<double> r = {800.0, 0.0, -800.0};
    EXPECT_NEAR(pl_rank_probability(r, Permutation{0, 1, 2}), 1.0, 1e-12);
    EXPECT_TRUE(std::isfinite(pl_log_probability(r, Permutation{2, 1, 0})));
}

TEST(PlProbability, RejectsInvalidPermutation) {
    const std::vector<double> r = {0.0, 1.0, 2.0};
    EXPECT_THROW(pl_rank_probability(r, Permutation{0, 0, 1}), std::invalid_argument);
    EXPECT_THROW(pl_rank_probability(r, Permutation{0, 1}), std::invalid_argument);
    EXPECT_THROW(pl_rank_probability(r, Permutation{0, 1, 3}), std::invalid_argument);
}

TEST(SampleRanking, SingleItemIsIdentity) {
    Rng rng = make_rng(1);
    EXPECT_EQ(sample_ranking(std::vector<double>{4.2}, rng), Permutation{0});
}

TEST(SampleRanking, PairFrequencyMatchesSigmoid) {
    Rng rng = make_rng(2);
    const std::vector<double> r = {std::log(2.0), 0.0};
    int first = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) first += sample_ranking(r, rng)[0] == 0 ? 1 : 0;
    EXPECT_NEAR(static_cast<double>(first) / draws, 2.0 / 3.0, 0.01);
}

TEST(SampleRanking, UniformOverSixOrders) {
    Rng rng = make_rng(3);
    const std::vector<double> r = {0.0, 0.0, 0.0};
    std::map<Permutation, int> counts;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) ++counts[sample_ranking(r, rng)];
    ASSERT_EQ(counts.size(), 6u);
    for (const auto& [perm, c] : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 1.0 / 6.0, 0.01);
}

TEST(Dataset, EmptyWhenMIsZero) {
    const World w = build_world(small_config(), 4);
    Rng rng = make_rng(4);
    EXPECT_TRUE(generate_dataset(w, 0, 3, rng).empty());
}

TEST(Dataset, SamplesAreDistinctAndAligned) {
    const World w = build_world(small_config(), 4);
    Rng rng = make_rng(4);
    const auto ds = generate_dataset(w, 200, 5, rng);
    ASSERT_EQ(ds.size(), 200u);
    EXPECT_EQ(ds.n, 5u);
    EXPECT_EQ(ds.world_ref, w.config_hash());
    for (const auto& s : ds.samples) {
        EXPECT_NO_THROW(validate(s));
        EXPECT_EQ(s.size(), 5u);
        for (std::size_t j = 0; j < s.size(); ++j) EXPECT_EQ(s.lengths[j], w.length(s.prompt_id, s.responses[j]));
    }
}

TEST(Dataset, RejectsOversizedRankings) {
    const World w = build_world(small_config(), 4);
    Rng rng = make_rng(4);
    EXPECT_THROW(generate_dataset(w, 3, 11, rng), std::invalid_argument);
}

TEST(Dataset, LargeGapRanksHigherRewardFirst) {
    WorldConfig c;
    c.ball_radius = 3.0;
    const World base = build_world(c, 9);
    const Eigen::VectorXd scaled = base.theta_star * 10.0;
    c.ball_radius = 30.0;
    c.theta_star = std::vector<double>(scaled.data(), scaled.data() + scaled.size());
    const World w = build_world(c, 9);
    Rng rng = make_rng(9);
    const auto ds = generate_dataset(w, 10000, 2, rng);
    int agree = 0;
    double expected = 0.0;  // exact P(higher reward first) per drawn pair
    for (const auto& s : ds.samples) {
        const double a = w.true_reward(s.prompt_id, s.responses[0]);
        const double b = w.true_reward(s.prompt_id, s.responses[1]);
        agree += a > b ? 1 : 0;
        expected += 1.0 / (1.0 + std::exp(-std::abs(a - b)));
    }
    const double frac = static_cast<double>(agree) / static_cast<double>(ds.size());
    expected /= static_cast<double>(ds.size());
    EXPECT_GT(frac, 0.95);
    EXPECT_NEAR(frac, expected, 0.01);
}

TEST(Annotate, GroundTruthAndZeroNoiseAgree) {
    const World w = build_world(small_config(), 6);
    Rng rng = make_rng(6);
    const auto ds = generate_dataset(w, 50, 4, rng);
    Rng r1 = make_rng(7), r2 = make_rng(8);
    const auto gt = annotate_rewards(ds, w, AnnotationMode::ground_truth(), r1);
    const auto zero = annotate_rewards(ds, w, AnnotationMode::noisy(0.0), r2);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const auto& s = gt.samples[i];
        for (std::size_t j = 0; j < s.size(); ++j) EXPECT_EQ(s.est_rewards[j], w.true_reward(s.prompt_id, s.responses[j]));
        EXPECT_EQ(s.est_rewards, zero.samples[i].est_rewards);
    }
}

TEST(Annotate, NoisyMatchesHalfNormalMean) {
    const World w = build_world(small_config(), 6);
    Rng rng = make_rng(6);
    const auto ds = generate_dataset(w, 2500, 4, rng);
    Rng noise = make_rng(10);
    const auto noisy = annotate_rewards(ds, w, AnnotationMode::noisy(0.5), noise);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& s : noisy.samples)
        for (std::size_t j = 0; j < s.size(); ++j, ++count)
            total += std::abs(s.est_rewards[j] - w.true_reward(s.prompt_id, s.responses[j]));
    const double expected = 0.5 * std::sqrt(2.0 / M_PI);
    EXPECT_NEAR(total / static_cast<double>(count), expected, 0.05 * expected);
}

TEST(Annotate, RejectsNegativeSigmaAndForeignWorld) {
    const World w = build_world(small_config(), 6);
    Rng rng = make_rng(6);
    const auto ds = generate_dataset(w, 5, 3, rng);
    EXPECT_THROW(annotate_rewards(ds, w, AnnotationMode::noisy(-0.1), rng), std::invalid_argument);
    const World other = build_world(small_config(), 99);
    EXPECT_THROW(annotate_rewards(ds, other, AnnotationMode::ground_truth(), rng), std::invalid_argument);
}

TEST(Dataset, JsonlRoundTrip) {
    const World w = build_world(small_config(), 8);
    Rng rng = make_rng(8);
    auto ds = generate_dataset(w, 30, 4, rng);
    ds = annotate_rewards(ds, w, AnnotationMode::noisy(0.3), rng);
    const std::string text = dataset_to_jsonl(ds);
    const auto back = dataset_from_jsonl(text, ds.world_ref);
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.samples[i], ds.samples[i]);
    EXPECT_EQ(dataset_to_jsonl(back), text);
    EXPECT_EQ(text.substr(0, 13), "{\"prompt_id\":");
}

TEST(Dataset, JsonlRejectsMalformedLines) {
    EXPECT_THROW(dataset_from_jsonl(std::string("{\"prompt_id\":0,\"responses\":[1,1],\"est_rewards\":[0,0],\"lengths\":[4,4]}\n")),
                 std::invalid_argument);
    EXPECT_THROW(dataset_from_jsonl(std::string("{\"prompt_id\":0,\"responses\":[1,2],\"est_rewards\":[0,0],\"lengths\":[4,4]}\n"
                                                "{\"prompt_id\":0,\"responses\":[1,2,3],\"est_rewards\":[0,0,0],\"lengths\":[4,4,4]}\n")),
                 std::invalid_argument);
}
