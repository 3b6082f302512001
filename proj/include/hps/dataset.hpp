#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "hps/io.hpp"
#include "hps/ranking.hpp"
#include "hps/world.hpp"

namespace hps {

/// One prompt with n candidate responses stored in ranked order:
/// responses[0] is the preferred response, responses[1..] the dispreferred ones.
struct PreferenceSample {
    PromptId prompt_id = 0;
    std::vector<ResponseId> responses;
    std::vector<double> est_rewards;  // position-aligned with responses
    std::vector<int> lengths;         // position-aligned with responses

    std::size_t size() const { return responses.size(); }

    friend bool operator==(const PreferenceSample&, const PreferenceSample&) = default;
};

inline void validate(const PreferenceSample& s) {
    const std::size_t n = s.responses.size();
    if (n < 2) throw std::invalid_argument("preference sample: need at least two responses");
    if (s.est_rewards.size() != n || s.lengths.size() != n)
        throw std::invalid_argument("preference sample: est_rewards/lengths not aligned with responses");
    std::unordered_set<ResponseId> seen;
    for (auto y : s.responses)
        if (!seen.insert(y).second) throw std::invalid_argument("preference sample: duplicate response id");
    for (double r : s.est_rewards)
        if (!std::isfinite(r)) throw std::invalid_argument("preference sample: non-finite est_reward");
    for (int l : s.lengths)
        if (l < 1) throw std::invalid_argument("preference sample: lengths must be positive");
}

struct PreferenceDataset {
    std::vector<PreferenceSample> samples;
    std::string world_ref;  // config hash of the generating world
    std::size_t n = 0;      // common ranking length

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

/// Each sample: a uniform prompt, n distinct uniform candidates from its pool,
/// ranked by the PL sampler under r*. est_rewards start at zero.
inline PreferenceDataset generate_dataset(const World& world, std::size_t m, std::size_t n, Rng& rng) {
    if (n > world.pool_size())
        throw std::invalid_argument("generate_dataset: n exceeds the per-prompt response pool");
    if (n < 2 && m > 0) throw std::invalid_argument("generate_dataset: n must be at least 2");

    PreferenceDataset ds;
    ds.world_ref = world.config_hash();
    ds.n = n;
    ds.samples.reserve(m);

    std::uniform_int_distribution<std::size_t> pick_prompt(0, world.prompt_count() - 1);
    std::vector<ResponseId> pool(world.pool_size());
    std::vector<double> rewards(n);
    for (std::size_t i = 0; i < m; ++i) {
        PreferenceSample s;
        s.prompt_id = pick_prompt(rng);
        // partial Fisher-Yates over the pool
        for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k;
        for (std::size_t k = 0; k < n; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
            std::swap(pool[k], pool[pick(rng)]);
        }
        for (std::size_t k = 0; k < n; ++k) rewards[k] = world.true_reward(s.prompt_id, pool[k]);
        const Permutation order = sample_ranking(rewards, rng);
        s.responses.resize(n);
        s.lengths.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            s.responses[j] = pool[order[j]];
            s.lengths[j] = world.length(s.prompt_id, s.responses[j]);
        }
        s.est_rewards.assign(n, 0.0);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

struct AnnotationMode {
    enum class Kind { ground_truth, noisy } kind = Kind::ground_truth;
    double sigma = 0.0;

    static AnnotationMode ground_truth() { return {}; }
    static AnnotationMode noisy(double sigma) { return {Kind::noisy, sigma}; }
};

/// Fills est_rewards with r* (optionally plus Gaussian noise).
inline PreferenceDataset annotate_rewards(PreferenceDataset dataset, const World& world, AnnotationMode mode, Rng& rng) {
    if (mode.kind == AnnotationMode::Kind::noisy && !(mode.sigma >= 0.0))
        throw std::invalid_argument("annotate_rewards: sigma must be non-negative");
    if (!dataset.world_ref.empty() && dataset.world_ref != world.config_hash())
        throw std::invalid_argument("annotate_rewards: dataset was generated from a different world");
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& s : dataset.samples) {
        s.est_rewards.resize(s.responses.size());
        for (std::size_t j = 0; j < s.responses.size(); ++j) {
            double r = world.true_reward(s.prompt_id, s.responses[j]);
            if (mode.kind == AnnotationMode::Kind::noisy && mode.sigma > 0.0) r += mode.sigma * noise(rng);
            s.est_rewards[j] = r;
        }
    }
    return dataset;
}

// JSONL: one sample per line, keys in fixed order.
inline void write_sample_jsonl(std::ostream& os, const PreferenceSample& s) {
    os << "{\"prompt_id\":" << s.prompt_id << ",\"responses\":";
    io::write_int_array(os, std::span<const ResponseId>(s.responses));
    os << ",\"est_rewards\":";
    io::write_array(os, std::span<const double>(s.est_rewards));
    os << ",\"lengths\":";
    io::write_int_array(os, std::span<const int>(s.lengths));
    os << "}\n";
}

inline std::string dataset_to_jsonl(const PreferenceDataset& ds) {
    std::ostringstream os;
    for (const auto& s : ds.samples) write_sample_jsonl(os, s);
    return os.str();
}

inline PreferenceSample sample_from_json(const io::Json& j) {
    PreferenceSample s;
    s.prompt_id = j.at("prompt_id").get<PromptId>();
    s.responses = j.at("responses").get<std::vector<ResponseId>>();
    s.est_rewards = j.at("est_rewards").get<std::vector<double>>();
    s.lengths = j.at("lengths").get<std::vector<int>>();
    validate(s);
    return s;
}

inline PreferenceDataset dataset_from_jsonl(std::istream& in, std::string world_ref = {}) {
    PreferenceDataset ds;
    ds.world_ref = std::move(world_ref);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        PreferenceSample s;
        try {
            s = sample_from_json(io::Json::parse(line));
        } catch (const std::exception& e) {
            throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        if (ds.samples.empty()) ds.n = s.size();
        else if (s.size() != ds.n)
            throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": ranking length differs");
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

inline PreferenceDataset dataset_from_jsonl(const std::string& text, std::string world_ref = {}) {
    std::istringstream in(text);
    return dataset_from_jsonl(in, std::move(world_ref));
}

}  // namespace hps
