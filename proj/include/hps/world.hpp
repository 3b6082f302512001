#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hps/io.hpp"
#include "hps/numeric.hpp"

namespace hps {

using PromptId = std::size_t;
using ResponseId = std::size_t;  // local to a prompt's candidate pool
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WorldConfig {
    std::size_t prompt_count = 50;
    std::size_t responses_per_prompt = 100;
    std::size_t feature_dim = 8;
    double ball_radius = 1.0;
    int min_length = 4;
    int max_length = 64;
    // Fixes theta* instead of drawing it; must still lie in the ball.
    std::optional<std::vector<double>> theta_star;

    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

inline io::OrderedJson to_json(const WorldConfig& c) {
    io::OrderedJson j;
    j["prompt_count"] = c.prompt_count;
    j["responses_per_prompt"] = c.responses_per_prompt;
    j["feature_dim"] = c.feature_dim;
    j["ball_radius"] = c.ball_radius;
    j["min_length"] = c.min_length;
    j["max_length"] = c.max_length;
    if (c.theta_star) j["theta_star"] = *c.theta_star;
    return j;
}

inline WorldConfig world_config_from_json(const io::Json& j) {
    WorldConfig c;
    c.prompt_count = j.value("prompt_count", c.prompt_count);
    c.responses_per_prompt = j.value("responses_per_prompt", c.responses_per_prompt);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.ball_radius = j.value("ball_radius", c.ball_radius);
    c.min_length = j.value("min_length", c.min_length);
    c.max_length = j.value("max_length", c.max_length);
    if (j.contains("theta_star") && !j.at("theta_star").is_null())
        c.theta_star = j.at("theta_star").get<std::vector<double>>();
    return c;
}

/// Finite prompt/response universe with a linear ground-truth reward
/// r*(x, y) = <theta*, phi(x, y)>. Rows of `features` are indexed
/// prompt-major: prompt * responses_per_prompt + response.
struct World {
    WorldConfig config;
    std::uint64_t seed = 0;
    FeatureMatrix features;
    Eigen::VectorXd theta_star;
    Eigen::VectorXd ref_logits;
    std::vector<int> lengths;

    std::size_t prompt_count() const { return config.prompt_count; }
    std::size_t pool_size() const { return config.responses_per_prompt; }
    std::size_t feature_dim() const { return config.feature_dim; }
    std::size_t entry_count() const { return prompt_count() * pool_size(); }

    std::size_t index(PromptId p, ResponseId y) const {
        if (p >= prompt_count() || y >= pool_size())
            throw std::out_of_range("world: unknown (prompt, response) id (" + std::to_string(p) +
                                    ", " + std::to_string(y) + ")");
        return p * pool_size() + y;
    }

    auto feature(PromptId p, ResponseId y) const { return features.row(static_cast<Eigen::Index>(index(p, y))); }
    double true_reward(PromptId p, ResponseId y) const { return feature(p, y).dot(theta_star); }
    double ref_logit(PromptId p, ResponseId y) const { return ref_logits[static_cast<Eigen::Index>(index(p, y))]; }
    int length(PromptId p, ResponseId y) const { return lengths[index(p, y)]; }

    /// Contiguous view over the reference logits of one prompt's pool.
    auto ref_slice(PromptId p) const {
        return ref_logits.segment(static_cast<Eigen::Index>(index(p, 0)), static_cast<Eigen::Index>(pool_size()));
    }

    std::string config_hash() const {
        return hex64(fnv1a64(to_json(config).dump() + "#" + std::to_string(seed)));
    }
};

inline void validate(const WorldConfig& c) {
    if (c.prompt_count == 0 || c.responses_per_prompt == 0 || c.feature_dim == 0)
        throw std::invalid_argument("world config: dimensions must be positive");
    if (!(c.ball_radius > 0.0) || !std::isfinite(c.ball_radius))
        throw std::invalid_argument("world config: ball_radius must be positive");
    if (c.min_length < 1 || c.max_length < c.min_length)
        throw std::invalid_argument("world config: need 1 <= min_length <= max_length");
    if (c.theta_star) {
        if (c.theta_star->size() != c.feature_dim)
            throw std::invalid_argument("world config: theta_star has wrong dimension");
        double sq = 0.0;
        for (double v : *c.theta_star) sq += v * v;
        if (std::sqrt(sq) > c.ball_radius * (1.0 + 1e-12))
            throw std::invalid_argument("world config: theta_star lies outside the ball");
    }
}

/// Deterministic in (config, seed): features are standard normal draws
/// shrunk into the unit ball, theta* is uniform in the radius-B ball,
/// reference logits are standard normal, lengths uniform in [min, max].
inline World build_world(const WorldConfig& config, std::uint64_t seed) {
    validate(config);
    World w;
    w.config = config;
    w.seed = seed;
    const auto rows = static_cast<Eigen::Index>(config.prompt_count * config.responses_per_prompt);
    const auto d = static_cast<Eigen::Index>(config.feature_dim);

    Rng rng = make_rng(seed, 0);
    std::normal_distribution<double> normal(0.0, 1.0);

    w.features.resize(rows, d);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) w.features(i, k) = normal(rng);
        const double norm = w.features.row(i).norm();
        if (norm > 1.0) w.features.row(i) /= norm;
    }

    if (config.theta_star) {
        w.theta_star = Eigen::Map<const Eigen::VectorXd>(config.theta_star->data(), d);
    } else {
        Eigen::VectorXd dir(d);
        double norm = 0.0;
        while (norm == 0.0) {
            for (Eigen::Index k = 0; k < d; ++k) dir[k] = normal(rng);
            norm = dir.norm();
        }
        const double radius = config.ball_radius * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
        w.theta_star = dir * (radius / norm);
    }

    w.ref_logits.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) w.ref_logits[i] = normal(rng);

    std::uniform_int_distribution<int> len(config.min_length, config.max_length);
    w.lengths.resize(static_cast<std::size_t>(rows));
    for (auto& l : w.lengths) l = len(rng);
    return w;
}

inline std::string world_to_json(const World& w) {
    std::ostringstream os;
    os << "{\"config\":" << to_json(w.config).dump() << ",\"seed\":" << w.seed << ",\"theta_star\":";
    io::write_array(os, std::span<const double>(w.theta_star.data(), static_cast<std::size_t>(w.theta_star.size())));
    os << ",\"features\":[";
    for (Eigen::Index i = 0; i < w.features.rows(); ++i) {
        if (i) os << ',';
        io::write_array(os, std::span<const double>(w.features.row(i).data(), static_cast<std::size_t>(w.features.cols())));
    }
    os << "],\"ref_logits\":";
    io::write_array(os, std::span<const double>(w.ref_logits.data(), static_cast<std::size_t>(w.ref_logits.size())));
    os << ",\"lengths\":";
    io::write_int_array(os, std::span<const int>(w.lengths));
    os << "}\n";
    return os.str();
}

inline World world_from_json(const io::Json& j) {
    World w;
    w.config = world_config_from_json(j.at("config"));
    validate(w.config);
    w.seed = j.at("seed").get<std::uint64_t>();
    const auto rows = w.entry_count();
    const auto d = w.feature_dim();

    const auto theta = j.at("theta_star").get<std::vector<double>>();
    if (theta.size() != d) throw std::invalid_argument("world json: theta_star dimension mismatch");
    w.theta_star = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(d));

    const auto& feats = j.at("features");
    if (feats.size() != rows) throw std::invalid_argument("world json: feature row count mismatch");
    w.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows; ++i) {
        const auto row = feats[i].get<std::vector<double>>();
        if (row.size() != d) throw std::invalid_argument("world json: feature width mismatch");
        for (std::size_t k = 0; k < d; ++k)
            w.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k];
    }

    const auto ref = j.at("ref_logits").get<std::vector<double>>();
    if (ref.size() != rows) throw std::invalid_argument("world json: ref_logits size mismatch");
    w.ref_logits = Eigen::Map<const Eigen::VectorXd>(ref.data(), static_cast<Eigen::Index>(rows));

    w.lengths = j.at("lengths").get<std::vector<int>>();
    if (w.lengths.size() != rows) throw std::invalid_argument("world json: lengths size mismatch");
    for (int l : w.lengths)
        if (l < 1) throw std::invalid_argument("world json: lengths must be positive");
    return w;
}

}  // namespace hps
