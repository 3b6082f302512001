#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hps/dataset.hpp"
#include "hps/io.hpp"
#include "hps/reward.hpp"

namespace hps {

inline constexpr double kRdpoLengthCoefficient = 0.01;

namespace detail {

inline void require_pair(const PreferenceSample& s, const char* who) {
    if (s.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least two responses");
}

inline double log_ratio(const RewardParameterization& param, const World& world, PromptId p, ResponseId y) {
    return log_policy(param, world, p, y) - log_reference(world, p, y);
}

}  // namespace detail

/// Implicit-reward margin of the top pair: log-ratio of y_tau(1) minus log-ratio of y_tau(2).
inline double rm_dpo(const RewardParameterization& policy, const World& world, const PreferenceSample& s) {
    detail::require_pair(s, "rm_dpo");
    if (!policy.is_policy()) throw std::invalid_argument("rm_dpo: needs a policy parameterization");
    return detail::log_ratio(policy, world, s.prompt_id, s.responses[0]) -
           detail::log_ratio(policy, world, s.prompt_id, s.responses[1]);
}

inline double rm_rdpo_from(double rm_dpo_value, int preferred_length, int dispreferred_length) {
    return rm_dpo_value - kRdpoLengthCoefficient * static_cast<double>(preferred_length - dispreferred_length);
}

/// rm_dpo with the length penalty on the same pair.
inline double rm_rdpo(const RewardParameterization& policy, const World& world, const PreferenceSample& s) {
    detail::require_pair(s, "rm_rdpo");
    if (s.lengths.size() != s.size()) throw std::invalid_argument("rm_rdpo: sample has no lengths");
    return rm_rdpo_from(rm_dpo(policy, world, s), s.lengths[0], s.lengths[1]);
}

inline double hps_margin_from(std::span<const double> rewards) {
    if (rewards.size() < 2) throw std::invalid_argument("hps_margin: need at least two responses");
    return rewards[0] - *std::max_element(rewards.begin() + 1, rewards.end());
}

/// r(y_tau(1)) minus the largest reward among the dispreferred responses.
inline double hps_margin(const RewardParameterization& param, const World& world, const PreferenceSample& s) {
    detail::require_pair(s, "hps_margin");
    std::vector<double> r(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) r[j] = reward(param, world, s.prompt_id, s.responses[j]);
    return hps_margin_from(r);
}

/// Strict argmax: ties with the preferred response count as misses.
inline bool top_is_preferred(std::span<const double> rewards) { return hps_margin_from(rewards) > 0.0; }

inline double argmax_accuracy(const RewardParameterization& param, const World& world, const PreferenceDataset& data) {
    if (data.empty()) throw std::invalid_argument("argmax_accuracy: empty dataset");
    std::size_t hits = 0;
    for (const auto& s : data.samples) hits += hps_margin(param, world, s) > 0.0 ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

struct SigmaD {
    Eigen::MatrixXd matrix;
    std::size_t m = 0;
    std::size_t n = 0;
    std::string world_ref;
};

/// 2 / (m n (n-1)) * sum over samples and ranked pairs j < k of h h^T,
/// h = phi(x, y_tau(j)) - phi(x, y_tau(k)). Linear rewards only.
inline SigmaD sigma_d(const PreferenceDataset& data, const World& world,
                      RewardKind kind = RewardKind::linear) {
    if (kind != RewardKind::linear)
        throw std::invalid_argument("sigma_d: defined only for the linear parameterization");
    if (data.empty()) throw std::invalid_argument("sigma_d: empty dataset");
    const auto d = static_cast<Eigen::Index>(world.feature_dim());
    SigmaD out;
    out.m = data.size();
    out.n = data.samples.front().size();
    out.world_ref = world.config_hash();
    out.matrix = Eigen::MatrixXd::Zero(d, d);
    for (const auto& s : data.samples) {
        if (s.size() != out.n) throw std::invalid_argument("sigma_d: ranking lengths differ across samples");
        if (out.n < 2) throw std::invalid_argument("sigma_d: need at least two responses");
        for (std::size_t j = 0; j < out.n; ++j)
            for (std::size_t k = j + 1; k < out.n; ++k) {
                const Eigen::VectorXd h =
                    (world.feature(s.prompt_id, s.responses[j]) - world.feature(s.prompt_id, s.responses[k])).transpose();
                out.matrix.selfadjointView<Eigen::Lower>().rankUpdate(h);
            }
    }
    out.matrix = out.matrix.selfadjointView<Eigen::Lower>();
    const double n = static_cast<double>(out.n);
    out.matrix *= 2.0 / (static_cast<double>(out.m) * n * (n - 1.0));
    return out;
}

/// sqrt(delta^T Sigma delta) with tiny negative eigenvalues clamped to zero.
inline double sigma_norm(const Eigen::VectorXd& delta, const Eigen::MatrixXd& sigma) {
    if (sigma.rows() != delta.size() || sigma.cols() != delta.size())
        throw std::invalid_argument("estimator_error: dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    const Eigen::VectorXd proj = eig.eigenvectors().transpose() * delta;
    const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
    return std::sqrt((lambda.array() * proj.array().square()).sum());
}

inline double estimator_error(const Eigen::VectorXd& theta_hat, const Eigen::VectorXd& theta_star, const SigmaD& sigma) {
    if (theta_hat.size() != theta_star.size()) throw std::invalid_argument("estimator_error: dimension mismatch");
    return sigma_norm(theta_hat - theta_star, sigma.matrix);
}

struct SampleMetrics {
    PromptId prompt_id = 0;
    double rm_dpo = 0.0;
    double rm_rdpo = 0.0;
    double hps_margin = 0.0;
    bool top1 = false;
};

struct MetricReport {
    double rm_dpo_mean = 0.0;
    double rm_rdpo_mean = 0.0;
    double hps_margin_mean = 0.0;
    double argmax_accuracy = 0.0;
    std::optional<double> estimator_error;
    std::vector<SampleMetrics> per_sample;
};

/// RM columns are only meaningful for policy kinds; for linear rewards they stay 0.
inline MetricReport evaluate_metrics(const RewardParameterization& param, const World& world, const PreferenceDataset& data,
                                     std::optional<double> estimator_error = std::nullopt) {
    if (data.empty()) throw std::invalid_argument("evaluate_metrics: empty dataset");
    MetricReport rep;
    rep.estimator_error = estimator_error;
    rep.per_sample.reserve(data.size());
    for (const auto& s : data.samples) {
        SampleMetrics row;
        row.prompt_id = s.prompt_id;
        if (param.is_policy()) {
            row.rm_dpo = rm_dpo(param, world, s);
            row.rm_rdpo = rm_rdpo(param, world, s);
        }
        row.hps_margin = hps_margin(param, world, s);
        row.top1 = row.hps_margin > 0.0;
        rep.rm_dpo_mean += row.rm_dpo;
        rep.rm_rdpo_mean += row.rm_rdpo;
        rep.hps_margin_mean += row.hps_margin;
        rep.argmax_accuracy += row.top1 ? 1.0 : 0.0;
        rep.per_sample.push_back(row);
    }
    const double m = static_cast<double>(data.size());
    rep.rm_dpo_mean /= m;
    rep.rm_rdpo_mean /= m;
    rep.hps_margin_mean /= m;
    rep.argmax_accuracy /= m;
    return rep;
}

inline std::string metric_report_to_json(const MetricReport& r) {
    std::ostringstream os;
    os << "{\"rm_dpo_mean\":" << format_double(r.rm_dpo_mean) << ",\"rm_rdpo_mean\":" << format_double(r.rm_rdpo_mean)
       << ",\"hps_margin_mean\":" << format_double(r.hps_margin_mean)
       << ",\"argmax_accuracy\":" << format_double(r.argmax_accuracy) << ",\"estimator_error\":"
       << (r.estimator_error ? format_double(*r.estimator_error) : std::string("null")) << ",\"samples\":" << r.per_sample.size()
       << "}\n";
    return os.str();
}

/// Two aligned columns, metric name and value.
inline std::string metric_report_to_tsv(const MetricReport& r) {
    std::vector<std::pair<std::string, std::string>> rows = {
        {"rm_dpo_mean", format_double(r.rm_dpo_mean)},
        {"rm_rdpo_mean", format_double(r.rm_rdpo_mean)},
        {"hps_margin_mean", format_double(r.hps_margin_mean)},
        {"argmax_accuracy", format_double(r.argmax_accuracy)},
        {"estimator_error", r.estimator_error ? format_double(*r.estimator_error) : "-"},
        {"samples", std::to_string(r.per_sample.size())},
    };
    std::size_t width = 6;
    for (const auto& [k, v] : rows) width = std::max(width, k.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "metric" << "\tvalue\n";
    for (const auto& [k, v] : rows) os << std::left << std::setw(static_cast<int>(width)) << k << '\t' << v << '\n';
    return os.str();
}

inline std::string per_sample_tsv(const MetricReport& r) {
    std::ostringstream os;
    os << "index\tprompt_id\trm_dpo\trm_rdpo\thps_margin\ttop1\n";
    for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
        const auto& s = r.per_sample[i];
        os << i << '\t' << s.prompt_id << '\t' << format_double(s.rm_dpo) << '\t' << format_double(s.rm_rdpo) << '\t'
           << format_double(s.hps_margin) << '\t' << (s.top1 ? 1 : 0) << '\n';
    }
    return os.str();
}

}  // namespace hps
