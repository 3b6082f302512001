#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hps/dataset.hpp"
#include "hps/io.hpp"
#include "hps/losses.hpp"
#include "hps/reward.hpp"

namespace hps {

/// Piecewise-constant gamma levels. linear_steps(start, end, k) holds level
/// i = start + (end - start) * i / (k - 1) for the i-th equal fraction of training.
struct GammaSchedule {
    enum class Kind { constant, linear_steps } kind = Kind::constant;
    double start = 1.0;
    double end = 1.0;
    std::size_t levels = 1;

    static GammaSchedule constant(double gamma) { return {Kind::constant, gamma, gamma, 1}; }
    static GammaSchedule linear_steps(double start, double end, std::size_t levels) {
        if (levels < 1) throw std::invalid_argument("gamma schedule: need at least one level");
        return {Kind::linear_steps, start, end, levels};
    }

    friend bool operator==(const GammaSchedule&, const GammaSchedule&) = default;
};

inline double gamma_schedule(std::size_t step, std::size_t total_steps, const GammaSchedule& cfg) {
    if (total_steps == 0 || step >= total_steps)
        throw std::out_of_range("gamma_schedule: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + ")");
    if (cfg.kind == GammaSchedule::Kind::constant || cfg.levels == 1) return cfg.start;
    const std::size_t level = std::min(cfg.levels - 1, step * cfg.levels / total_steps);
    return cfg.start + (cfg.end - cfg.start) * static_cast<double>(level) / static_cast<double>(cfg.levels - 1);
}

inline Eigen::VectorXd project_to_ball(const Eigen::VectorXd& theta, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("project_to_ball: radius must be positive");
    const double norm = theta.norm();
    if (norm <= radius) return theta;
    return theta * (radius / norm);
}

inline Eigen::VectorXd project_to_box(const Eigen::VectorXd& theta, double bound) {
    if (!(bound >= 0.0)) throw std::invalid_argument("project_to_box: bound must be non-negative");
    return theta.cwiseMax(-bound).cwiseMin(bound);
}

enum class OptimizerKind {
    sgd,   // mini-batch projected gradient step
    adam,  // mini-batch Adam, then projection
    pgd,   // full-batch projected gradient, spectral step + Armijo backtracking
};

inline std::string_view to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::pgd: return "pgd";
    }
    return "?";
}

inline OptimizerKind optimizer_kind_from_string(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "pgd") return OptimizerKind::pgd;
    throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
    LossKind loss = LossKind::pl;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 5e-3;
    std::size_t epochs = 100;      // pgd: iteration budget
    std::size_t batch_size = 0;    // 0 = full batch
    std::optional<double> ball_radius;
    std::optional<double> box_bound;
    GammaSchedule gamma = GammaSchedule::constant(1.0);
    std::uint64_t seed = 0;
    double convergence_grad_tol = 1e-6;  // 0 disables the check
    LossOptions loss_options;            // gamma here is overridden by the schedule

    friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
        return a.loss == b.loss && a.optimizer == b.optimizer && a.learning_rate == b.learning_rate &&
               a.epochs == b.epochs && a.batch_size == b.batch_size && a.ball_radius == b.ball_radius &&
               a.box_bound == b.box_bound && a.gamma == b.gamma && a.seed == b.seed &&
               a.convergence_grad_tol == b.convergence_grad_tol &&
               a.loss_options.weight_lambda == b.loss_options.weight_lambda &&
               a.loss_options.slic_delta == b.loss_options.slic_delta &&
               a.loss_options.slic_lambda == b.loss_options.slic_lambda &&
               a.loss_options.normalization == b.loss_options.normalization;
    }
};

inline io::OrderedJson to_json(const GammaSchedule& g) {
    io::OrderedJson j;
    if (g.kind == GammaSchedule::Kind::constant) {
        j["kind"] = "constant";
        j["gamma"] = g.start;
    } else {
        j["kind"] = "linear_steps";
        j["start"] = g.start;
        j["end"] = g.end;
        j["levels"] = g.levels;
    }
    return j;
}

inline GammaSchedule gamma_schedule_from_json(const io::Json& j) {
    if (j.is_number()) return GammaSchedule::constant(j.get<double>());
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "constant") return GammaSchedule::constant(j.at("gamma").get<double>());
    if (kind == "linear_steps")
        return GammaSchedule::linear_steps(j.at("start").get<double>(), j.at("end").get<double>(),
                                           j.at("levels").get<std::size_t>());
    throw std::invalid_argument("unknown gamma schedule kind '" + kind + "'");
}

inline io::OrderedJson to_json(const TrainConfig& c) {
    io::OrderedJson j;
    j["loss"] = to_string(c.loss);
    j["optimizer"] = to_string(c.optimizer);
    j["learning_rate"] = c.learning_rate;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["ball_radius"] = c.ball_radius ? io::OrderedJson(*c.ball_radius) : io::OrderedJson(nullptr);
    j["box_bound"] = c.box_bound ? io::OrderedJson(*c.box_bound) : io::OrderedJson(nullptr);
    j["gamma_schedule"] = to_json(c.gamma);
    j["seed"] = c.seed;
    j["convergence_grad_tol"] = c.convergence_grad_tol;
    j["weight_lambda"] = c.loss_options.weight_lambda;
    j["slic_delta"] = c.loss_options.slic_delta;
    j["slic_lambda"] = c.loss_options.slic_lambda;
    j["hps_normalization"] = c.loss_options.normalization == HpsNormalization::expectation ? "expectation" : "uniform_p";
    return j;
}

inline TrainConfig train_config_from_json(const io::Json& j) {
    TrainConfig c;
    if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("optimizer")) c.optimizer = optimizer_kind_from_string(j.at("optimizer").get<std::string>());
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("ball_radius") && !j.at("ball_radius").is_null()) c.ball_radius = j.at("ball_radius").get<double>();
    if (j.contains("box_bound") && !j.at("box_bound").is_null()) c.box_bound = j.at("box_bound").get<double>();
    if (j.contains("gamma_schedule")) c.gamma = gamma_schedule_from_json(j.at("gamma_schedule"));
    c.seed = j.value("seed", c.seed);
    c.convergence_grad_tol = j.value("convergence_grad_tol", c.convergence_grad_tol);
    c.loss_options.weight_lambda = j.value("weight_lambda", c.loss_options.weight_lambda);
    c.loss_options.slic_delta = j.value("slic_delta", c.loss_options.slic_delta);
    c.loss_options.slic_lambda = j.value("slic_lambda", c.loss_options.slic_lambda);
    if (j.contains("hps_normalization")) {
        const auto s = j.at("hps_normalization").get<std::string>();
        if (s == "expectation") c.loss_options.normalization = HpsNormalization::expectation;
        else if (s == "uniform_p") c.loss_options.normalization = HpsNormalization::uniform_p;
        else throw std::invalid_argument("unknown hps_normalization '" + s + "'");
    }
    return c;
}

inline std::string config_hash(const TrainConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

struct RunRecord {
    Eigen::VectorXd final_params;
    std::vector<double> loss_trace;
    std::vector<double> gamma_trace;
    std::vector<double> grad_norm_trace;
    std::size_t reward_eval_count = 0;      // evaluations inside optimizer steps
    std::size_t diagnostic_reward_evals = 0;  // convergence checks only
    std::size_t steps = 0;
    bool converged = false;
    double final_grad_norm = 0.0;
    double wall_time_s = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;
};

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

struct BatchEval {
    double value = 0.0;
    Eigen::VectorXd grad;
    std::size_t evals = 0;
};

inline BatchEval batch_objective(const PreferenceDataset& data, std::span<const std::size_t> batch,
                                 const RewardParameterization& param, const World& world, LossKind kind,
                                 const LossOptions& opt, Rng& rng) {
    BatchEval out;
    out.grad = Eigen::VectorXd::Zero(param.theta.size());
    const double w = 1.0 / static_cast<double>(batch.size());
    // fixed summation order keeps runs bit-reproducible
    try {
        for (std::size_t i : batch) {
            const LossValue lv = accumulate_loss(kind, data.samples[i], param, world, opt, rng, w, out.grad);
            out.value += w * lv.value;
            out.evals += lv.reward_evals;
        }
    } catch (const std::domain_error& e) {
        throw TrainingDiverged(std::string("training diverged: ") + e.what());
    }
    return out;
}

inline Eigen::VectorXd project(const Eigen::VectorXd& theta, const TrainConfig& cfg) {
    Eigen::VectorXd out = theta;
    if (cfg.box_bound) out = project_to_box(out, *cfg.box_bound);
    if (cfg.ball_radius) out = project_to_ball(out, *cfg.ball_radius);
    return out;
}

// Norm of the projected-gradient mapping; equals ||grad|| without constraints.
inline double stationarity(const Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const TrainConfig& cfg) {
    if (!cfg.box_bound && !cfg.ball_radius) return grad.norm();
    return (theta - project(theta - grad, cfg)).norm();
}

inline void check_finite(double value, const Eigen::VectorXd& grad, std::size_t step) {
    if (!std::isfinite(value) || !grad.allFinite())
        throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": loss = " + format_double(value));
}

}  // namespace detail

/// Minimizes the mean loss over the dataset. Deterministic given cfg.seed.
inline RunRecord train(const PreferenceDataset& data, const World& world, const RewardParameterization& init,
                       const TrainConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be non-negative");
    if (cfg.loss == LossKind::slic && cfg.loss_options.slic_delta < 0.0)
        throw std::invalid_argument("train: slic_delta must be non-negative");
    if (cfg.optimizer == OptimizerKind::pgd && cfg.loss == LossKind::hps_sampled)
        throw std::invalid_argument("train: pgd needs a deterministic objective; use sgd or adam for hps_sampled");
    validate(init, world);

    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.seed = cfg.seed;
    rec.config_hash = config_hash(cfg);

    Rng shuffle_rng = make_rng(cfg.seed, 1);
    Rng sample_rng = make_rng(cfg.seed, 2);
    Rng diagnostic_rng = make_rng(cfg.seed, 3);

    RewardParameterization param = init;
    const std::size_t m = data.size();
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), std::size_t{0});
    LossOptions opt = cfg.loss_options;
    const bool uses_gamma = is_hps_loss(cfg.loss);

    if (cfg.optimizer == OptimizerKind::pgd) {
        const std::size_t total = std::max<std::size_t>(cfg.epochs, 1);
        opt.gamma = uses_gamma ? gamma_schedule(0, total, cfg.gamma) : cfg.gamma.start;
        auto cur = detail::batch_objective(data, all, param, world, cfg.loss, opt, sample_rng);
        rec.reward_eval_count += cur.evals;
        detail::check_finite(cur.value, cur.grad, 0);
        double step_size = cfg.learning_rate;
        double stat = detail::stationarity(param.theta, cur.grad, cfg);
        rec.converged = cfg.convergence_grad_tol > 0.0 && stat <= cfg.convergence_grad_tol;

        for (std::size_t it = 0; it < cfg.epochs && !rec.converged; ++it) {
            const double g = uses_gamma ? gamma_schedule(it, total, cfg.gamma) : cfg.gamma.start;
            if (g != opt.gamma) {
                opt.gamma = g;
                cur = detail::batch_objective(data, all, param, world, cfg.loss, opt, sample_rng);
                rec.reward_eval_count += cur.evals;
            }
            RewardParameterization next = param;
            detail::BatchEval cand;
            if (step_size == 0.0) {
                cand = cur;
            } else {
                bool accepted = false;
                for (int halvings = 0; halvings < 60; ++halvings) {
                    next.theta = detail::project(param.theta - step_size * cur.grad, cfg);
                    cand = detail::batch_objective(data, all, next, world, cfg.loss, opt, sample_rng);
                    rec.reward_eval_count += cand.evals;
                    const Eigen::VectorXd s = next.theta - param.theta;
                    if (std::isfinite(cand.value) &&
                        cand.value <= cur.value + cur.grad.dot(s) + s.squaredNorm() / (2.0 * step_size) + 1e-15 * std::abs(cur.value)) {
                        accepted = true;
                        break;
                    }
                    step_size *= 0.5;
                }
                if (!accepted) {
                    // no descent at machine precision: we are at the optimum
                    next = param;
                    cand = cur;
                }
            }
            detail::check_finite(cand.value, cand.grad, it);

            const Eigen::VectorXd s = next.theta - param.theta;
            const Eigen::VectorXd y = cand.grad - cur.grad;
            const double sy = s.dot(y);
            if (step_size != 0.0)
                step_size = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : std::min(step_size * 2.0, 1e10);

            param = std::move(next);
            cur = std::move(cand);
            stat = detail::stationarity(param.theta, cur.grad, cfg);
            rec.loss_trace.push_back(cur.value);
            rec.gamma_trace.push_back(opt.gamma);
            rec.grad_norm_trace.push_back(stat);
            ++rec.steps;
            if (cfg.convergence_grad_tol > 0.0 && stat <= cfg.convergence_grad_tol) rec.converged = true;
            if (s.squaredNorm() == 0.0 && step_size != 0.0 && it > 0) break;  // stalled at the optimum
        }
        rec.final_grad_norm = stat;
    } else {
        const std::size_t bs = cfg.batch_size == 0 ? m : std::min(cfg.batch_size, m);
        const std::size_t per_epoch = (m + bs - 1) / bs;
        const std::size_t total = cfg.epochs * per_epoch;
        Eigen::VectorXd m1 = Eigen::VectorXd::Zero(param.theta.size());
        Eigen::VectorXd m2 = Eigen::VectorXd::Zero(param.theta.size());
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        std::vector<std::size_t> order = all;

        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
                opt.gamma = gamma_schedule(step, total, cfg.gamma);
                const std::span<const std::size_t> batch(order.data() + b * bs, std::min(bs, m - b * bs));
                const auto ev = detail::batch_objective(data, batch, param, world, cfg.loss, opt, sample_rng);
                rec.reward_eval_count += ev.evals;
                detail::check_finite(ev.value, ev.grad, step);
                if (cfg.learning_rate != 0.0) {
                    if (cfg.optimizer == OptimizerKind::sgd) {
                        param.theta -= cfg.learning_rate * ev.grad;
                    } else {
                        m1 = b1 * m1 + (1.0 - b1) * ev.grad;
                        m2 = b2 * m2 + (1.0 - b2) * ev.grad.cwiseProduct(ev.grad);
                        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
                        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
                        param.theta.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
                    }
                    if (cfg.box_bound || cfg.ball_radius) param.theta = detail::project(param.theta, cfg);
                    if (!param.theta.allFinite())
                        throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": non-finite parameters");
                }
                rec.loss_trace.push_back(ev.value);
                rec.gamma_trace.push_back(opt.gamma);
                rec.grad_norm_trace.push_back(ev.grad.norm());
                ++rec.steps;
            }
            if (cfg.convergence_grad_tol > 0.0) {
                const auto full = detail::batch_objective(data, all, param, world, cfg.loss, opt, diagnostic_rng);
                rec.diagnostic_reward_evals += full.evals;
                rec.final_grad_norm = detail::stationarity(param.theta, full.grad, cfg);
                if (rec.final_grad_norm <= cfg.convergence_grad_tol) {
                    rec.converged = true;
                    break;
                }
            }
        }
    }

    rec.final_params = std::move(param.theta);
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

inline RewardParameterization with_params(RewardParameterization param, const Eigen::VectorXd& theta) {
    param.theta = theta;
    return param;
}

inline std::string run_record_to_json(const RunRecord& r) {
    std::ostringstream os;
    os << "{\"seed\":" << r.seed << ",\"config_hash\":\"" << r.config_hash << "\",\"steps\":" << r.steps
       << ",\"converged\":" << (r.converged ? "true" : "false") << ",\"final_grad_norm\":" << format_double(r.final_grad_norm)
       << ",\"reward_eval_count\":" << r.reward_eval_count << ",\"diagnostic_reward_evals\":" << r.diagnostic_reward_evals
       << ",\"wall_time_s\":" << format_double(r.wall_time_s) << ",\"final_params\":";
    io::write_array(os, std::span<const double>(r.final_params.data(), static_cast<std::size_t>(r.final_params.size())));
    os << ",\"loss_trace\":";
    io::write_array(os, std::span<const double>(r.loss_trace));
    os << ",\"gamma_trace\":";
    io::write_array(os, std::span<const double>(r.gamma_trace));
    os << ",\"grad_norm_trace\":";
    io::write_array(os, std::span<const double>(r.grad_norm_trace));
    os << "}\n";
    return os.str();
}

/// step, loss, gamma, grad_norm
inline std::string loss_trace_tsv(const RunRecord& r) {
    std::ostringstream os;
    os << "step\tloss\tgamma\tgrad_norm\n";
    for (std::size_t i = 0; i < r.loss_trace.size(); ++i)
        os << i << '\t' << format_double(r.loss_trace[i]) << '\t' << format_double(r.gamma_trace[i]) << '\t'
           << format_double(r.grad_norm_trace[i]) << '\n';
    return os.str();
}

}  // namespace hps
