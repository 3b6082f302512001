#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hps/dataset.hpp"
#include "hps/io.hpp"
#include "hps/losses.hpp"
#include "hps/metrics.hpp"
#include "hps/reward.hpp"
#include "hps/trainer.hpp"
#include "hps/world.hpp"

namespace hps {

enum class ExperimentKind { complexity, gamma_convergence, margin_verify, efficiency, finetune_compare };

inline std::string_view to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::complexity: return "complexity";
        case ExperimentKind::gamma_convergence: return "gamma_convergence";
        case ExperimentKind::margin_verify: return "margin_verify";
        case ExperimentKind::efficiency: return "efficiency";
        case ExperimentKind::finetune_compare: return "finetune_compare";
    }
    return "?";
}

/// Accepts the full names and the CLI short forms (gamma, margin, compare).
inline ExperimentKind experiment_kind_from_string(std::string_view s) {
    if (s == "complexity") return ExperimentKind::complexity;
    if (s == "gamma_convergence" || s == "gamma") return ExperimentKind::gamma_convergence;
    if (s == "margin_verify" || s == "margin") return ExperimentKind::margin_verify;
    if (s == "efficiency") return ExperimentKind::efficiency;
    if (s == "finetune_compare" || s == "compare") return ExperimentKind::finetune_compare;
    throw std::invalid_argument("unknown experiment '" + std::string(s) + "'");
}

/// One sweep. Grids that an experiment does not use are ignored by it:
///   complexity        m_grid x n_grid, losses fit by pgd, gamma_grid[0] for HPS
///   gamma_convergence n_grid = candidate list sizes, gamma_grid, `instances` per seed
///   margin_verify     n_grid = pool sizes K, box_bounds
///   efficiency        n_grid, m_grid[0] samples, `steps` optimizer steps
///   finetune_compare  m_grid[0] train samples, n_grid[0], losses
struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::complexity;
    WorldConfig world;
    std::vector<std::size_t> m_grid;
    std::vector<std::size_t> n_grid;
    std::vector<double> gamma_grid;
    std::vector<std::uint64_t> seeds;
    std::vector<LossKind> losses;
    std::string output_dir = "out";
    std::size_t threads = 1;

    std::size_t steps = 1000;
    double learning_rate = 1.0;
    double tolerance = 1e-10;
    bool project_to_world_ball = true;

    std::size_t instances = 1000;
    double min_gap = 0.1;

    std::vector<double> box_bounds;
    std::size_t grid_budget = 200000;

    std::size_t eval_samples = 2000;
    double beta = 0.1;
    std::optional<GammaSchedule> gamma_schedule;
    std::size_t batch_size = 0;
    std::size_t timing_repeats = 3;

    friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

inline io::OrderedJson to_json(const ExperimentConfig& c, bool include_runtime = true) {
    io::OrderedJson j;
    j["experiment"] = to_string(c.experiment);
    j["world"] = to_json(c.world);
    j["m_grid"] = c.m_grid;
    j["n_grid"] = c.n_grid;
    j["gamma_grid"] = c.gamma_grid;
    j["seeds"] = c.seeds;
    std::vector<std::string> losses;
    for (LossKind k : c.losses) losses.emplace_back(to_string(k));
    j["losses"] = losses;
    j["steps"] = c.steps;
    j["learning_rate"] = c.learning_rate;
    j["tolerance"] = c.tolerance;
    j["project_to_world_ball"] = c.project_to_world_ball;
    j["instances"] = c.instances;
    j["min_gap"] = c.min_gap;
    j["box_bounds"] = c.box_bounds;
    j["grid_budget"] = c.grid_budget;
    j["eval_samples"] = c.eval_samples;
    j["beta"] = c.beta;
    j["gamma_schedule"] = c.gamma_schedule ? to_json(*c.gamma_schedule) : io::OrderedJson(nullptr);
    j["batch_size"] = c.batch_size;
    j["timing_repeats"] = c.timing_repeats;
    if (include_runtime) {
        j["output_dir"] = c.output_dir;
        j["threads"] = c.threads;
    }
    return j;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return to_json(a).dump() == to_json(b).dump();
}

inline void validate(const ExperimentConfig& c) {
    if (c.seeds.empty()) throw std::invalid_argument("experiment config: seeds must be nonempty");
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
        throw std::invalid_argument("experiment config: seeds must be distinct");
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("experiment config: ") + what);
    };
    switch (c.experiment) {
        case ExperimentKind::complexity:
            need(!c.m_grid.empty() && !c.n_grid.empty(), "complexity needs m_grid and n_grid");
            need(!c.losses.empty(), "complexity needs losses");
            for (LossKind k : c.losses) need(k != LossKind::hps_sampled, "complexity fits deterministic losses only");
            break;
        case ExperimentKind::gamma_convergence:
            need(!c.gamma_grid.empty() && !c.n_grid.empty(), "gamma_convergence needs gamma_grid and n_grid");
            for (std::size_t n : c.n_grid) need(n >= 3, "gamma_convergence needs n >= 3");
            break;
        case ExperimentKind::margin_verify:
            need(!c.n_grid.empty() && !c.box_bounds.empty(), "margin_verify needs n_grid (pool sizes) and box_bounds");
            for (std::size_t k : c.n_grid) need(k >= 2, "margin_verify needs K >= 2");
            for (double b : c.box_bounds) need(b >= 0.0, "margin_verify needs non-negative box bounds");
            break;
        case ExperimentKind::efficiency:
            need(!c.n_grid.empty() && !c.m_grid.empty(), "efficiency needs n_grid and m_grid");
            break;
        case ExperimentKind::finetune_compare:
            need(!c.m_grid.empty() && !c.n_grid.empty(), "finetune_compare needs m_grid and n_grid");
            need(!c.losses.empty(), "finetune_compare needs losses");
            break;
    }
    validate(c.world);
}

inline ExperimentConfig experiment_config_from_json(const io::Json& j) {
    ExperimentConfig c;
    c.experiment = experiment_kind_from_string(j.at("experiment").get<std::string>());
    if (j.contains("world")) c.world = world_config_from_json(j.at("world"));
    c.m_grid = j.value("m_grid", c.m_grid);
    c.n_grid = j.value("n_grid", c.n_grid);
    c.gamma_grid = j.value("gamma_grid", c.gamma_grid);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("losses"))
        for (const auto& s : j.at("losses")) c.losses.push_back(loss_kind_from_string(s.get<std::string>()));
    c.output_dir = j.value("output_dir", c.output_dir);
    c.threads = j.value("threads", c.threads);
    c.steps = j.value("steps", c.steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.project_to_world_ball = j.value("project_to_world_ball", c.project_to_world_ball);
    c.instances = j.value("instances", c.instances);
    c.min_gap = j.value("min_gap", c.min_gap);
    c.box_bounds = j.value("box_bounds", c.box_bounds);
    c.grid_budget = j.value("grid_budget", c.grid_budget);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.beta = j.value("beta", c.beta);
    if (j.contains("gamma_schedule") && !j.at("gamma_schedule").is_null())
        c.gamma_schedule = gamma_schedule_from_json(j.at("gamma_schedule"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.timing_repeats = j.value("timing_repeats", c.timing_repeats);
    return c;
}

/// Hash of everything that shapes a row. Seeds are excluded (each row carries
/// its own), as are output_dir and threads, so a single-seed rerun appends
/// rows under the same hash.
inline std::string config_hash(const ExperimentConfig& c) {
    auto j = to_json(c, false);
    j.erase("seeds");
    return hex64(fnv1a64(j.dump()));
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
    std::vector<std::uint64_t> s(count);
    std::iota(s.begin(), s.end(), first);
    return s;
}

/// Defaults for each experiment at desk scale.
inline ExperimentConfig default_experiment_config(ExperimentKind kind) {
    ExperimentConfig c;
    c.experiment = kind;
    switch (kind) {
        case ExperimentKind::complexity:
            c.world.feature_dim = 8;
            c.world.prompt_count = 50;
            c.world.responses_per_prompt = 100;
            c.world.ball_radius = 3.0;
            c.m_grid = {250, 1000, 4000};
            c.n_grid = {8};
            c.gamma_grid = {1.0};
            c.seeds = seed_range(0, 20);
            c.losses = {LossKind::pl, LossKind::hps_exact};
            c.steps = 2000;
            c.learning_rate = 1.0;
            c.tolerance = 1e-10;
            break;
        case ExperimentKind::gamma_convergence:
            c.n_grid = {3, 4, 5, 6, 7, 8, 9, 10};
            c.gamma_grid = {0, 1, 2, 5, 10, 20, 50};
            c.seeds = {0};
            c.instances = 1000;
            c.min_gap = 0.1;
            break;
        case ExperimentKind::margin_verify:
            c.n_grid = {2, 5, 10};
            c.box_bounds = {1.0, 5.0};
            c.seeds = seed_range(0, 3);
            c.steps = 5000;
            c.learning_rate = 0.01;  // step as a fraction of the box bound
            break;
        case ExperimentKind::efficiency:
            c.world.feature_dim = 4;
            c.world.prompt_count = 8;
            c.world.responses_per_prompt = 128;
            c.m_grid = {64};
            c.n_grid = {4, 16, 64};
            c.seeds = seed_range(0, 3);
            c.losses = {LossKind::pl, LossKind::hps_sampled};
            c.steps = 20;
            c.learning_rate = 1e-3;
            c.timing_repeats = 3;
            break;
        case ExperimentKind::finetune_compare:
            c.world.feature_dim = 8;
            c.world.prompt_count = 20;
            c.world.responses_per_prompt = 8;
            c.world.ball_radius = 10.0;
            c.m_grid = {2000};
            c.n_grid = {4};
            c.seeds = seed_range(0, 20);
            c.losses = {LossKind::pl, LossKind::bt, LossKind::hps_exact, LossKind::hps_sampled};
            c.steps = 1000;
            c.learning_rate = 0.05;
            c.beta = 0.1;
            c.eval_samples = 2000;
            c.gamma_schedule = GammaSchedule::linear_steps(-5.0, 5.0, 5);
            break;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Results

struct SweepRow {
    std::vector<std::string> cell;  // values for SweepResult::cell_columns
    std::uint64_t seed = 0;
    std::vector<double> metrics;    // values for SweepResult::metric_columns
    double runtime_s = 0.0;
    std::size_t reward_eval_count = 0;
};

struct SweepResult {
    ExperimentKind experiment = ExperimentKind::complexity;
    std::string config_hash;
    std::vector<std::string> cell_columns;
    std::vector<std::string> metric_columns;
    std::vector<SweepRow> rows;
    io::OrderedJson summary;
    std::vector<std::string> warnings;

    std::size_t metric_index(std::string_view name) const {
        const auto it = std::find(metric_columns.begin(), metric_columns.end(), name);
        if (it == metric_columns.end()) throw std::out_of_range("no metric column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - metric_columns.begin());
    }
    std::size_t cell_index(std::string_view name) const {
        const auto it = std::find(cell_columns.begin(), cell_columns.end(), name);
        if (it == cell_columns.end()) throw std::out_of_range("no cell column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - cell_columns.begin());
    }
};

// ---------------------------------------------------------------------------
// Statistics

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation
    std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> xs) {
    MeanStd out;
    out.count = xs.size();
    if (xs.empty()) return out;
    out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return out;
}

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("log_log_slope: need two or more points");
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw std::invalid_argument("log_log_slope: values must be positive");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    if (sxx == 0.0) throw std::invalid_argument("log_log_slope: x values must differ");
    return sxy / sxx;
}

struct SignTest {
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t ties = 0;
    double p_value = 1.0;  // one-sided, P(X >= wins) under Binomial(wins + losses, 1/2)
};

inline SignTest sign_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("sign_test: paired samples differ in length");
    SignTest t;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) ++t.wins;
        else if (a[i] < b[i]) ++t.losses;
        else ++t.ties;
    }
    const std::size_t n = t.wins + t.losses;
    double p = 0.0;
    for (std::size_t k = t.wins; k <= n; ++k)
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - static_cast<double>(n) * std::log(2.0));
    t.p_value = n == 0 ? 1.0 : std::min(1.0, p);
    return t;
}

// ---------------------------------------------------------------------------
// Worker pool: job i writes only slot i, so output order never depends on scheduling.

template <class Job>
auto run_jobs(std::size_t count, std::size_t threads, Job&& job) -> std::vector<decltype(job(std::size_t{}))> {
    using Out = decltype(job(std::size_t{}));
    std::vector<Out> out(count);
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) out[i] = job(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        out[i] = job(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

namespace detail {

inline std::string fmt_cell(double x) { return format_double(x); }
inline std::string fmt_cell(std::size_t x) { return std::to_string(x); }

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Groups rows by their cell values, keeping first-seen order.
inline std::vector<std::pair<std::vector<std::string>, std::vector<const SweepRow*>>> group_by_cell(
    const std::vector<SweepRow>& rows) {
    std::vector<std::pair<std::vector<std::string>, std::vector<const SweepRow*>>> groups;
    std::map<std::vector<std::string>, std::size_t> index;
    for (const auto& r : rows) {
        auto [it, fresh] = index.try_emplace(r.cell, groups.size());
        if (fresh) groups.push_back({r.cell, {}});
        groups[it->second].second.push_back(&r);
    }
    return groups;
}

// Per-cell mean/std of every metric.
inline io::OrderedJson cell_summaries(const SweepResult& res, const std::function<bool(const SweepRow&)>& keep = {}) {
    io::OrderedJson cells = io::OrderedJson::array();
    for (const auto& [cell, rows] : group_by_cell(res.rows)) {
        io::OrderedJson c;
        for (std::size_t k = 0; k < cell.size(); ++k) c[res.cell_columns[k]] = cell[k];
        std::size_t kept = 0;
        for (std::size_t m = 0; m < res.metric_columns.size(); ++m) {
            std::vector<double> xs;
            for (const SweepRow* r : rows)
                if ((!keep || keep(*r)) && std::isfinite(r->metrics[m])) xs.push_back(r->metrics[m]);
            const auto ms = mean_std(xs);
            kept = std::max(kept, ms.count);
            c[res.metric_columns[m] + "_mean"] = ms.mean;
            c[res.metric_columns[m] + "_std"] = ms.std;
        }
        c["rows"] = rows.size();
        c["rows_used"] = kept;
        cells.push_back(std::move(c));
    }
    return cells;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Summaries: pure functions of (config, rows) so they can be recomputed from rows.tsv.

inline io::OrderedJson summarize(const ExperimentConfig& cfg, const SweepResult& res);

// ---------------------------------------------------------------------------
// complexity

inline SweepResult run_complexity_sweep(const ExperimentConfig& cfg) {
    validate(cfg);
    SweepResult res;
    res.experiment = cfg.experiment;
    res.config_hash = config_hash(cfg);
    res.cell_columns = {"m", "n", "loss"};
    res.metric_columns = {"error", "final_loss", "grad_norm", "converged", "steps"};
    const double gamma = cfg.gamma_grid.empty() ? 1.0 : cfg.gamma_grid.front();

    struct Job {
        std::size_t m, n;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t m : cfg.m_grid)
        for (std::size_t n : cfg.n_grid)
            for (std::uint64_t seed : cfg.seeds) jobs.push_back({m, n, seed});

    auto rows = run_jobs(jobs.size(), cfg.threads, [&](std::size_t i) {
        const Job& job = jobs[i];
        const World world = build_world(cfg.world, job.seed);
        Rng rng = make_rng(job.seed, 1000003 * job.m + job.n);
        auto data = generate_dataset(world, job.m, job.n, rng);
        data = annotate_rewards(std::move(data), world, AnnotationMode::ground_truth(), rng);
        const SigmaD sigma = sigma_d(data, world);

        std::vector<SweepRow> out;
        for (LossKind loss : cfg.losses) {
            TrainConfig tc;
            tc.loss = loss;
            tc.optimizer = OptimizerKind::pgd;
            tc.learning_rate = cfg.learning_rate;
            tc.epochs = cfg.steps;
            tc.convergence_grad_tol = cfg.tolerance;
            tc.gamma = GammaSchedule::constant(gamma);
            tc.seed = job.seed;
            if (cfg.project_to_world_ball) tc.ball_radius = cfg.world.ball_radius;
            const auto rec = train(data, world, make_linear_reward(world), tc);

            SweepRow row;
            row.cell = {detail::fmt_cell(job.m), detail::fmt_cell(job.n), std::string(to_string(loss))};
            row.seed = job.seed;
            row.metrics = {estimator_error(rec.final_params, world.theta_star, sigma),
                           rec.loss_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : rec.loss_trace.back(),
                           rec.final_grad_norm, rec.converged ? 1.0 : 0.0, static_cast<double>(rec.steps)};
            row.runtime_s = rec.wall_time_s;
            row.reward_eval_count = rec.reward_eval_count;
            out.push_back(std::move(row));
        }
        return out;
    });
    for (auto& batch : rows)
        for (auto& r : batch) {
            if (r.metrics[3] == 0.0)
                res.warnings.push_back("complexity: no convergence for m=" + r.cell[0] + " n=" + r.cell[1] + " loss=" + r.cell[2] +
                                       " seed=" + std::to_string(r.seed) + "; row excluded from summary");
            res.rows.push_back(std::move(r));
        }
    res.summary = summarize(cfg, res);
    return res;
}

// ---------------------------------------------------------------------------
// gamma convergence

/// Loss under a point mass on the hardest dispreferred response.
inline double hardest_negative_loss(std::span<const double> rewards) {
    const double hardest = *std::max_element(rewards.begin() + 1, rewards.end());
    return softplus(hardest - rewards[0] + std::log(static_cast<double>(rewards.size() - 1)));
}

/// Single prompt with d = 1 and phi = reward, so a unit linear parameter
/// reproduces the given rewards exactly.
inline World scalar_reward_world(std::span<const double> rewards) {
    World w;
    w.config.prompt_count = 1;
    w.config.responses_per_prompt = rewards.size();
    w.config.feature_dim = 1;
    w.features.resize(static_cast<Eigen::Index>(rewards.size()), 1);
    for (std::size_t j = 0; j < rewards.size(); ++j) w.features(static_cast<Eigen::Index>(j), 0) = rewards[j];
    w.theta_star = Eigen::VectorXd::Ones(1);
    w.ref_logits = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rewards.size()));
    w.lengths.assign(rewards.size(), 1);
    return w;
}

inline SweepResult run_gamma_convergence(const ExperimentConfig& cfg) {
    validate(cfg);
    SweepResult res;
    res.experiment = cfg.experiment;
    res.config_hash = config_hash(cfg);
    res.cell_columns = {"instance", "n", "gamma"};
    res.metric_columns = {"loss", "hardest_loss", "gap", "top_two_gap", "degenerate"};

    auto per_seed = run_jobs(cfg.seeds.size(), cfg.threads, [&](std::size_t si) {
        const std::uint64_t seed = cfg.seeds[si];
        Rng rng = make_rng(seed, 7);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_int_distribution<std::size_t> pick_n(0, cfg.n_grid.size() - 1);
        std::vector<SweepRow> out;
        std::size_t valid = 0;
        for (std::size_t instance = 0; valid < cfg.instances; ++instance) {
            const std::size_t n = cfg.n_grid[pick_n(rng)];
            std::vector<double> r(n);
            for (auto& v : r) v = normal(rng);
            std::vector<double> neg(r.begin() + 1, r.end());
            std::partial_sort(neg.begin(), neg.begin() + 2, neg.end(), std::greater<>());
            const double top_two = neg[0] - neg[1];
            const auto t0 = std::chrono::steady_clock::now();
            if (top_two < cfg.min_gap) {
                SweepRow row;
                row.cell = {std::to_string(instance), std::to_string(n), "-"};
                row.seed = seed;
                const double nan = std::numeric_limits<double>::quiet_NaN();
                row.metrics = {nan, nan, nan, top_two, 1.0};
                out.push_back(std::move(row));
                continue;
            }
            ++valid;
            // estimated rewards equal the model rewards
            const World w = scalar_reward_world(r);
            PreferenceSample s;
            for (std::size_t j = 0; j < n; ++j) {
                s.responses.push_back(j);
                s.lengths.push_back(1);
            }
            s.est_rewards = r;
            RewardParameterization unit;
            unit.theta = Eigen::VectorXd::Ones(1);
            const double target = hardest_negative_loss(r);
            for (double gamma : cfg.gamma_grid) {
                const auto l = hps_exact_loss(s, unit, w, gamma);
                SweepRow row;
                row.cell = {std::to_string(instance), std::to_string(n), detail::fmt_cell(gamma)};
                row.seed = seed;
                row.metrics = {l.value, target, std::abs(l.value - target), top_two, 0.0};
                row.reward_eval_count = l.reward_evals;
                row.runtime_s = detail::seconds_since(t0);
                out.push_back(std::move(row));
            }
        }
        return out;
    });
    for (auto& batch : per_seed)
        for (auto& r : batch) res.rows.push_back(std::move(r));
    res.summary = summarize(cfg, res);
    return res;
}

// ---------------------------------------------------------------------------
// margin verification

struct MarginRun {
    double margin = 0.0;
    bool preferred_on_top = false;
    std::size_t steps = 0;
};

/// Tabular rewards over one prompt's pool (dpo_implicit, beta = 1, uniform
/// reference), so reward differences are logit differences. Each step the
/// adversary puts all mass on the current highest-reward dispreferred
/// response and the learner takes a projected subgradient step on
/// r(hardest) - r(preferred).
inline MarginRun minimax_margin(std::size_t pool, double bound, std::size_t steps, double step_fraction, Rng& rng) {
    WorldConfig wc;
    wc.prompt_count = 1;
    wc.responses_per_prompt = pool;
    wc.feature_dim = 1;
    World w = build_world(wc, 0);
    w.ref_logits.setZero();
    auto param = make_policy_reward(RewardKind::dpo_implicit, w, 1.0);
    std::uniform_real_distribution<double> init(-bound, bound);
    for (Eigen::Index i = 0; i < param.theta.size(); ++i) param.theta[i] = bound > 0.0 ? init(rng) : 0.0;

    PreferenceSample s;
    for (std::size_t j = 0; j < pool; ++j) {
        s.responses.push_back(j);
        s.lengths.push_back(1);
    }
    s.est_rewards.assign(pool, 0.0);
    const double step = step_fraction * std::max(bound, 1e-12);

    MarginRun out;
    Eigen::VectorXd grad(param.theta.size());
    for (; out.steps < steps; ++out.steps) {
        std::vector<double> r(pool);
        for (std::size_t j = 0; j < pool; ++j) r[j] = reward(param, w, 0, j);
        const auto hardest = static_cast<std::size_t>(std::max_element(r.begin() + 1, r.end()) - r.begin());
        grad.setZero();
        accumulate_reward_gradient(param, w, 0, hardest, 1.0, grad);
        accumulate_reward_gradient(param, w, 0, 0, -1.0, grad);
        const Eigen::VectorXd next = project_to_box(param.theta - step * grad, bound);
        if (next == param.theta) break;  // fixed point of the projected step
        param.theta = next;
    }
    out.margin = hps_margin(param, w, s);
    out.preferred_on_top = out.margin > 0.0;
    return out;
}

/// Best margin over an evenly spaced grid on [-B, B]^K (endpoints included),
/// g points per axis with g^K within the budget. Independent of the learner.
inline double grid_search_margin(std::size_t pool, double bound, std::size_t budget) {
    std::size_t g = 2;
    while (std::pow(static_cast<double>(g + 1), static_cast<double>(pool)) <= static_cast<double>(budget)) ++g;
    std::vector<double> axis(g);
    for (std::size_t i = 0; i < g; ++i) axis[i] = -bound + 2.0 * bound * static_cast<double>(i) / static_cast<double>(g - 1);
    std::vector<std::size_t> idx(pool, 0);
    double best = -std::numeric_limits<double>::infinity();
    while (true) {
        double hardest = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 1; j < pool; ++j) hardest = std::max(hardest, axis[idx[j]]);
        best = std::max(best, axis[idx[0]] - hardest);
        std::size_t k = 0;
        while (k < pool && ++idx[k] == g) idx[k++] = 0;
        if (k == pool) break;
    }
    return best;
}

inline SweepResult run_margin_verification(const ExperimentConfig& cfg) {
    validate(cfg);
    SweepResult res;
    res.experiment = cfg.experiment;
    res.config_hash = config_hash(cfg);
    res.cell_columns = {"K", "B"};
    res.metric_columns = {"margin", "vertex_margin", "grid_margin", "preferred_on_top", "steps"};

    struct Job {
        std::size_t pool;
        double bound;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t k : cfg.n_grid)
        for (double b : cfg.box_bounds)
            for (std::uint64_t seed : cfg.seeds) jobs.push_back({k, b, seed});

    auto rows = run_jobs(jobs.size(), cfg.threads, [&](std::size_t i) {
        const Job& job = jobs[i];
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng = make_rng(job.seed, job.pool);
        const auto run = minimax_margin(job.pool, job.bound, cfg.steps, cfg.learning_rate, rng);
        SweepRow row;
        row.cell = {std::to_string(job.pool), detail::fmt_cell(job.bound)};
        row.seed = job.seed;
        row.metrics = {run.margin, 2.0 * job.bound, grid_search_margin(job.pool, job.bound, cfg.grid_budget),
                       run.preferred_on_top ? 1.0 : 0.0, static_cast<double>(run.steps)};
        row.reward_eval_count = run.steps * job.pool;
        row.runtime_s = detail::seconds_since(t0);
        return row;
    });
    res.rows = std::move(rows);
    res.summary = summarize(cfg, res);
    return res;
}

// ---------------------------------------------------------------------------
// efficiency

inline SweepResult run_efficiency_bench(const ExperimentConfig& cfg) {
    validate(cfg);
    SweepResult res;
    res.experiment = cfg.experiment;
    res.config_hash = config_hash(cfg);
    res.cell_columns = {"n", "loss"};
    res.metric_columns = {"evals_per_sample_step", "wall_per_step_s", "steps"};
    std::vector<LossKind> losses = cfg.losses.empty() ? std::vector<LossKind>{LossKind::pl, LossKind::hps_sampled} : cfg.losses;
    const std::size_t m = cfg.m_grid.front();

    // Timed runs stay on one thread so they do not compete for cores.
    for (std::size_t n : cfg.n_grid)
        for (std::uint64_t seed : cfg.seeds) {
            const World world = build_world(cfg.world, seed);
            Rng rng = make_rng(seed, 11 + n);
            auto data = generate_dataset(world, m, n, rng);
            data = annotate_rewards(std::move(data), world, AnnotationMode::ground_truth(), rng);
            for (LossKind loss : losses) {
                TrainConfig tc;
                tc.loss = loss;
                tc.optimizer = OptimizerKind::sgd;
                tc.learning_rate = cfg.learning_rate;
                tc.epochs = cfg.steps;
                tc.batch_size = cfg.batch_size == 0 ? m : cfg.batch_size;
                tc.convergence_grad_tol = 0.0;
                tc.seed = seed;
                const auto init = make_policy_reward(RewardKind::dpo_implicit, world, cfg.beta);
                RunRecord best;
                double best_wall = std::numeric_limits<double>::infinity();
                for (std::size_t rep = 0; rep < std::max<std::size_t>(1, cfg.timing_repeats); ++rep) {
                    auto rec = train(data, world, init, tc);
                    if (rec.wall_time_s < best_wall) {
                        best_wall = rec.wall_time_s;
                        best = std::move(rec);
                    }
                }
                SweepRow row;
                row.cell = {std::to_string(n), std::string(to_string(loss))};
                row.seed = seed;
                const double sample_steps = static_cast<double>(m) * static_cast<double>(cfg.steps);
                row.metrics = {static_cast<double>(best.reward_eval_count) / sample_steps,
                               best.wall_time_s / static_cast<double>(best.steps), static_cast<double>(best.steps)};
                row.runtime_s = best.wall_time_s;
                row.reward_eval_count = best.reward_eval_count;
                res.rows.push_back(std::move(row));
            }
        }
    res.summary = summarize(cfg, res);
    return res;
}

// ---------------------------------------------------------------------------
// fine-tune comparison

inline SweepResult run_finetune_compare(const ExperimentConfig& cfg) {
    validate(cfg);
    SweepResult res;
    res.experiment = cfg.experiment;
    res.config_hash = config_hash(cfg);
    res.cell_columns = {"loss"};
    res.metric_columns = {"rm_dpo_mean", "rm_rdpo_mean", "hps_margin_mean", "argmax_accuracy", "final_loss"};
    const std::size_t m = cfg.m_grid.front();
    const std::size_t n = cfg.n_grid.front();

    auto per_seed = run_jobs(cfg.seeds.size(), cfg.threads, [&](std::size_t si) {
        const std::uint64_t seed = cfg.seeds[si];
        const World world = build_world(cfg.world, seed);
        Rng rng = make_rng(seed, 21);
        auto train_data = annotate_rewards(generate_dataset(world, m, n, rng), world, AnnotationMode::ground_truth(), rng);
        const auto eval_data = generate_dataset(world, cfg.eval_samples, n, rng);
        const auto init = make_policy_reward(RewardKind::dpo_implicit, world, cfg.beta);

        std::vector<SweepRow> out;
        for (LossKind loss : cfg.losses) {
            TrainConfig tc;
            tc.loss = loss;
            tc.optimizer = OptimizerKind::adam;
            tc.learning_rate = cfg.learning_rate;
            tc.batch_size = cfg.batch_size;
            const std::size_t per_epoch = cfg.batch_size == 0 ? 1 : (m + cfg.batch_size - 1) / cfg.batch_size;
            tc.epochs = std::max<std::size_t>(1, cfg.steps / per_epoch);
            tc.convergence_grad_tol = 0.0;
            tc.gamma = cfg.gamma_schedule.value_or(GammaSchedule::constant(cfg.gamma_grid.empty() ? 1.0 : cfg.gamma_grid.front()));
            tc.seed = seed;
            RewardParameterization trained = init;
            RunRecord rec;
            if (cfg.steps > 0) {
                rec = train(train_data, world, init, tc);
                trained.theta = rec.final_params;
            }
            const auto rep = evaluate_metrics(trained, world, eval_data);
            SweepRow row;
            row.cell = {std::string(to_string(loss))};
            row.seed = seed;
            row.metrics = {rep.rm_dpo_mean, rep.rm_rdpo_mean, rep.hps_margin_mean, rep.argmax_accuracy,
                           rec.loss_trace.empty() ? std::numeric_limits<double>::quiet_NaN() : rec.loss_trace.back()};
            row.runtime_s = rec.wall_time_s;
            row.reward_eval_count = rec.reward_eval_count;
            out.push_back(std::move(row));
        }
        return out;
    });
    for (auto& batch : per_seed)
        for (auto& r : batch) res.rows.push_back(std::move(r));
    res.summary = summarize(cfg, res);
    return res;
}

inline SweepResult run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.experiment) {
        case ExperimentKind::complexity: return run_complexity_sweep(cfg);
        case ExperimentKind::gamma_convergence: return run_gamma_convergence(cfg);
        case ExperimentKind::margin_verify: return run_margin_verification(cfg);
        case ExperimentKind::efficiency: return run_efficiency_bench(cfg);
        case ExperimentKind::finetune_compare: return run_finetune_compare(cfg);
    }
    throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> column(const SweepResult& res, std::string_view metric,
                                  const std::function<bool(const SweepRow&)>& keep) {
    const std::size_t k = res.metric_index(metric);
    std::vector<double> xs;
    for (const auto& r : res.rows)
        if (keep(r)) xs.push_back(r.metrics[k]);
    return xs;
}

// Per-seed values of a metric for one cell, ordered by seed.
inline std::map<std::uint64_t, double> by_seed(const SweepResult& res, std::string_view metric,
                                               const std::function<bool(const SweepRow&)>& keep) {
    const std::size_t k = res.metric_index(metric);
    std::map<std::uint64_t, double> out;
    for (const auto& r : res.rows)
        if (keep(r)) out[r.seed] = r.metrics[k];
    return out;
}

inline io::OrderedJson summarize_complexity(const ExperimentConfig& cfg, const SweepResult& res) {
    const std::size_t conv = res.metric_index("converged");
    auto converged = [conv](const SweepRow& r) { return r.metrics[conv] == 1.0; };
    io::OrderedJson s;
    s["cells"] = cell_summaries(res, converged);
    io::OrderedJson slopes_m = io::OrderedJson::array(), slopes_n = io::OrderedJson::array();
    for (LossKind loss : cfg.losses) {
        const std::string name(to_string(loss));
        auto mean_error = [&](std::size_t m, std::size_t n) {
            const auto xs = column(res, "error", [&](const SweepRow& r) {
                return converged(r) && r.cell[0] == std::to_string(m) && r.cell[1] == std::to_string(n) && r.cell[2] == name;
            });
            return mean_std(xs).mean;
        };
        if (cfg.m_grid.size() >= 2)
            for (std::size_t n : cfg.n_grid) {
                std::vector<double> xs, ys;
                for (std::size_t m : cfg.m_grid) {
                    xs.push_back(static_cast<double>(m));
                    ys.push_back(mean_error(m, n));
                }
                io::OrderedJson e;
                e["loss"] = name;
                e["n"] = n;
                e["slope"] = log_log_slope(xs, ys);
                slopes_m.push_back(std::move(e));
            }
        if (cfg.n_grid.size() >= 2)
            for (std::size_t m : cfg.m_grid) {
                std::vector<double> xs, ys;
                for (std::size_t n : cfg.n_grid) {
                    xs.push_back(static_cast<double>(n));
                    ys.push_back(mean_error(m, n));
                }
                io::OrderedJson e;
                e["loss"] = name;
                e["m"] = m;
                e["slope"] = log_log_slope(xs, ys);
                slopes_n.push_back(std::move(e));
            }
    }
    s["slope_vs_m"] = std::move(slopes_m);
    s["slope_vs_n"] = std::move(slopes_n);
    std::size_t excluded = 0;
    for (const auto& r : res.rows) excluded += converged(r) ? 0 : 1;
    s["excluded_rows"] = excluded;
    return s;
}

inline io::OrderedJson summarize_gamma(const ExperimentConfig& cfg, const SweepResult& res) {
    const std::size_t gap = res.metric_index("gap"), degenerate = res.metric_index("degenerate");
    std::vector<double> grid = cfg.gamma_grid;
    std::sort(grid.begin(), grid.end());
    std::map<std::string, std::map<double, double>> gaps;  // instance key -> gamma -> gap
    std::size_t filtered = 0;
    for (const auto& r : res.rows) {
        if (r.metrics[degenerate] != 0.0) {
            ++filtered;
            continue;
        }
        gaps[std::to_string(r.seed) + "/" + r.cell[0]][std::stod(r.cell[2])] = r.metrics[gap];
    }
    std::size_t monotone = 0, tight = 0, both = 0;
    for (const auto& [key, by_gamma] : gaps) {
        bool mono = true;
        double prev = std::numeric_limits<double>::infinity();
        for (double g : grid) {
            const double v = by_gamma.at(g);
            if (v > prev + 1e-12) mono = false;
            prev = v;
        }
        const bool small = by_gamma.at(grid.back()) <= 1e-3;
        monotone += mono ? 1 : 0;
        tight += small ? 1 : 0;
        both += mono && small ? 1 : 0;
    }
    io::OrderedJson s;
    const double count = static_cast<double>(gaps.size());
    s["instances"] = gaps.size();
    s["filtered_degenerate"] = filtered;
    s["fraction_nonincreasing"] = count > 0 ? monotone / count : 0.0;
    s["fraction_gap_below_1e-3_at_max_gamma"] = count > 0 ? tight / count : 0.0;
    s["fraction_both"] = count > 0 ? both / count : 0.0;
    io::OrderedJson table = io::OrderedJson::array();
    for (double g : grid) {
        std::vector<double> xs;
        for (const auto& [key, by_gamma] : gaps) xs.push_back(by_gamma.at(g));
        const auto ms = mean_std(xs);
        io::OrderedJson e;
        e["gamma"] = g;
        e["gap_mean"] = ms.mean;
        e["gap_max"] = xs.empty() ? 0.0 : *std::max_element(xs.begin(), xs.end());
        table.push_back(std::move(e));
    }
    s["gap_vs_gamma"] = std::move(table);
    return s;
}

inline io::OrderedJson summarize_margin(const SweepResult& res) {
    io::OrderedJson s;
    s["cells"] = cell_summaries(res);
    const std::size_t margin = res.metric_index("margin"), vertex = res.metric_index("vertex_margin"),
                      grid = res.metric_index("grid_margin"), top = res.metric_index("preferred_on_top");
    double worst_ratio = std::numeric_limits<double>::infinity(), worst_grid_rel = 0.0;
    bool all_top = true;
    for (const auto& r : res.rows) {
        const double opt = r.metrics[vertex];
        if (opt > 0.0) {
            worst_ratio = std::min(worst_ratio, r.metrics[margin] / opt);
            worst_grid_rel = std::max(worst_grid_rel, std::abs(r.metrics[margin] - r.metrics[grid]) / std::abs(r.metrics[grid]));
            all_top = all_top && r.metrics[top] == 1.0;
        }
    }
    s["min_margin_over_optimum"] = std::isfinite(worst_ratio) ? worst_ratio : 1.0;
    s["max_relative_gap_to_grid"] = worst_grid_rel;
    s["preferred_always_on_top"] = all_top;
    return s;
}

inline io::OrderedJson summarize_efficiency(const ExperimentConfig& cfg, const SweepResult& res) {
    io::OrderedJson s;
    s["cells"] = cell_summaries(res);
    io::OrderedJson ratios = io::OrderedJson::array();
    for (std::size_t n : cfg.n_grid) {
        auto mean_of = [&](std::string_view metric, std::string_view loss) {
            return mean_std(column(res, metric, [&](const SweepRow& r) {
                       return r.cell[0] == std::to_string(n) && r.cell[1] == loss;
                   })).mean;
        };
        io::OrderedJson e;
        e["n"] = n;
        const double pl_evals = mean_of("evals_per_sample_step", "pl");
        const double hps_evals = mean_of("evals_per_sample_step", "hps_sampled");
        e["pl_evals_per_sample_step"] = pl_evals;
        e["hps_evals_per_sample_step"] = hps_evals;
        e["eval_ratio"] = hps_evals > 0.0 ? pl_evals / hps_evals : 0.0;
        const double pl_wall = mean_of("wall_per_step_s", "pl");
        const double hps_wall = mean_of("wall_per_step_s", "hps_sampled");
        e["wall_ratio"] = hps_wall > 0.0 ? pl_wall / hps_wall : 0.0;
        ratios.push_back(std::move(e));
    }
    s["pl_over_hps"] = std::move(ratios);
    return s;
}

inline io::OrderedJson summarize_finetune(const ExperimentConfig& cfg, const SweepResult& res) {
    io::OrderedJson s;
    s["cells"] = cell_summaries(res);
    io::OrderedJson comparisons = io::OrderedJson::array();
    const bool has_pl = std::find(cfg.losses.begin(), cfg.losses.end(), LossKind::pl) != cfg.losses.end();
    for (LossKind loss : cfg.losses) {
        if (!has_pl || !is_hps_loss(loss)) continue;
        const std::string name(to_string(loss));
        auto of = [&](std::string_view metric, std::string_view who) {
            return by_seed(res, metric, [&](const SweepRow& r) { return r.cell[0] == who; });
        };
        const auto hm = of("hps_margin_mean", name), pm = of("hps_margin_mean", "pl");
        const auto ha = of("argmax_accuracy", name), pa = of("argmax_accuracy", "pl");
        std::vector<double> a, b, acc_a, acc_b;
        for (const auto& [seed, v] : hm)
            if (pm.count(seed)) {
                a.push_back(v);
                b.push_back(pm.at(seed));
                acc_a.push_back(ha.at(seed));
                acc_b.push_back(pa.at(seed));
            }
        const auto t = sign_test(a, b);
        io::OrderedJson e;
        e["loss"] = name;
        e["versus"] = "pl";
        e["seeds"] = a.size();
        e["hps_margin_mean"] = mean_std(a).mean;
        e["pl_hps_margin_mean"] = mean_std(b).mean;
        e["wins"] = t.wins;
        e["losses"] = t.losses;
        e["ties"] = t.ties;
        e["sign_test_p"] = t.p_value;
        e["argmax_accuracy"] = mean_std(acc_a).mean;
        e["pl_argmax_accuracy"] = mean_std(acc_b).mean;
        e["accuracy_gap"] = std::abs(mean_std(acc_a).mean - mean_std(acc_b).mean);
        comparisons.push_back(std::move(e));
    }
    s["comparisons"] = std::move(comparisons);
    return s;
}

}  // namespace detail

inline io::OrderedJson summarize(const ExperimentConfig& cfg, const SweepResult& res) {
    io::OrderedJson s;
    s["experiment"] = to_string(cfg.experiment);
    s["config_hash"] = res.config_hash;
    s["rows"] = res.rows.size();
    io::OrderedJson body;
    switch (cfg.experiment) {
        case ExperimentKind::complexity: body = detail::summarize_complexity(cfg, res); break;
        case ExperimentKind::gamma_convergence: body = detail::summarize_gamma(cfg, res); break;
        case ExperimentKind::margin_verify: body = detail::summarize_margin(res); break;
        case ExperimentKind::efficiency: body = detail::summarize_efficiency(cfg, res); break;
        case ExperimentKind::finetune_compare: body = detail::summarize_finetune(cfg, res); break;
    }
    for (auto& [k, v] : body.items()) s[k] = v;
    return s;
}

// ---------------------------------------------------------------------------
// Files: rows.tsv (raw), summary.json (aggregates), config.lock.json (resolved config + hash)

inline std::string rows_tsv(const SweepResult& res, bool header = true) {
    std::ostringstream os;
    if (header) {
        for (const auto& c : res.cell_columns) os << c << '\t';
        os << "seed";
        for (const auto& m : res.metric_columns) os << '\t' << m;
        os << "\truntime_s\treward_eval_count\tconfig_hash\n";
    }
    for (const auto& r : res.rows) {
        for (const auto& c : r.cell) os << c << '\t';
        os << r.seed;
        for (double v : r.metrics) os << '\t' << format_double(v);
        os << '\t' << format_double(r.runtime_s) << '\t' << r.reward_eval_count << '\t' << res.config_hash << '\n';
    }
    return os.str();
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

inline double parse_double(const std::string& s) {
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("rows.tsv: bad number '" + s + "'");
    return v;
}

}  // namespace detail

/// Parses rows.tsv back; column layout comes from its header.
inline SweepResult rows_from_tsv(const std::string& text, ExperimentKind kind) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("rows.tsv: empty");
    const auto header = detail::split_tabs(line);
    const auto seed_at = std::find(header.begin(), header.end(), "seed");
    if (seed_at == header.end() || header.size() < 4) throw std::invalid_argument("rows.tsv: malformed header");
    const std::size_t cells = static_cast<std::size_t>(seed_at - header.begin());
    const std::size_t metrics = header.size() - cells - 4;
    SweepResult res;
    res.experiment = kind;
    res.cell_columns.assign(header.begin(), seed_at);
    res.metric_columns.assign(seed_at + 1, seed_at + 1 + static_cast<std::ptrdiff_t>(metrics));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_tabs(line);
        if (f.size() != header.size()) throw std::invalid_argument("rows.tsv: ragged row");
        SweepRow r;
        r.cell.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(cells));
        r.seed = std::stoull(f[cells]);
        for (std::size_t k = 0; k < metrics; ++k) r.metrics.push_back(detail::parse_double(f[cells + 1 + k]));
        r.runtime_s = detail::parse_double(f[cells + 1 + metrics]);
        r.reward_eval_count = std::stoull(f[cells + 2 + metrics]);
        const std::string& hash = f[cells + 3 + metrics];
        if (res.config_hash.empty()) res.config_hash = hash;
        else if (hash != res.config_hash) throw std::invalid_argument("rows.tsv: mixed config hashes");
        res.rows.push_back(std::move(r));
    }
    return res;
}

inline io::OrderedJson config_lock(const ExperimentConfig& cfg) {
    io::OrderedJson j;
    j["config_hash"] = config_hash(cfg);
    j["config"] = to_json(cfg);
    return j;
}

/// Writes the three output files. With `append`, rows are appended to an
/// existing rows.tsv whose config hash matches; the summary covers all rows.
inline void write_outputs(const ExperimentConfig& cfg, const SweepResult& res, const std::filesystem::path& dir,
                          bool append = false) {
    std::filesystem::create_directories(dir);
    const auto rows_path = dir / "rows.tsv";
    SweepResult all = res;
    if (append && std::filesystem::exists(rows_path)) {
        auto previous = rows_from_tsv(io::read_file(rows_path), cfg.experiment);
        if (previous.config_hash != res.config_hash)
            throw std::invalid_argument("write_outputs: existing rows.tsv has a different config hash");
        previous.rows.insert(previous.rows.end(), res.rows.begin(), res.rows.end());
        previous.config_hash = res.config_hash;
        all.rows = std::move(previous.rows);
    }
    io::write_file(rows_path, rows_tsv(all));
    io::write_file(dir / "summary.json", summarize(cfg, all).dump(2) + "\n");
    io::write_file(dir / "config.lock.json", config_lock(cfg).dump(2) + "\n");
}

struct Assertion {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Pass/fail checks on a sweep summary, used by `sweep --assert`.
inline std::vector<Assertion> sweep_assertions(const ExperimentConfig& cfg, const io::OrderedJson& summary) {
    std::vector<Assertion> out;
    auto add = [&](std::string name, bool ok, std::string detail) { out.push_back({std::move(name), ok, std::move(detail)}); };
    switch (cfg.experiment) {
        case ExperimentKind::complexity:
            for (const auto& e : summary.at("slope_vs_m")) {
                const double slope = e.at("slope").get<double>();
                add("m-slope " + e.at("loss").get<std::string>() + " n=" + std::to_string(e.at("n").get<std::size_t>()),
                    slope >= -0.65 && slope <= -0.35, "slope=" + format_double(slope));
            }
            break;
        case ExperimentKind::gamma_convergence: {
            const double f = summary.at("fraction_both").get<double>();
            add("gap nonincreasing and <= 1e-3 at max gamma", f >= 0.99, "fraction=" + format_double(f));
            break;
        }
        case ExperimentKind::margin_verify: {
            const double ratio = summary.at("min_margin_over_optimum").get<double>();
            const double grid = summary.at("max_relative_gap_to_grid").get<double>();
            add("margin >= 0.99 * 2B", ratio >= 0.99, "min ratio=" + format_double(ratio));
            add("margin within 1% of grid oracle", grid <= 0.01, "max gap=" + format_double(grid));
            break;
        }
        case ExperimentKind::efficiency:
            for (const auto& e : summary.at("pl_over_hps")) {
                const auto n = e.at("n").get<std::size_t>();
                const double hps = e.at("hps_evals_per_sample_step").get<double>();
                const double pl = e.at("pl_evals_per_sample_step").get<double>();
                add("evals n=" + std::to_string(n), hps == 2.0 && pl == static_cast<double>(n),
                    "pl=" + format_double(pl) + " hps=" + format_double(hps));
                if (n == 64) {
                    const double wall = e.at("wall_ratio").get<double>();
                    add("wall ratio n=64 >= 8", wall >= 8.0, "ratio=" + format_double(wall));
                }
            }
            break;
        case ExperimentKind::finetune_compare:
            for (const auto& e : summary.at("comparisons")) {
                const std::string loss = e.at("loss").get<std::string>();
                const double p = e.at("sign_test_p").get<double>();
                const bool higher = e.at("hps_margin_mean").get<double>() > e.at("pl_hps_margin_mean").get<double>();
                add(loss + " margin > pl (sign test)", higher && p < 0.05, "p=" + format_double(p));
                const double gap = e.at("accuracy_gap").get<double>();
                add(loss + " accuracy gap <= 0.02", gap <= 0.02, "gap=" + format_double(gap));
            }
            break;
    }
    return out;
}

}  // namespace hps
