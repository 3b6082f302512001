// Acceptance suite. `acceptance` runs every criterion, `acceptance 4 7` a subset.
// Prints one PASS/FAIL line per criterion; exits 2 if any fails.

#include <array>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "hps/hps.hpp"

using namespace hps;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(double x, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << x;
    return os.str();
}

PreferenceSample random_sample(const World& w, std::size_t n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    PreferenceSample s;
    s.prompt_id = std::uniform_int_distribution<std::size_t>(0, w.prompt_count() - 1)(rng);
    std::vector<ResponseId> pool(w.pool_size());
    std::iota(pool.begin(), pool.end(), ResponseId{0});
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t j = 0; j < n; ++j) {
        s.responses.push_back(pool[j]);
        s.lengths.push_back(w.length(s.prompt_id, pool[j]));
        s.est_rewards.push_back(normal(rng));
    }
    return s;
}

PreferenceSample whole_pool(const World& w, std::vector<double> est) {
    PreferenceSample s;
    for (ResponseId y = 0; y < w.pool_size(); ++y) {
        s.responses.push_back(y);
        s.lengths.push_back(w.length(0, y));
    }
    s.est_rewards = std::move(est);
    return s;
}

RewardParameterization unit_linear() {
    RewardParameterization p;
    p.theta = Eigen::VectorXd::Ones(1);
    return p;
}

// 1. analytic vs central-difference gradients
Outcome gradients() {
    WorldConfig wc;
    wc.prompt_count = 3;
    wc.responses_per_prompt = 9;
    wc.feature_dim = 4;
    wc.ball_radius = 2.0;
    const World w = build_world(wc, 101);
    Rng rng = make_rng(101);
    std::normal_distribution<double> normal(0.0, 1.0);
    const LossKind losses[] = {LossKind::pl,           LossKind::bt,   LossKind::hps_exact, LossKind::hps_sampled,
                               LossKind::weighted_hps, LossKind::slic, LossKind::lipo};
    const RewardKind kinds[] = {RewardKind::linear, RewardKind::dpo_implicit, RewardKind::kto, RewardKind::simpo};
    double worst = 0.0;
    std::string worst_pair;
    for (LossKind lk : losses)
        for (RewardKind rk : kinds)
            for (int point = 0; point < 100; ++point) {
                auto param = rk == RewardKind::linear ? make_linear_reward(w) : make_policy_reward(rk, w, 1.0);
                for (Eigen::Index i = 0; i < param.theta.size(); ++i) param.theta[i] += normal(rng);
                const auto s = random_sample(w, 5, rng);
                LossOptions opt;
                opt.gamma = 1.5;
                opt.slic_delta = 5.0;
                opt.slic_lambda = 0.1;
                const std::uint64_t draw_seed = rng();
                auto at = [&](const RewardParameterization& p) {
                    Rng fixed = make_rng(draw_seed);
                    return evaluate_loss(lk, s, p, w, opt, fixed);
                };
                const double e = loss_gradient_check(at, param, 1e-5);
                if (e > worst) {
                    worst = e;
                    worst_pair = std::string(to_string(lk)) + "/" + std::string(to_string(rk));
                }
            }
    return {worst <= 1e-5, "28 pairs x 100 points, max rel err " + fmt(worst) + " (" + worst_pair + ")"};
}

// 2. sampler frequencies vs the sequential-softmax probabilities
Outcome sampler() {
    const std::vector<double> r = {0.7, -0.4, 1.3};
    const std::array<std::array<std::size_t, 3>, 6> orders = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    std::array<double, 6> expected{};
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& o = orders[k];
        const double e0 = std::exp(r[o[0]]), e1 = std::exp(r[o[1]]), e2 = std::exp(r[o[2]]);
        expected[k] = e0 / (e0 + e1 + e2) * e1 / (e1 + e2);
    }
    Rng rng = make_rng(202);
    std::array<double, 6> counts{};
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto o = sample_ranking(r, rng);
        for (std::size_t k = 0; k < 6; ++k)
            if (o[0] == orders[k][0] && o[1] == orders[k][1]) counts[k] += 1.0;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k < 6; ++k) tv += 0.5 * std::abs(counts[k] / draws - expected[k]);
    return {tv <= 0.01, "TV " + fmt(tv)};
}

// 3. n = 2 gives BT; gamma = 0 gives the plain softmax loss
Outcome reductions() {
    Rng rng = make_rng(303);
    std::normal_distribution<double> normal(0.0, 2.0);
    std::uniform_int_distribution<std::size_t> size(3, 10);
    double worst_bt = 0.0, worst_softmax = 0.0;
    for (int i = 0; i < 1000; ++i) {
        {
            const std::vector<double> r = {normal(rng), normal(rng)};
            const World w = scalar_reward_world(r);
            const auto s = whole_pool(w, {normal(rng), normal(rng)});
            const double gamma = 10.0 * normal(rng);
            const double hps = hps_exact_loss(s, unit_linear(), w, gamma).value;
            worst_bt = std::max(worst_bt, std::abs(hps - bt_loss(s, unit_linear(), w).value));
        }
        {
            std::vector<double> r(size(rng)), est(r.size());
            for (auto& v : r) v = normal(rng);
            for (auto& v : est) v = normal(rng);
            const World w = scalar_reward_world(r);
            double denom = 0.0;
            for (double v : r) denom += std::exp(v);
            const double softmax_loss = -std::log(std::exp(r[0]) / denom);
            const double hps = hps_exact_loss(whole_pool(w, est), unit_linear(), w, 0.0).value;
            worst_softmax = std::max(worst_softmax, std::abs(hps - softmax_loss));
        }
    }
    return {worst_bt <= 1e-12 && worst_softmax <= 1e-12,
            "max |hps-bt| " + fmt(worst_bt) + ", max |hps(0)-softmax| " + fmt(worst_softmax)};
}

// 4. gap to the hardest-negative loss
Outcome gamma_convergence() {
    auto cfg = default_experiment_config(ExperimentKind::gamma_convergence);
    cfg.gamma_grid = {0, 1, 2, 5, 10, 20, 50};
    cfg.instances = 1000;
    cfg.min_gap = 0.1;
    const auto res = run_gamma_convergence(cfg);
    const double both = res.summary.at("fraction_both").get<double>();
    const auto count = res.summary.at("instances").get<std::size_t>();
    return {count == 1000 && both >= 0.99,
            std::to_string(count) + " instances, nonincreasing and gap<=1e-3 at 50 on " + fmt(100 * both) + "% (" +
                std::to_string(res.summary.at("filtered_degenerate").get<std::size_t>()) + " degenerate filtered)"};
}

// 5. minimax margin on the box
Outcome margin() {
    auto cfg = default_experiment_config(ExperimentKind::margin_verify);
    cfg.n_grid = {2, 5, 10};
    cfg.box_bounds = {1.0, 5.0};
    const auto res = run_margin_verification(cfg);
    const double ratio = res.summary.at("min_margin_over_optimum").get<double>();
    const double grid = res.summary.at("max_relative_gap_to_grid").get<double>();
    return {ratio >= 0.99 && grid <= 0.01, "min margin/2B " + fmt(ratio, 6) + ", max gap to grid " + fmt(grid)};
}

// 6. estimator error in the dataset seminorm
Outcome complexity() {
    auto cfg = default_experiment_config(ExperimentKind::complexity);
    cfg.m_grid = {250, 1000, 4000};
    cfg.n_grid = {8};
    cfg.seeds = seed_range(0, 20);
    const auto slopes = run_complexity_sweep(cfg);
    bool a = slopes.warnings.empty();
    std::string detail = "(a)";
    for (const auto& e : slopes.summary.at("slope_vs_m")) {
        const double s = e.at("slope").get<double>();
        a = a && s >= -0.65 && s <= -0.35;
        detail += " " + e.at("loss").get<std::string>() + " slope " + fmt(s);
    }

    auto at16 = cfg;
    at16.m_grid = {2000};
    at16.n_grid = {16};
    const auto big = run_complexity_sweep(at16);
    const double pl = big.summary.at("cells")[0].at("error_mean").get<double>();
    const double hps = big.summary.at("cells")[1].at("error_mean").get<double>();
    const bool b = big.warnings.empty() && hps <= pl;
    detail += "; (b) m=2000 n=16 hps " + fmt(hps) + " vs pl " + fmt(pl);

    auto pair = cfg;
    pair.m_grid = {1000};
    pair.n_grid = {2};
    const auto two = run_complexity_sweep(pair);
    const std::size_t err = two.metric_index("error");
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < two.rows.size(); i += 2)
        worst = std::max(worst, std::abs(two.rows[i].metrics[err] - two.rows[i + 1].metrics[err]));
    const bool c = two.warnings.empty() && worst <= 1e-8;
    detail += "; (c) n=2 max diff " + fmt(worst);
    detail += std::string("  [a ") + (a ? "pass" : "fail") + ", b " + (b ? "pass" : "fail") + ", c " + (c ? "pass" : "fail") + "]";
    return {a && b && c, detail};
}

// 7. reward-evaluation counts and step wall time
Outcome efficiency() {
    auto cfg = default_experiment_config(ExperimentKind::efficiency);
    cfg.n_grid = {4, 16, 64};
    const auto res = run_efficiency_bench(cfg);
    bool ok = true;
    const std::size_t k = res.metric_index("evals_per_sample_step");
    for (const auto& r : res.rows) {
        const double expected = r.cell[1] == "pl" ? std::stod(r.cell[0]) : 2.0;
        ok = ok && r.metrics[k] == expected;
    }
    double wall = 0.0;
    for (const auto& e : res.summary.at("pl_over_hps"))
        if (e.at("n").get<std::size_t>() == 64) wall = e.at("wall_ratio").get<double>();
    return {ok && wall >= 8.0, std::string("evals exact: ") + (ok ? "yes" : "no") + ", n=64 wall ratio " + fmt(wall)};
}

// 8. held-out margins after matched-budget training
Outcome finetune() {
    auto cfg = default_experiment_config(ExperimentKind::finetune_compare);
    cfg.losses = {LossKind::pl, LossKind::hps_exact};
    cfg.seeds = seed_range(0, 20);
    const auto res = run_finetune_compare(cfg);
    const auto& c = res.summary.at("comparisons")[0];
    const double hm = c.at("hps_margin_mean").get<double>(), pm = c.at("pl_hps_margin_mean").get<double>();
    const double p = c.at("sign_test_p").get<double>(), gap = c.at("accuracy_gap").get<double>();
    const bool direction = hm > pm && p < 0.05;
    const bool accuracy = gap <= 0.02;
    return {direction && accuracy,
            "margin hps " + fmt(hm) + " vs pl " + fmt(pm) + ", wins " + std::to_string(c.at("wins").get<std::size_t>()) +
                "/20, p " + fmt(p) + "; accuracy hps " + fmt(c.at("argmax_accuracy").get<double>()) + " vs pl " +
                fmt(c.at("pl_argmax_accuracy").get<double>()) + " gap " + fmt(gap) + "  [direction " +
                (direction ? "pass" : "fail") + ", accuracy " + (accuracy ? "pass" : "fail") + "]"};
}

// 9. rm_dpo / rm_rdpo on fixed fixtures
Outcome metric_fixtures() {
    struct Fixture {
        double a, b;  // policy/reference log-ratios of the top two responses
        int len0, len1;
        double rm_dpo, rm_rdpo;
    };
    const Fixture fixtures[] = {
        {0.5, -0.3, 10, 10, 0.8, 0.8},    {0.5, -0.3, 30, 10, 0.8, 0.6},   {0.0, 0.0, 10, 30, 0.0, 0.2},
        {0.2, 0.1, 12, 8, 0.1, 0.06},     {-1.0, 0.3, 5, 50, -1.3, -0.85}, {0.6, -2.0, 64, 4, 2.6, 2.0},
        {-0.5, -0.5, 20, 21, 0.0, 0.01},  {0.4, -1.5, 33, 33, 1.9, 1.9},   {-2.0, 0.5, 4, 64, -2.5, -1.9},
        {0.25, -0.75, 17, 9, 1.0, 0.92},  {0.1, 0.4, 40, 10, -0.3, -0.6},  {-0.2, -1.2, 8, 16, 1.0, 1.08},
        {0.55, 0.05, 25, 5, 0.5, 0.3},    {-1.7, -0.1, 60, 6, -1.6, -2.14}, {0.3, -0.6, 7, 7, 0.9, 0.9},
        {-0.9, -1.9, 11, 48, 1.0, 1.37},  {0.45, 0.35, 9, 19, 0.1, 0.2},   {-0.4, 0.2, 32, 31, -0.6, -0.61},
        {0.05, -0.05, 50, 4, 0.1, -0.36}, {-1.1, -0.3, 13, 26, -0.8, -0.67},
    };
    WorldConfig wc;
    wc.prompt_count = 1;
    wc.responses_per_prompt = 3;
    wc.feature_dim = 1;
    double worst = 0.0;
    for (const auto& f : fixtures) {
        World w = build_world(wc, 9);
        w.ref_logits.setZero();
        w.lengths = {f.len0, f.len1, 7};
        auto p = make_policy_reward(RewardKind::dpo_implicit, w);
        const double ref = -std::log(3.0);
        p.theta[0] = f.a + ref;
        p.theta[1] = f.b + ref;
        p.theta[2] = std::log(1.0 - std::exp(p.theta[0]) - std::exp(p.theta[1]));
        PreferenceSample s;
        s.responses = {0, 1, 2};
        s.lengths = {f.len0, f.len1, 7};
        s.est_rewards = {0, 0, 0};
        worst = std::max({worst, std::abs(rm_dpo(p, w, s) - f.rm_dpo), std::abs(rm_rdpo(p, w, s) - f.rm_rdpo)});
    }
    return {worst <= 1e-12, "20 fixtures, max abs err " + fmt(worst)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "gradient correctness", 60, gradients},
        {2, "ranking sampler fidelity", 10, sampler},
        {3, "reduction identities", 10, reductions},
        {4, "gamma convergence", 30, gamma_convergence},
        {5, "margin maximization", 120, margin},
        {6, "sample complexity", 900, complexity},
        {7, "efficiency", 300, efficiency},
        {8, "fine-tune comparison direction", 900, finetune},
        {9, "metric fixtures", 1, metric_fixtures},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    bool ok = true;
    for (const auto& c : all) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool passed = out.passed && in_time;
        std::printf("%s  %d %-32s %s  (%.2fs / %.0fs budget%s)\n", passed ? "PASS" : "FAIL", c.id, c.name,
                    out.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
        std::fflush(stdout);
        ok = ok && passed;
    }
    return ok ? 0 : 2;
}
