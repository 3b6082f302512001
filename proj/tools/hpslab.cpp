// hpslab: worlds, datasets, training, evaluation and sweeps from the command line.
//
// exit codes: 0 ok, 1 error, 2 a `sweep --assert` check failed

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "hps/hps.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t threads = 1;
    std::string format = "tsv";
};

void add_common(CLI::App* cmd, Common& c, bool with_threads = false) {
    cmd->add_option("--config", c.config, "JSON config file");
    cmd->add_option("--seed", c.seed, "RNG seed");
    cmd->add_option("--out", c.out, "output path");
    if (with_threads) cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--format", c.format, "stdout format")->check(CLI::IsMember({"tsv", "json"}));
}

hps::io::Json read_json(const std::string& path) { return hps::io::Json::parse(hps::io::read_file(path)); }

hps::World load_world(const std::string& path) { return hps::world_from_json(read_json(path)); }

hps::PreferenceDataset load_data(const std::string& path, const hps::World& w) {
    return hps::dataset_from_jsonl(hps::io::read_file(path), w.config_hash());
}

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    hps::io::write_file(out, text);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hard preference sampling lab"};
    app.require_subcommand(1);

    // world gen
    Common wc;
    auto* world = app.add_subcommand("world", "synthetic worlds")->require_subcommand(1);
    auto* world_gen = world->add_subcommand("gen", "build a world from a WorldConfig");
    add_common(world_gen, wc);

    // data gen / data annotate
    Common dc;
    std::string world_path, data_path, mode = "ground_truth";
    std::size_t m = 1000, n = 4;
    double sigma = 0.0;
    auto* data = app.add_subcommand("data", "preference datasets")->require_subcommand(1);
    auto* data_gen = data->add_subcommand("gen", "sample ranked preference data");
    add_common(data_gen, dc);
    data_gen->add_option("--world", world_path, "world JSON")->required();
    data_gen->add_option("-m,--samples", m, "number of samples");
    data_gen->add_option("-n,--list-size", n, "responses per sample");
    auto* data_ann = data->add_subcommand("annotate", "fill estimated rewards");
    add_common(data_ann, dc);
    data_ann->add_option("--world", world_path, "world JSON")->required();
    data_ann->add_option("--data", data_path, "dataset JSONL")->required();
    data_ann->add_option("--mode", mode, "ground_truth or noisy")->check(CLI::IsMember({"ground_truth", "noisy"}));
    data_ann->add_option("--sigma", sigma, "noise level for noisy mode");

    // train
    Common tc;
    std::string reward_kind = "linear", init_path;
    double beta = 0.1;
    auto* train = app.add_subcommand("train", "fit a reward model");
    add_common(train, tc);
    train->add_option("--world", world_path, "world JSON")->required();
    train->add_option("--data", data_path, "dataset JSONL")->required();
    train->add_option("--reward", reward_kind, "linear|dpo_implicit|kto|simpo");
    train->add_option("--beta", beta, "policy temperature");
    train->add_option("--init", init_path, "initial checkpoint");

    // eval
    Common ec;
    std::string ckpt_path, per_sample_out;
    auto* eval = app.add_subcommand("eval", "reward-margin metrics of a checkpoint");
    add_common(eval, ec);
    eval->add_option("--world", world_path, "world JSON")->required();
    eval->add_option("--data", data_path, "dataset JSONL")->required();
    eval->add_option("--checkpoint", ckpt_path, "checkpoint JSON")->required();
    eval->add_option("--per-sample", per_sample_out, "write per-sample metrics TSV here");

    // sweep
    Common sc;
    bool do_assert = false, append = false;
    auto* sweep = app.add_subcommand("sweep", "run an experiment sweep")->require_subcommand(1);
    std::vector<std::pair<CLI::App*, hps::ExperimentKind>> sweeps;
    for (auto [name, kind] : {std::pair{"complexity", hps::ExperimentKind::complexity},
                              std::pair{"gamma", hps::ExperimentKind::gamma_convergence},
                              std::pair{"margin", hps::ExperimentKind::margin_verify},
                              std::pair{"efficiency", hps::ExperimentKind::efficiency},
                              std::pair{"compare", hps::ExperimentKind::finetune_compare}}) {
        auto* cmd = sweep->add_subcommand(name, std::string(hps::to_string(kind)) + " sweep");
        add_common(cmd, sc, true);
        cmd->add_flag("--assert", do_assert, "exit 2 if a summary check fails");
        cmd->add_flag("--append", append, "append rows to an existing rows.tsv with the same config hash");
        sweeps.push_back({cmd, kind});
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (world_gen->parsed()) {
            hps::WorldConfig cfg;
            if (!wc.config.empty()) cfg = hps::world_config_from_json(read_json(wc.config));
            emit(wc.out, hps::world_to_json(hps::build_world(cfg, wc.seed.value_or(0))) + "\n");
            return 0;
        }
        if (data_gen->parsed()) {
            const auto w = load_world(world_path);
            hps::Rng rng = hps::make_rng(dc.seed.value_or(0), 1);
            emit(dc.out, hps::dataset_to_jsonl(hps::generate_dataset(w, m, n, rng)));
            return 0;
        }
        if (data_ann->parsed()) {
            const auto w = load_world(world_path);
            hps::Rng rng = hps::make_rng(dc.seed.value_or(0), 2);
            const auto am = mode == "noisy" ? hps::AnnotationMode::noisy(sigma) : hps::AnnotationMode::ground_truth();
            emit(dc.out, hps::dataset_to_jsonl(hps::annotate_rewards(load_data(data_path, w), w, am, rng)));
            return 0;
        }
        if (train->parsed()) {
            const auto w = load_world(world_path);
            const auto ds = load_data(data_path, w);
            hps::TrainConfig cfg;
            if (!tc.config.empty()) cfg = hps::train_config_from_json(read_json(tc.config));
            if (tc.seed) cfg.seed = *tc.seed;
            hps::RewardParameterization init;
            if (!init_path.empty()) {
                init = hps::checkpoint_from_json(read_json(init_path), w);
            } else {
                const auto kind = hps::reward_kind_from_string(reward_kind);
                init = kind == hps::RewardKind::linear ? hps::make_linear_reward(w) : hps::make_policy_reward(kind, w, beta);
            }
            const auto rec = hps::train(ds, w, init, cfg);
            const fs::path dir = tc.out.empty() ? fs::path("train_out") : fs::path(tc.out);
            fs::create_directories(dir);
            hps::io::write_file(dir / "checkpoint.json", hps::checkpoint_to_json(hps::with_params(init, rec.final_params), w) + "\n");
            hps::io::write_file(dir / "trace.tsv", hps::loss_trace_tsv(rec));
            hps::io::write_file(dir / "run.json", hps::run_record_to_json(rec) + "\n");
            hps::io::OrderedJson lock;
            lock["config_hash"] = rec.config_hash;
            lock["config"] = hps::to_json(cfg);
            hps::io::write_file(dir / "config.lock.json", lock.dump(2) + "\n");
            if (tc.format == "json") {
                std::cout << hps::run_record_to_json(rec) << "\n";
            } else {
                std::cout << "steps\t" << rec.steps << "\nfinal_loss\t"
                          << hps::format_double(rec.loss_trace.empty() ? 0.0 : rec.loss_trace.back()) << "\nconverged\t"
                          << rec.converged << "\nreward_eval_count\t" << rec.reward_eval_count << "\n";
            }
            return 0;
        }
        if (eval->parsed()) {
            const auto w = load_world(world_path);
            const auto ds = load_data(data_path, w);
            const auto param = hps::checkpoint_from_json(read_json(ckpt_path), w);
            std::optional<double> err;
            if (param.kind == hps::RewardKind::linear)
                err = hps::estimator_error(param.theta, w.theta_star, hps::sigma_d(ds, w));
            const auto rep = hps::evaluate_metrics(param, w, ds, err);
            emit(ec.out, ec.format == "json" ? hps::metric_report_to_json(rep) + "\n" : hps::metric_report_to_tsv(rep));
            if (!per_sample_out.empty()) hps::io::write_file(per_sample_out, hps::per_sample_tsv(rep));
            return 0;
        }
        for (auto& [cmd, kind] : sweeps) {
            if (!cmd->parsed()) continue;
            hps::ExperimentConfig cfg = hps::default_experiment_config(kind);
            if (!sc.config.empty()) {
                auto j = read_json(sc.config);
                if (!j.contains("experiment")) j["experiment"] = std::string(hps::to_string(kind));
                cfg = hps::experiment_config_from_json(j);
                if (cfg.experiment != kind) throw std::invalid_argument("config is for a different experiment");
            }
            if (sc.seed) cfg.seeds = {*sc.seed};
            if (!sc.out.empty()) cfg.output_dir = sc.out;
            cfg.threads = sc.threads;
            const auto res = hps::run_experiment(cfg);
            hps::write_outputs(cfg, res, cfg.output_dir, append);
            for (const auto& wmsg : res.warnings) std::cerr << "warning: " << wmsg << "\n";
            const auto summary = append ? hps::io::OrderedJson::parse(hps::io::read_file(fs::path(cfg.output_dir) / "summary.json"))
                                        : res.summary;
            if (sc.format == "json") std::cout << summary.dump(2) << "\n";
            else std::cout << hps::rows_tsv(res);
            if (do_assert) {
                bool ok = true;
                for (const auto& a : hps::sweep_assertions(cfg, summary)) {
                    std::cerr << (a.passed ? "PASS " : "FAIL ") << a.name << "  " << a.detail << "\n";
                    ok = ok && a.passed;
                }
                if (!ok) return 2;
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
