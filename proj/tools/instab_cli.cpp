#include "instab/attacks.hpp"
#include "instab/checkpoint.hpp"
#include "instab/config.hpp"
#include "instab/errors.hpp"
#include "instab/ood.hpp"
#include "instab/pipeline.hpp"
#include "instab/rng.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

using namespace instab;
namespace fs = std::filesystem;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_numerical = 3;
constexpr int exit_other = 1;

struct Common {
    std::string config;
    std::string task;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t run = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_run)
{
    cmd->add_option("--config", c.config, "Experiment config JSON");
    cmd->add_option("--task", c.task, "denoise or ct")->check(CLI::IsMember({"denoise", "ct"}));
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--seed", c.seed, "Master seed override");
    if (with_run) {
        cmd->add_option("--run", c.run, "Run index (seeds derive from master seed and run)");
    }
    cmd->add_flag("-q,--quiet", c.quiet, "Suppress progress messages");
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg;
    if (!c.config.empty()) {
        cfg = load_config(c.config);
        if (!c.task.empty() && task_from_string(c.task) != cfg.task) {
            throw ConfigError("--task " + c.task + " conflicts with the config task " + to_string(cfg.task));
        }
    } else {
        cfg = default_config(task_from_string(c.task.empty() ? "denoise" : c.task));
    }
    if (c.seed) {
        cfg.master_seed = *c.seed;
    }
    return cfg;
}

Logger logger(const Common& c)
{
    if (c.quiet) {
        return {};
    }
    return [](const std::string& msg) { std::cerr << msg << std::endl; };
}

fs::path run_dir(const Common& c, const ExperimentConfig& cfg)
{
    if (!c.out.empty()) {
        return c.out;
    }
    return output_root() / to_string(cfg.task) / ("run" + std::to_string(c.run));
}

void write_trace(const fs::path& path, const std::vector<double>& trace)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "iteration,objective\n";
    char buf[64];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, trace[i]);
        out << buf;
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Interval neural networks and instability detection for image reconstruction"};
    app.require_subcommand(1);
    app.set_version_flag("--version", code_version());

    // gen-data
    Common gd;
    std::optional<std::size_t> gd_count;
    std::optional<std::size_t> gd_size;
    auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus (tensors plus manifest)");
    add_common(gen, gd, false);
    gen->add_option("--count", gd_count, "Number of images");
    gen->add_option("--size", gd_size, "Image side in pixels");

    // train stages
    Common tr;
    std::optional<std::size_t> tr_epochs;
    auto* train = app.add_subcommand("train", "Train the baseline network");
    add_common(train, tr, true);
    train->add_option("--epochs", tr_epochs, "Baseline epochs");

    Common ti;
    std::optional<std::size_t> ti_epochs;
    std::optional<double> ti_beta;
    std::optional<double> ti_lr;
    auto* train_inn = app.add_subcommand("train-inn", "Fine-tune interval bounds around the baseline");
    add_common(train_inn, ti, true);
    train_inn->add_option("--epochs", ti_epochs, "INN epochs");
    train_inn->add_option("--beta", ti_beta, "Width penalty");
    train_inn->add_option("--lr", ti_lr, "Learning rate");

    Common tp;
    std::optional<std::size_t> tp_epochs;
    auto* train_po = app.add_subcommand("train-probout", "Train the ProbOut network from the baseline");
    add_common(train_po, tp, true);
    train_po->add_option("--epochs", tp_epochs, "ProbOut epochs");

    // attack
    Common at;
    std::string at_ckpt;
    std::optional<double> at_lambda;
    std::optional<std::size_t> at_patch;
    std::optional<std::size_t> at_iters;
    std::optional<std::string> at_opt;
    std::size_t at_samples = 1;
    auto* attack = app.add_subcommand("attack", "Adversarial inputs for test samples against a baseline checkpoint");
    add_common(attack, at, false);
    attack->add_option("--checkpoint", at_ckpt, "Baseline checkpoint")->required();
    attack->add_option("--lambda", at_lambda, "Proximity weight");
    attack->add_option("--patch", at_patch, "Target patch side");
    attack->add_option("--iters", at_iters, "Maximum iterations");
    attack->add_option("--optimizer", at_opt, "lbfgs or projected_gradient");
    attack->add_option("--samples", at_samples, "Number of test samples");

    // ood
    Common od;
    std::optional<std::string> od_mode;
    std::size_t od_samples = 1;
    auto* ood = app.add_subcommand("ood", "Out-of-distribution inputs and masks for test samples");
    add_common(ood, od, false);
    ood->add_option("--mode", od_mode, "saltpepper or silhouette")->check(CLI::IsMember({"saltpepper", "silhouette"}));
    ood->add_option("--samples", od_samples, "Number of test samples");

    // score
    Common sc;
    std::string sc_models;
    std::vector<std::string> sc_experiments{"advdetect", "artdetect"};
    std::optional<std::size_t> sc_samples;
    auto* score = app.add_subcommand("score", "Run AdvDetect/ArtDetect on trained checkpoints");
    add_common(score, sc, true);
    score->add_option("--models", sc_models, "Directory holding the checkpoints (default: the run directory)");
    score->add_option("--experiment", sc_experiments, "advdetect and/or artdetect");
    score->add_option("--samples", sc_samples, "Number of test samples");

    // render
    std::string rd_input;
    std::string rd_out;
    double rd_lo = 0.0;
    double rd_hi = 1.0;
    auto* render = app.add_subcommand("render", "Render a stored tensor as an 8-bit PGM");
    render->add_option("--input", rd_input, "Tensor file")->required();
    render->add_option("--out", rd_out, "Output .pgm")->required();
    render->add_option("--lo", rd_lo, "Window low end");
    render->add_option("--hi", rd_hi, "Window high end");

    // reproduce-table1
    Common rp;
    std::vector<std::string> rp_configs;
    std::optional<std::size_t> rp_runs;
    std::optional<std::size_t> rp_samples;
    auto* repro = app.add_subcommand("reproduce-table1", "Full pipeline on both tasks with repeated runs");
    repro->add_option("--config", rp_configs, "Config per task (default: built-in denoise and ct)");
    repro->add_option("--out", rp.out, "Output directory (default: $INSTAB_OUTPUT_ROOT/table1)");
    repro->add_option("--seed", rp.seed, "Master seed override");
    repro->add_option("--runs", rp_runs, "Runs per task");
    repro->add_option("--samples", rp_samples, "Test samples per task");
    repro->add_flag("-q,--quiet", rp.quiet, "Suppress progress messages");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (gen->parsed()) {
            ExperimentConfig cfg = resolve(gd);
            if (gd_count) {
                cfg.corpus.count = *gd_count;
            }
            if (gd_size) {
                cfg.corpus.image_size = *gd_size;
            }
            const fs::path out = gd.out.empty() ? output_root() / "corpus" / to_string(cfg.task) : fs::path(gd.out);
            write_corpus(cfg.corpus, out);
            std::cout << out.string() << "\n";
        } else if (train->parsed() || train_inn->parsed() || train_po->parsed()) {
            const Common& c = train->parsed() ? tr : (train_inn->parsed() ? ti : tp);
            ExperimentConfig cfg = resolve(c);
            if (tr_epochs) {
                cfg.train.epochs = *tr_epochs;
            }
            if (ti_epochs) {
                cfg.inn.train.epochs = *ti_epochs;
            }
            if (ti_beta) {
                cfg.inn.beta = *ti_beta;
            }
            if (ti_lr) {
                cfg.inn.train.lr = *ti_lr;
            }
            if (tp_epochs) {
                cfg.probout.epochs = *tp_epochs;
            }
            cfg.validate();
            const RunPaths paths(run_dir(c, cfg));
            const CorpusData data = CorpusData::of(cfg);
            StageReport rep;
            if (train->parsed()) {
                rep = train_baseline_stage(cfg, data, c.run, paths, logger(c));
            } else if (train_inn->parsed()) {
                rep = train_inn_stage(cfg, data, c.run, paths, logger(c));
            } else {
                rep = train_probout_stage(cfg, data, c.run, paths, logger(c));
            }
            nlohmann::json extra{{"stage", rep.stage},
                                 {"run", c.run},
                                 {"best_val", rep.best_val},
                                 {"best_epoch", rep.best_epoch},
                                 {"seconds", rep.seconds}};
            if (rep.stage == "baseline") {
                extra["identity_val"] = rep.identity_val;
            }
            nlohmann::json stages = nlohmann::json::object();
            if (std::ifstream prev(paths.dir / "manifest.json"); prev) {
                const auto old = nlohmann::json::parse(prev, nullptr, false);
                if (old.is_object() && old.contains("stages")) {
                    stages = old["stages"];
                }
            }
            stages[rep.stage] = extra;
            write_manifest(paths.dir, cfg, {{"stages", stages}});
            std::cout << rep.stage << " best validation loss " << rep.best_val << " at epoch " << rep.best_epoch
                      << "\n";
        } else if (attack->parsed()) {
            ExperimentConfig cfg = resolve(at);
            if (at_lambda) {
                cfg.attack.lambda = *at_lambda;
            }
            if (at_patch) {
                cfg.attack.patch_size = *at_patch;
            }
            if (at_iters) {
                cfg.attack.max_iterations = *at_iters;
            }
            if (at_opt) {
                cfg.attack.optimizer = attack_optimizer_from_string(*at_opt);
            }
            cfg.test_samples = at_samples;
            cfg.validate();
            if (!fs::exists(at_ckpt)) {
                throw ConfigError("missing checkpoint " + at_ckpt + "; run `instab train` first");
            }
            const auto net = load_network(at_ckpt);
            const fs::path out = at.out.empty() ? output_root() / "attack" / to_string(cfg.task) : fs::path(at.out);
            fs::create_directories(out);
            const auto base = derive_seed(cfg.master_seed, {0xa77ac});
            const auto [b, e] = cfg.corpus.split_range(Split::test);
            for (std::size_t i = 0; i < at_samples && b + i < e; ++i) {
                const Sample s = make_sample(cfg.corpus, b + i);
                AttackConfig ac = cfg.attack;
                ac.seed = derive_seed(base, {i});
                ac.dump_path = out / ("diverged_" + std::to_string(i) + ".bin");
                const Tensor rec = forward(net.spec, net.params, s.input);
                const AttackTarget tgt =
                    cfg.task == Task::ct ? adv_target_ct(rec, ac) : adv_target_denoise(rec, ac);
                const AttackResult res = find_adversarial_input(net.spec, net.params, s.input, tgt.target, ac);
                const std::string stem = "sample" + std::to_string(i);
                save_tensor(out / (stem + "_input.bin"), s.input);
                save_tensor(out / (stem + "_x_adv.bin"), res.x_adv);
                save_tensor(out / (stem + "_target.bin"), tgt.target);
                save_tensor(out / (stem + "_mask.bin"), tgt.mask);
                write_trace(out / (stem + "_trace.csv"), res.trace);
                std::printf("sample %zu: objective %.6g -> %.6g in %zu iterations\n", i, res.initial_objective(),
                            res.final_objective(), res.iterations);
            }
            write_manifest(out, cfg, {{"checkpoint", at_ckpt}, {"samples", at_samples}});
        } else if (ood->parsed()) {
            ExperimentConfig cfg = resolve(od);
            if (od_mode) {
                cfg.ood.mode = ood_mode_from_string(*od_mode);
            }
            cfg.test_samples = od_samples;
            cfg.validate();
            const fs::path out = od.out.empty() ? output_root() / "ood" / to_string(cfg.task) : fs::path(od.out);
            fs::create_directories(out);
            const auto base = derive_seed(cfg.master_seed, {0x00d});
            const auto [b, e] = cfg.corpus.split_range(Split::test);
            for (std::size_t i = 0; i < od_samples && b + i < e; ++i) {
                const Sample s = make_sample(cfg.corpus, b + i);
                OodSample o;
                if (cfg.ood.mode == OodMode::saltpepper) {
                    if (cfg.task != Task::denoise) {
                        throw ConfigError("saltpepper mode needs the denoise task");
                    }
                    o = salt_pepper_half(s.clean, cfg.corpus.noise_model(s.seed),
                                         {cfg.ood.amount, cfg.ood.side, derive_seed(base, {i})});
                } else {
                    auto ins = insert_silhouette(s.clean,
                                                 dove_mask(cfg.corpus.image_size, cfg.ood.area_fraction),
                                                 cfg.ood.intensity, std::nullopt, derive_seed(base, {i}));
                    o = {simulate_input(cfg.corpus, ins.input, s.seed), std::move(ins.mask)};
                }
                const std::string stem = "sample" + std::to_string(i);
                save_tensor(out / (stem + "_input.bin"), s.input);
                save_tensor(out / (stem + "_ood.bin"), o.input);
                save_tensor(out / (stem + "_mask.bin"), o.mask);
            }
            write_manifest(out, cfg, {{"samples", od_samples}});
            std::cout << out.string() << "\n";
        } else if (score->parsed()) {
            ExperimentConfig cfg = resolve(sc);
            if (sc_samples) {
                cfg.test_samples = *sc_samples;
            }
            cfg.validate();
            std::vector<Experiment> exps;
            for (const auto& name : sc_experiments) {
                exps.push_back(experiment_from_string(name));
            }
            const fs::path out = run_dir(sc, cfg);
            const RunPaths paths(sc_models.empty() ? out : fs::path(sc_models));
            const TrainedModels models = load_models(cfg, paths);
            const CorpusData data = CorpusData::of(cfg);
            auto res = run_experiments(cfg, data, sc.run, models, exps, out, logger(sc));
            write_records_csv(out / "records.csv", res.records);
            if (!res.attacks.empty()) {
                write_attacks_csv(out / "attacks.csv", res.attacks);
            }
            auto summary = summary_json(aggregate(res.records));
            if (cfg.has_method(Method::inn)) {
                summary["coverage"][to_string(cfg.task)] = test_coverage(cfg, data, models);
            }
            std::ofstream(out / "summary.json") << summary.dump(2) << "\n";
            write_manifest(out, cfg, {{"run", sc.run}, {"models", paths.dir.string()}});
            std::cout << summary.dump(2) << "\n";
        } else if (render->parsed()) {
            if (!(rd_lo < rd_hi)) {
                throw ConfigError("render window needs lo < hi");
            }
            render_heatmap(load_tensor(rd_input), rd_lo, rd_hi, rd_out);
        } else if (repro->parsed()) {
            std::vector<ExperimentConfig> cfgs;
            if (rp_configs.empty()) {
                cfgs = {default_config(Task::denoise), default_config(Task::ct)};
            } else {
                for (const auto& p : rp_configs) {
                    cfgs.push_back(load_config(p));
                }
            }
            for (auto& cfg : cfgs) {
                if (rp.seed) {
                    cfg.master_seed = *rp.seed;
                }
                if (rp_runs) {
                    cfg.runs = *rp_runs;
                }
                if (rp_samples) {
                    cfg.test_samples = *rp_samples;
                }
            }
            const fs::path out = rp.out.empty() ? output_root() / "table1" : fs::path(rp.out);
            const auto res = reproduce_table1(cfgs, out, logger(rp));
            std::cout << res.summary.dump(2) << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return exit_config;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_other;
    }
    return exit_ok;
}
