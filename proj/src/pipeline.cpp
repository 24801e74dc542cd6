#include "instab/pipeline.hpp"

#include "instab/attacks.hpp"
#include "instab/checkpoint.hpp"
#include "instab/errors.hpp"
#include "instab/ood.hpp"
#include "instab/rng.hpp"
#include "instab/train.hpp"
#include "instab/uq.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace instab {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void say(const Logger& log, const std::string& msg)
{
    if (log) {
        log(msg);
    }
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_log(const fs::path& path, const std::vector<EpochLog>& entries)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
        out << buf;
    }
}

void require_checkpoint(const fs::path& path, const std::string& command)
{
    if (!fs::exists(path)) {
        throw ConfigError("missing checkpoint " + path.string() + "; run `instab " + command +
                          "` with the same config and --out first");
    }
}

NetworkParams load_baseline(const ExperimentConfig& cfg, const RunPaths& paths)
{
    require_checkpoint(paths.baseline(), "train");
    auto loaded = load_network(paths.baseline());
    if (!(loaded.spec == cfg.network_spec())) {
        throw ConfigError("checkpoint " + paths.baseline().string() + " was trained with a different architecture");
    }
    return std::move(loaded.params);
}

std::vector<Method> ordered_methods(const ExperimentConfig& cfg)
{
    std::vector<Method> out;
    for (auto m : {Method::inn, Method::mcdrop, Method::probout}) {
        if (cfg.has_method(m)) {
            out.push_back(m);
        }
    }
    return out;
}

double upper_window(const Tensor& a, const Tensor& b)
{
    const double hi = std::max(max_value(a), max_value(b));
    return hi > 0.0 ? hi : 1.0;
}

} // namespace

fs::path output_root()
{
    if (const char* env = std::getenv("INSTAB_OUTPUT_ROOT"); env && *env) {
        return env;
    }
    return "instab-out";
}

RunSeeds RunSeeds::of(const ExperimentConfig& cfg, std::size_t run)
{
    const auto s = cfg.run_seed(run);
    return {derive_seed(s, {1}), derive_seed(s, {2}), derive_seed(s, {3}), derive_seed(s, {4}),
            derive_seed(s, {5}), derive_seed(s, {6}), derive_seed(s, {7})};
}

CorpusData CorpusData::of(const ExperimentConfig& cfg)
{
    CorpusData d;
    d.train = make_split(cfg.corpus, Split::train);
    d.val = make_split(cfg.corpus, Split::val);
    const auto [b, e] = cfg.corpus.split_range(Split::test);
    for (std::size_t i = b; i < std::min(e, b + cfg.test_samples); ++i) {
        d.test.push_back(make_sample(cfg.corpus, i));
    }
    return d;
}

StageReport train_baseline_stage(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                 const RunPaths& paths, const Logger& log)
{
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(paths.dir);
    const auto seeds = RunSeeds::of(cfg, run);
    const NetworkSpec spec = cfg.network_spec();
    TrainConfig tc = cfg.train;
    tc.seed = seeds.train;
    tc.divergence_checkpoint = paths.dir / "baseline.diverged.ckpt";
    auto res = train_baseline(spec, init_params(spec, seeds.init), data.train, data.val, tc, [&](const EpochLog& e) {
        say(log, "baseline epoch " + std::to_string(e.epoch) + " val " + fmt("%.6f", e.val_loss));
    });
    StageReport rep{"baseline", res.best_val, res.best_epoch, 0.0, 0.0};
    for (const auto& s : data.val) {
        rep.identity_val += mse(s.input, s.clean);
    }
    rep.identity_val /= static_cast<double>(data.val.size());
    save_network(paths.baseline(), spec, res.params,
                 {{"stage", "baseline"}, {"run", run}, {"best_val", res.best_val}, {"best_epoch", res.best_epoch}});
    write_log(paths.log("baseline"), res.log);
    rep.seconds = seconds_since(t0);
    return rep;
}

StageReport train_inn_stage(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                            const RunPaths& paths, const Logger& log)
{
    const auto t0 = std::chrono::steady_clock::now();
    const NetworkParams central = load_baseline(cfg, paths);
    const NetworkSpec spec = cfg.network_spec();
    InnTrainConfig ic = cfg.inn;
    ic.train.seed = RunSeeds::of(cfg, run).inn;
    auto res = train_inn(spec, central, data.train, data.val, ic, [&](const EpochLog& e) {
        say(log, "inn epoch " + std::to_string(e.epoch) + " val " + fmt("%.6g", e.val_loss));
    });
    save_interval_network(paths.inn(), spec, res.params);
    write_log(paths.log("inn"), res.log);
    StageReport rep{"inn", res.log.back().val_loss, res.log.back().epoch, 0.0, 0.0};
    rep.seconds = seconds_since(t0);
    return rep;
}

StageReport train_probout_stage(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                const RunPaths& paths, const Logger& log)
{
    const auto t0 = std::chrono::steady_clock::now();
    const NetworkParams baseline = load_baseline(cfg, paths);
    const NetworkSpec spec = cfg.network_spec();
    const NetworkSpec ps = make_probout_spec(spec);
    TrainConfig tc = cfg.probout;
    tc.seed = RunSeeds::of(cfg, run).probout;
    tc.divergence_checkpoint = paths.dir / "probout.diverged.ckpt";
    auto res = train_probout(ps, init_probout_params(spec, baseline), data.train, data.val, tc,
                             [&](const EpochLog& e) {
                                 say(log, "probout epoch " + std::to_string(e.epoch) + " val " +
                                              fmt("%.6g", e.val_loss));
                             });
    save_network(paths.probout(), ps, res.params,
                 {{"stage", "probout"}, {"run", run}, {"best_val", res.best_val}, {"best_epoch", res.best_epoch}});
    write_log(paths.log("probout"), res.log);
    StageReport rep{"probout", res.best_val, res.best_epoch, 0.0, 0.0};
    rep.seconds = seconds_since(t0);
    return rep;
}

std::vector<StageReport> run_train(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                   const RunPaths& paths, const Logger& log)
{
    std::vector<StageReport> reps;
    reps.push_back(train_baseline_stage(cfg, data, run, paths, log));
    if (cfg.has_method(Method::inn)) {
        reps.push_back(train_inn_stage(cfg, data, run, paths, log));
    }
    if (cfg.has_method(Method::probout)) {
        reps.push_back(train_probout_stage(cfg, data, run, paths, log));
    }
    return reps;
}

TrainedModels load_models(const ExperimentConfig& cfg, const RunPaths& paths)
{
    TrainedModels m;
    m.spec = cfg.network_spec();
    m.baseline = load_baseline(cfg, paths);
    if (cfg.has_method(Method::inn)) {
        require_checkpoint(paths.inn(), "train-inn");
        auto [spec, ip] = load_interval_network(paths.inn());
        if (!(spec == m.spec)) {
            throw ConfigError("checkpoint " + paths.inn().string() + " was trained with a different architecture");
        }
        if (!(ip.central == m.baseline)) {
            throw ConfigError("checkpoint " + paths.inn().string() +
                              " does not belong to the current baseline; rerun `instab train-inn`");
        }
        m.inn = std::move(ip);
    }
    if (cfg.has_method(Method::probout)) {
        require_checkpoint(paths.probout(), "train-probout");
        auto loaded = load_network(paths.probout());
        m.probout_spec = make_probout_spec(m.spec);
        if (!(loaded.spec == m.probout_spec)) {
            throw ConfigError("checkpoint " + paths.probout().string() + " was trained with a different architecture");
        }
        m.probout = std::move(loaded.params);
    }
    return m;
}

std::string to_string(Experiment e)
{
    return e == Experiment::advdetect ? "advdetect" : "artdetect";
}

Experiment experiment_from_string(const std::string& name)
{
    if (name == "advdetect") {
        return Experiment::advdetect;
    }
    if (name == "artdetect") {
        return Experiment::artdetect;
    }
    throw ConfigError("unknown experiment '" + name + "' (expected advdetect or artdetect)");
}

Tensor uncertainty_map(const ExperimentConfig& cfg, const TrainedModels& m, Method method, const Tensor& input,
                       std::uint64_t mcdrop_seed)
{
    switch (method) {
    case Method::inn:
        return inn_uncertainty(inn_forward(m.spec, m.inn, input));
    case Method::mcdrop:
        return mcdrop_uncertainty(m.spec, m.baseline, input, {cfg.mcdrop.T, cfg.mcdrop.rates, mcdrop_seed}).heatmap;
    case Method::probout:
        return probout_forward(m.probout_spec, m.probout, input).variance;
    }
    throw ContractError("uncertainty_map: unknown method");
}

ExperimentOutput run_experiments(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                 const TrainedModels& models, const std::vector<Experiment>& experiments,
                                 const fs::path& dir, const Logger& log)
{
    const auto seeds = RunSeeds::of(cfg, run);
    const auto methods = ordered_methods(cfg);
    const std::string task = to_string(cfg.task);
    const bool ct = cfg.task == Task::ct;
    for (auto e : experiments) {
        fs::create_directories(dir / to_string(e));
    }
    Tensor dove;
    if (ct) {
        dove = dove_mask(cfg.corpus.image_size, cfg.ood.area_fraction);
    }

    ExperimentOutput out;
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const Sample& s = data.test[i];
        const auto t0 = std::chrono::steady_clock::now();
        const std::uint64_t mc_seed = derive_seed(seeds.mcdrop, {i});
        const bool panel = i < cfg.panels;
        const Tensor rec = forward(models.spec, models.baseline, s.input);
        std::map<Method, Tensor> u_clean;
        for (auto m : methods) {
            u_clean[m] = uncertainty_map(cfg, models, m, s.input, mc_seed);
        }

        for (auto e : experiments) {
            const fs::path pdir = dir / to_string(e);
            if (e == Experiment::advdetect) {
                AttackConfig ac = cfg.attack;
                ac.seed = derive_seed(seeds.attack, {i});
                ac.dump_path = pdir / ("diverged_" + std::to_string(i) + ".tensor");
                const AttackTarget tgt = ct ? adv_target_ct(rec, ac) : adv_target_denoise(rec, ac);
                const auto t_att = std::chrono::steady_clock::now();
                const AttackResult res = find_adversarial_input(models.spec, models.baseline, s.input, tgt.target, ac);
                out.attack_seconds += seconds_since(t_att);
                const Tensor rec_adv = forward(models.spec, models.baseline, res.x_adv);
                const Tensor drec = abs(rec - rec_adv);
                AttackStat st{task, run, i, res.initial_objective(), res.final_objective(), res.iterations,
                              psnr(res.x_adv, s.input), min_value(res.x_adv) >= 0.0 && max_value(res.x_adv) <= 1.0};
                out.attacks.push_back(st);
                for (auto m : methods) {
                    const Tensor u_adv = uncertainty_map(cfg, models, m, res.x_adv, mc_seed);
                    const Tensor du = abs(u_clean[m] - u_adv);
                    out.records.push_back(make_record(to_string(m), task, "advdetect", run, i, du, drec));
                    if (panel) {
                        render_panels({{s.input, 0.0, 1.0},
                                       {res.x_adv, 0.0, 1.0},
                                       {rec_adv, 0.0, 1.0},
                                       {u_adv, 0.0, upper_window(u_clean[m], u_adv)},
                                       {drec, 0.0, max_value(drec) > 0.0 ? max_value(drec) : 1.0}},
                                      pdir / ("sample" + std::to_string(i) + "_" + to_string(m) + ".pgm"));
                    }
                }
                say(log, task + " run " + std::to_string(run) + " advdetect sample " + std::to_string(i) +
                             ": ratio " + fmt("%.3f", st.ratio()) + ", " + std::to_string(st.iterations) +
                             " iterations, psnr " + fmt("%.1f", st.psnr));
            } else {
                Tensor x_ood;
                Tensor mask;
                if (ct) {
                    auto ins = insert_silhouette(s.clean, dove, cfg.ood.intensity, std::nullopt,
                                                 derive_seed(seeds.ood, {i}));
                    x_ood = simulate_input(cfg.corpus, ins.input, s.seed);
                    mask = std::move(ins.mask);
                } else {
                    SaltPepperConfig sp{cfg.ood.amount, cfg.ood.side, derive_seed(seeds.ood, {i})};
                    auto ood = salt_pepper_half(s.clean, cfg.corpus.noise_model(s.seed), sp);
                    x_ood = std::move(ood.input);
                    mask = std::move(ood.mask);
                }
                const Tensor rec_ood = panel ? forward(models.spec, models.baseline, x_ood) : Tensor{};
                for (auto m : methods) {
                    const Tensor u_ood = uncertainty_map(cfg, models, m, x_ood, mc_seed);
                    const Tensor du = abs(u_clean[m] - u_ood);
                    out.records.push_back(make_record(to_string(m), task, "artdetect", run, i, du, mask));
                    if (panel) {
                        render_panels({{s.input, 0.0, 1.0},
                                       {x_ood, 0.0, 1.0},
                                       {rec_ood, 0.0, 1.0},
                                       {u_ood, 0.0, upper_window(u_clean[m], u_ood)},
                                       {du, 0.0, max_value(du) > 0.0 ? max_value(du) : 1.0},
                                       {mask, 0.0, 1.0}},
                                      pdir / ("sample" + std::to_string(i) + "_" + to_string(m) + ".pgm"));
                    }
                }
            }
        }
        say(log, task + " run " + std::to_string(run) + " sample " + std::to_string(i) + " scored in " +
                     fmt("%.1f", seconds_since(t0)) + " s");
    }
    return out;
}

double test_coverage(const ExperimentConfig& cfg, const CorpusData& data, const TrainedModels& models)
{
    (void)cfg;
    return interval_coverage(models.spec, models.inn, data.test);
}

void write_attacks_csv(const fs::path& path, const std::vector<AttackStat>& stats)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "task,run,sample_id,initial_objective,final_objective,ratio,iterations,psnr,feasible\n";
    char buf[256];
    for (const auto& s : stats) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.17g,%.17g,%.17g,%zu,%.17g,%d\n", s.task.c_str(), s.run,
                      s.sample_id, s.initial_objective, s.final_objective, s.ratio(), s.iterations, s.psnr,
                      s.feasible ? 1 : 0);
        out << buf;
    }
}

std::vector<AttackStat> read_attacks_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::string line;
    std::getline(in, line);
    std::vector<AttackStat> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string tok; std::getline(ss, tok, ',');) {
            f.push_back(tok);
        }
        if (f.size() != 9) {
            throw IoError("malformed attacks row in " + path.string() + ": " + line);
        }
        AttackStat s;
        s.task = f[0];
        s.run = std::stoul(f[1]);
        s.sample_id = std::stoul(f[2]);
        s.initial_objective = std::stod(f[3]);
        s.final_objective = std::stod(f[4]);
        s.iterations = std::stoul(f[6]);
        s.psnr = std::stod(f[7]);
        s.feasible = f[8] == "1";
        out.push_back(s);
    }
    return out;
}

void write_manifest(const fs::path& dir, const nlohmann::json& configs, const nlohmann::json& extra)
{
    fs::create_directories(dir);
    nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
    j["code_version"] = code_version();
    j["config"] = configs;
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw IoError("cannot write " + (dir / "manifest.json").string());
    }
    out << j.dump(2) << "\n";
}

namespace {

nlohmann::json attack_summary(const std::vector<AttackStat>& stats)
{
    std::vector<double> ratios;
    std::size_t efficient = 0;
    std::size_t close = 0;
    std::size_t feasible = 0;
    double iters = 0.0;
    for (const auto& s : stats) {
        ratios.push_back(s.ratio());
        efficient += s.ratio() <= 0.2 ? 1 : 0;
        close += s.psnr > 30.0 ? 1 : 0;
        feasible += s.feasible ? 1 : 0;
        iters += static_cast<double>(s.iterations);
    }
    std::sort(ratios.begin(), ratios.end());
    const double n = static_cast<double>(stats.size());
    nlohmann::json j;
    j["samples"] = stats.size();
    if (!stats.empty()) {
        j["median_ratio"] = ratios[ratios.size() / 2];
        j["fraction_ratio_le_0.2"] = static_cast<double>(efficient) / n;
        j["fraction_psnr_gt_30"] = static_cast<double>(close) / n;
        j["fraction_feasible"] = static_cast<double>(feasible) / n;
        j["mean_iterations"] = iters / n;
    }
    return j;
}

} // namespace

Table1Result reproduce_table1(const std::vector<ExperimentConfig>& configs, const fs::path& out, const Logger& log)
{
    const auto t_all = std::chrono::steady_clock::now();
    fs::create_directories(out);
    Table1Result result;
    nlohmann::json coverage = nlohmann::json::object();
    nlohmann::json training = nlohmann::json::object();
    nlohmann::json attacks = nlohmann::json::object();
    nlohmann::json timings = nlohmann::json::object();
    nlohmann::json resolved = nlohmann::json::array();

    for (const auto& cfg : configs) {
        cfg.validate();
        resolved.push_back(cfg);
        const std::string task = to_string(cfg.task);
        const auto t_data = std::chrono::steady_clock::now();
        const CorpusData data = CorpusData::of(cfg);
        timings[task]["corpus_seconds"] = seconds_since(t_data);
        std::vector<double> cov;
        std::vector<AttackStat> task_attacks;
        for (std::size_t run = 0; run < cfg.runs; ++run) {
            const RunPaths paths(out / task / ("run" + std::to_string(run)));
            say(log, task + " run " + std::to_string(run) + ": training");
            const auto reps = run_train(cfg, data, run, paths, log);
            nlohmann::json tr;
            nlohmann::json tt;
            for (const auto& r : reps) {
                tr[r.stage] = {{"best_val", r.best_val}, {"best_epoch", r.best_epoch}};
                if (r.stage == "baseline") {
                    tr[r.stage]["identity_val"] = r.identity_val;
                }
                tt[r.stage + "_seconds"] = r.seconds;
            }
            training[task].push_back(tr);

            const auto t_exp = std::chrono::steady_clock::now();
            const TrainedModels models = load_models(cfg, paths);
            if (cfg.has_method(Method::inn)) {
                cov.push_back(test_coverage(cfg, data, models));
                say(log, task + " run " + std::to_string(run) + ": test coverage " + fmt("%.4f", cov.back()));
            }
            auto exp = run_experiments(cfg, data, run, models, {Experiment::advdetect, Experiment::artdetect},
                                       paths.dir, log);
            tt["experiments_seconds"] = seconds_since(t_exp);
            tt["attack_seconds"] = exp.attack_seconds;
            timings[task]["runs"].push_back(tt);
            write_manifest(paths.dir, cfg, {{"run", run}, {"run_seed", cfg.run_seed(run)}, {"timings", tt}});
            result.records.insert(result.records.end(), exp.records.begin(), exp.records.end());
            task_attacks.insert(task_attacks.end(), exp.attacks.begin(), exp.attacks.end());
        }
        if (!cov.empty()) {
            coverage[task] = {{"per_run", cov},
                              {"min", *std::min_element(cov.begin(), cov.end())},
                              {"mean", std::accumulate(cov.begin(), cov.end(), 0.0) / static_cast<double>(cov.size())}};
        }
        attacks[task] = attack_summary(task_attacks);
        result.attacks.insert(result.attacks.end(), task_attacks.begin(), task_attacks.end());
    }

    write_records_csv(out / "records.csv", result.records);
    write_attacks_csv(out / "attacks.csv", result.attacks);
    result.summary = summary_json(aggregate(result.records));
    result.summary["coverage"] = coverage;
    result.summary["attacks"] = attacks;
    result.summary["training"] = training;
    result.summary["code_version"] = code_version();
    {
        std::ofstream s(out / "summary.json");
        if (!s) {
            throw IoError("cannot write " + (out / "summary.json").string());
        }
        s << result.summary.dump(2) << "\n";
    }
    timings["total_seconds"] = seconds_since(t_all);
    write_manifest(out, resolved, {{"timings", timings}});
    return result;
}

} // namespace instab
