#pragma once

#include "instab/config.hpp"
#include "instab/data.hpp"
#include "instab/evaluation.hpp"
#include "instab/interval.hpp"
#include "instab/network.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace instab {

using Logger = std::function<void(const std::string&)>;

/// $INSTAB_OUTPUT_ROOT, or ./instab-out when unset.
std::filesystem::path output_root();

/// Checkpoint and log locations of one training run.
struct RunPaths {
    std::filesystem::path dir;

    explicit RunPaths(std::filesystem::path d) : dir(std::move(d)) {}
    std::filesystem::path baseline() const { return dir / "baseline.ckpt"; }
    std::filesystem::path inn() const { return dir / "inn.ckpt"; }
    std::filesystem::path probout() const { return dir / "probout.ckpt"; }
    std::filesystem::path log(const std::string& stage) const { return dir / (stage + "_log.csv"); }
};

/// Seeds of one run, all derived from ExperimentConfig::run_seed.
struct RunSeeds {
    std::uint64_t init;
    std::uint64_t train;
    std::uint64_t inn;
    std::uint64_t probout;
    std::uint64_t attack;
    std::uint64_t ood;
    std::uint64_t mcdrop;

    static RunSeeds of(const ExperimentConfig& cfg, std::size_t run);
};

struct CorpusData {
    std::vector<Sample> train;
    std::vector<Sample> val;
    /// Only the first cfg.test_samples test samples.
    std::vector<Sample> test;

    static CorpusData of(const ExperimentConfig& cfg);
};

struct StageReport {
    std::string stage;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
    /// Validation MSE of the input itself; only set for the baseline stage.
    double identity_val = 0.0;
    double seconds = 0.0;
};

StageReport train_baseline_stage(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                 const RunPaths& paths, const Logger& log = {});
/// Needs the baseline checkpoint.
StageReport train_inn_stage(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                            const RunPaths& paths, const Logger& log = {});
/// Needs the baseline checkpoint.
StageReport train_probout_stage(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                const RunPaths& paths, const Logger& log = {});

/// Baseline, INN and ProbOut in sequence, each with its checkpoint and per-epoch log.
std::vector<StageReport> run_train(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                   const RunPaths& paths, const Logger& log = {});

struct TrainedModels {
    NetworkSpec spec;
    NetworkParams baseline;
    IntervalParams inn;
    NetworkSpec probout_spec;
    NetworkParams probout;
};

/// Loads the checkpoints required by cfg.methods. A missing file raises
/// ConfigError naming the command that produces it.
TrainedModels load_models(const ExperimentConfig& cfg, const RunPaths& paths);

enum class Experiment { advdetect, artdetect };

std::string to_string(Experiment e);
Experiment experiment_from_string(const std::string& name);

struct AttackStat {
    std::string task;
    std::size_t run = 0;
    std::size_t sample_id = 0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    std::size_t iterations = 0;
    double psnr = 0.0;
    bool feasible = true;

    double ratio() const { return initial_objective > 0.0 ? final_objective / initial_objective : 0.0; }
};

struct ExperimentOutput {
    std::vector<ScoreRecord> records;
    std::vector<AttackStat> attacks;
    /// Wall time spent inside the attack optimiser.
    double attack_seconds = 0.0;
};

/// Uncertainty heatmap of one method for one input.
Tensor uncertainty_map(const ExperimentConfig& cfg, const TrainedModels& m, Method method, const Tensor& input,
                       std::uint64_t mcdrop_seed);

/// Scores the test samples for every configured method and experiment and
/// renders the first cfg.panels samples into dir/<experiment>/.
ExperimentOutput run_experiments(const ExperimentConfig& cfg, const CorpusData& data, std::size_t run,
                                 const TrainedModels& models, const std::vector<Experiment>& experiments,
                                 const std::filesystem::path& dir, const Logger& log = {});

/// Interval coverage of the clean targets over the test samples.
double test_coverage(const ExperimentConfig& cfg, const CorpusData& data, const TrainedModels& models);

void write_attacks_csv(const std::filesystem::path& path, const std::vector<AttackStat>& stats);
std::vector<AttackStat> read_attacks_csv(const std::filesystem::path& path);

/// Writes manifest.json with the resolved config(s), code version and extra fields.
void write_manifest(const std::filesystem::path& dir, const nlohmann::json& configs, const nlohmann::json& extra);

struct Table1Result {
    std::vector<ScoreRecord> records;
    std::vector<AttackStat> attacks;
    nlohmann::json summary;
};

/// Full pipeline for every config: cfg.runs retrainings, both experiments,
/// records.csv, attacks.csv, summary.json and manifest.json under `out`.
/// summary.json depends only on the configs, never on timing.
Table1Result reproduce_table1(const std::vector<ExperimentConfig>& configs, const std::filesystem::path& out,
                              const Logger& log = {});

} // namespace instab
