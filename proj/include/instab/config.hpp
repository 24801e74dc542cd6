#pragma once

#include "instab/attacks.hpp"
#include "instab/data.hpp"
#include "instab/network.hpp"
#include "instab/ood.hpp"
#include "instab/train.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace instab {

inline constexpr int config_version = 1;

enum class Method { inn, mcdrop, probout };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct ArchitectureConfig {
    /// "denoiser" (residual conv stack) or "unet".
    std::string kind = "denoiser";
    std::size_t conv_layers = 6;
    std::size_t channels = 16;
    double dropout_rate = 0.05;

    NetworkSpec build(std::size_t image_size) const;
    bool operator==(const ArchitectureConfig&) const = default;
};

struct McDropSettings {
    std::size_t T = 16;
    std::vector<double> rates;

    bool operator==(const McDropSettings&) const = default;
};

enum class OodMode { saltpepper, silhouette };

std::string to_string(OodMode m);
OodMode ood_mode_from_string(const std::string& name);

struct OodSettings {
    OodMode mode = OodMode::saltpepper;
    double amount = 0.1;
    HalfSide side = HalfSide::random;
    double intensity = 1.0;
    double area_fraction = 0.03;

    bool operator==(const OodSettings&) const = default;
};

struct ExperimentConfig {
    int version = config_version;
    Task task = Task::denoise;
    std::vector<Method> methods{Method::inn, Method::mcdrop, Method::probout};
    CorpusSpec corpus;
    ArchitectureConfig architecture;
    TrainConfig train;
    InnTrainConfig inn;
    McDropSettings mcdrop;
    TrainConfig probout;
    AttackConfig attack;
    OodSettings ood;
    std::uint64_t master_seed = 2024;
    std::size_t runs = 3;
    std::size_t test_samples = 30;
    /// Test samples rendered as figure panels per run.
    std::size_t panels = 3;

    /// Checks ranges and cross-field consistency; throws ConfigError.
    void validate() const;
    NetworkSpec network_spec() const { return architecture.build(corpus.image_size); }
    std::uint64_t run_seed(std::size_t run) const;
    bool has_method(Method m) const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Desk-scale defaults for a task.
ExperimentConfig default_config(Task task);

/// Serialises every field.
void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Starts from default_config(task) and applies the given fields; unknown keys are errors.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Version string embedded in manifests.
std::string code_version();

} // namespace instab
