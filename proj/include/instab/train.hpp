#pragma once

#include "instab/data.hpp"
#include "instab/interval.hpp"
#include "instab/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace instab {

struct TrainConfig {
    std::size_t epochs = 20;
    double lr = 1e-3;
    std::size_t batch_size = 8;
    /// Side of the random training crops; 0 trains on whole images.
    std::size_t patch_size = 32;
    std::size_t patches_per_image = 1;
    std::uint64_t seed = 0;
    /// Written with the last good parameters if training diverges.
    std::filesystem::path divergence_checkpoint;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    NetworkParams params;
    /// Entry 0 is the evaluation before any update.
    std::vector<EpochLog> log;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
};

/// Copy of a fully convolutional spec accepting a different input shape.
NetworkSpec with_input_shape(const NetworkSpec& spec, Tensor::Shape shape);

/// Random aligned crops of (input, clean) pairs; one list per epoch, seeded by (seed, epoch).
std::vector<TrainingPair> epoch_crops(const std::vector<Sample>& samples, std::size_t patch_size,
                                      std::size_t patches_per_image, std::uint64_t seed, std::size_t epoch,
                                      std::size_t multiple_of = 1);

/// Mean squared error of the network (dropout off) over whole samples.
double validation_mse(const NetworkSpec& spec, const NetworkParams& params, const std::vector<Sample>& samples);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on the mean squared error with dropout active, keeping the parameters
/// with the lowest validation loss seen so far.
TrainResult train_baseline(const NetworkSpec& spec, NetworkParams init, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean per-pixel ProbOut loss over whole samples.
double validation_probout(const NetworkSpec& spec, const NetworkParams& params, const std::vector<Sample>& samples);

/// ProbOut training from a baseline initialisation, early-best on the validation ProbOut loss.
TrainResult train_probout(const NetworkSpec& spec, NetworkParams init, const std::vector<Sample>& train,
                          const std::vector<Sample>& val, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct InnTrainConfig {
    double beta = 1e-3;
    std::size_t interval_layers = 3;
    TrainConfig train;

    bool operator==(const InnTrainConfig&) const = default;
};

struct InnTrainResult {
    IntervalParams params;
    std::vector<EpochLog> log;
};

/// Fraction of target pixels inside the clipped interval over whole samples.
double interval_coverage(const NetworkSpec& spec, const IntervalParams& ip, const std::vector<Sample>& samples);

/// Fine-tunes interval bounds around a frozen central network. The logged
/// validation value is the mean INN loss per pixel.
InnTrainResult train_inn(const NetworkSpec& spec, const NetworkParams& central, const std::vector<Sample>& train,
                         const std::vector<Sample>& val, const InnTrainConfig& cfg,
                         const EpochCallback& on_epoch = {});

} // namespace instab
