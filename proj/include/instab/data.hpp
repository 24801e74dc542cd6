#pragma once

#include "instab/phantom.hpp"
#include "instab/radon.hpp"
#include "instab/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace instab {

enum class Task { denoise, ct };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

/// Fixed affine map from FBP intensities onto [0,1], followed by clipping.
struct CtScaling {
    double lo = -0.5;
    double hi = 1.5;

    bool operator==(const CtScaling&) const = default;
};

/// Noisy denoising input: clean + Gaussian noise, clipped to [0,1].
Tensor denoise_input(const Tensor& clean, const NoiseModel& noise);

/// Limited-angle CT input: rescaled FBP of the noiseless sinogram.
Tensor ct_input(const Tensor& clean, const RadonGeometry& geom, const CtScaling& scaling);

struct Sample {
    std::uint64_t seed = 0;
    Tensor clean;
    Tensor input;
};

enum class Split { train, val, test };

std::string to_string(Split split);

/// Deterministic synthetic corpus split 8/1/1 into contiguous seed blocks.
struct CorpusSpec {
    Task task = Task::denoise;
    std::size_t image_size = 64;
    std::size_t count = 400;
    std::uint64_t seed = 0;
    double noise_sigma = 25.0 / 255.0;
    double wedge_start_deg = 75.0;
    double wedge_end_deg = 105.0;
    double angle_step_deg = 1.0;
    CtScaling scaling;

    PhantomKind phantom_kind() const;
    RadonGeometry geometry() const;
    NoiseModel noise_model(std::uint64_t sample_seed) const;
    /// Sample indices belonging to `split`.
    std::pair<std::size_t, std::size_t> split_range(Split split) const;
    std::uint64_t sample_seed(std::size_t index) const;
    void validate() const;
    bool operator==(const CorpusSpec&) const = default;
};

void to_json(nlohmann::json& j, const CorpusSpec& c);
void from_json(const nlohmann::json& j, CorpusSpec& c);

/// Clean image and network input for sample `index`.
Sample make_sample(const CorpusSpec& corpus, std::size_t index);

/// Network input for an arbitrary clean image under the corpus pipeline.
Tensor simulate_input(const CorpusSpec& corpus, const Tensor& clean, std::uint64_t sample_seed);

std::vector<Sample> make_split(const CorpusSpec& corpus, Split split);

/// Writes clean/input tensors plus a JSON manifest (file, seed, split, kind).
void write_corpus(const CorpusSpec& corpus, const std::filesystem::path& dir);

} // namespace instab
