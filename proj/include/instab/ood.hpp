#pragma once

#include "instab/radon.hpp"
#include "instab/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

namespace instab {

enum class HalfSide { left, right, random };

std::string to_string(HalfSide side);
HalfSide half_side_from_string(const std::string& name);

struct SaltPepperConfig {
    double amount = 0.1;
    HalfSide side = HalfSide::random;
    std::uint64_t seed = 0;
};

struct OodSample {
    Tensor input;
    Tensor mask;
};

/// Noisy input whose Gaussian noise is replaced by salt-and-pepper noise on
/// one half. Off the half the input equals clip(clean + noise) for `noise`,
/// so it matches the in-distribution input drawn with the same seed.
OodSample salt_pepper_half(const Tensor& clean, const NoiseModel& noise, const SaltPepperConfig& cfg);

/// Built-in bird silhouette, nearest-neighbour scaled to roughly
/// `area_fraction` of an image_side x image_side image. Shape [h, w].
Tensor dove_mask(std::size_t image_side, double area_fraction = 0.03);

struct Placement {
    std::size_t row = 0;
    std::size_t col = 0;
};

/// Sets the pixels under `shape` (binary [h, w]) to `intensity`. Without a
/// position the top-left corner is drawn uniformly from valid placements.
OodSample insert_silhouette(const Tensor& clean, const Tensor& shape, double intensity,
                            std::optional<Placement> position, std::uint64_t seed);

} // namespace instab
