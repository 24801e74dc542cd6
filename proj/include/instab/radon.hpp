#pragma once

#include "instab/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <vector>

namespace instab {

/// Parallel-beam geometry on an N x N pixel grid with unit pixel spacing.
/// Detector spacing is one pixel and detector (D-1)/2 passes through the
/// image centre. Angle theta measures the ray normal from the x-axis.
struct RadonGeometry {
    std::size_t image_size = 0;
    std::vector<double> angles_deg;
    std::size_t num_detectors = 0;
    double angle_step_deg = 1.0;
    /// Removed range [wedge_start, wedge_end); equal values mean no wedge.
    double wedge_start_deg = 0.0;
    double wedge_end_deg = 0.0;

    /// num_angles equispaced angles on [0, 180).
    static RadonGeometry full(std::size_t image_size, std::size_t num_angles = 180);
    /// Angles on [0, 180) at `step` degrees, minus [wedge_start, wedge_end).
    static RadonGeometry limited(std::size_t image_size, double wedge_start = 75.0, double wedge_end = 105.0,
                                 double step = 1.0);
    static std::size_t default_detectors(std::size_t image_size);

    std::size_t num_angles() const noexcept { return angles_deg.size(); }
    double missing_wedge_deg() const noexcept { return wedge_end_deg - wedge_start_deg; }
    Tensor::Shape sinogram_shape() const { return {num_angles(), num_detectors}; }
    Tensor::Shape image_shape() const { return {1, image_size, image_size}; }
    void validate() const;

    bool operator==(const RadonGeometry&) const = default;
};

void to_json(nlohmann::json& j, const RadonGeometry& g);
void from_json(const nlohmann::json& j, RadonGeometry& g);

/// Line integrals along each ray with linear interpolation between pixels.
/// Accepts [N,N] or [1,N,N]; returns [angles, detectors] line integrals in pixel units.
Tensor radon(const Tensor& image, const RadonGeometry& geom);

/// Exact transpose of radon(); returns [1,N,N].
Tensor backproject(const Tensor& sinogram, const RadonGeometry& geom);

/// Band-limited ramp filter applied per projection in the frequency domain.
Tensor ramp_filter(const Tensor& sinogram);

/// Filtered backprojection, weighted by the angular step in radians; returns [1,N,N].
Tensor fbp(const Tensor& sinogram, const RadonGeometry& geom);

struct NoiseModel {
    double sigma = 25.0 / 255.0;
    std::uint64_t seed = 0;
};

/// Additive white Gaussian noise. The result is not clipped.
Tensor add_noise(const Tensor& image, const NoiseModel& model);

} // namespace instab
