#pragma once

#include "instab/network.hpp"
#include "instab/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace instab {

enum class AttackOptimizer { lbfgs, projected_gradient };

std::string to_string(AttackOptimizer opt);
AttackOptimizer attack_optimizer_from_string(const std::string& name);

struct AttackConfig {
    double lambda = 0.5;
    std::size_t max_iterations = 500;
    /// Stop once the objective drops by less than this fraction over `window` iterations.
    double tolerance = 1e-7;
    std::size_t window = 10;
    std::size_t memory = 10;
    AttackOptimizer optimizer = AttackOptimizer::lbfgs;
    std::size_t patch_size = 18;
    /// Noise added inside the denoising target patch.
    double noise_sigma = 25.0 / 255.0;
    std::uint64_t seed = 0;
    /// Where the last iterate is written if the objective turns non-finite.
    std::filesystem::path dump_path;

    void validate() const;
    bool operator==(const AttackConfig&) const = default;
};

/// round(50/512 * side) for CT, round(50/181 * side) for denoising.
std::size_t scaled_patch_size(std::size_t image_side, bool ct);

struct AttackTarget {
    Tensor target;
    Tensor mask;
};

/// Gaussian noise (sigma = cfg.noise_sigma) inside a random square patch, clipped to [0,1].
AttackTarget adv_target_denoise(const Tensor& x_rec, const AttackConfig& cfg);

/// Subtracts 1.5 * mean(x_rec) inside a random square; no clipping.
AttackTarget adv_target_ct(const Tensor& x_rec, const AttackConfig& cfg);

struct AttackResult {
    Tensor x_adv;
    /// Objective at the start point followed by every accepted iterate.
    std::vector<double> trace;
    std::size_t iterations = 0;
    bool converged = false;

    double initial_objective() const { return trace.front(); }
    double final_objective() const { return trace.back(); }
};

/// ||net(x) - target||^2 + lambda ||x - x_tilde||^2 and its gradient.
double attack_objective(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x,
                        const Tensor& x_tilde, const Tensor& target, double lambda, Tensor* gradient = nullptr);

/// Minimises attack_objective over the box [0,1]^n starting from x_tilde.
/// The network runs without dropout.
AttackResult find_adversarial_input(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x_tilde,
                                    const Tensor& target, const AttackConfig& cfg);

} // namespace instab
