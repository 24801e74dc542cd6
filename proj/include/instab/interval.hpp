#pragma once

#include "instab/autodiff.hpp"
#include "instab/network.hpp"
#include "instab/optim.hpp"
#include "instab/tensor.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace instab {

/// Interval-valued parameters around a frozen central network.
///
/// Only the last `interval_layers` affine layers carry intervals; earlier
/// layers keep lower == central == upper and run the plain forward pass.
struct IntervalParams {
    NetworkParams lower;
    NetworkParams central;
    NetworkParams upper;
    std::size_t interval_layers = 0;

    bool operator==(const IntervalParams&) const = default;
};

struct IntervalPrediction {
    Tensor central;
    Tensor lower;
    Tensor upper;
};

/// Zero-width intervals around `central` on the last `interval_layers` affine layers.
IntervalParams make_interval_params(const NetworkSpec& spec, const NetworkParams& central,
                                    std::size_t interval_layers);

/// Layer index at which interval propagation starts. The layer must be
/// affine and its input must come from a ReLU or the network input, so the
/// incoming activation is non-negative.
std::size_t interval_entry_layer(const NetworkSpec& spec, std::size_t interval_layers);

/// Throws ContractError unless lower <= central <= upper elementwise and
/// the non-interval prefix is degenerate.
void check_interval_params(const NetworkSpec& spec, const IntervalParams& ip);

/// Clips lower to min(lower, central) and upper to max(upper, central).
void project_ordering(IntervalParams& ip);

/// One ReLU dense layer in interval arithmetic for a non-negative input box:
///   z_lo = relu(max(W_lo,0) x_lo + min(W_lo,0) x_hi + b_lo)
///   z_hi = relu(min(W_hi,0) x_lo + max(W_hi,0) x_hi + b_hi)
std::pair<Tensor, Tensor> interval_layer_forward(const Tensor& x_lo, const Tensor& x_hi, const Tensor& w_lo,
                                                 const Tensor& w_hi, const Tensor& b_lo, const Tensor& b_hi);

/// Differentiable interval bounds (not clipped against the central output).
struct IntervalBoundsVar {
    ad::Var lower;
    ad::Var upper;
};

IntervalBoundsVar inn_bounds_var(const NetworkSpec& spec, const ParamVars& lower, const ParamVars& upper,
                                 const NetworkParams& central, std::size_t interval_layers,
                                 const ad::Var& input);

/// Central, lower and upper outputs. Input must lie in [0,1] (tolerance 1e-9).
/// Returned bounds are clipped so that lower <= central <= upper holds exactly.
IntervalPrediction inn_forward(const NetworkSpec& spec, const IntervalParams& ip, const Tensor& input);

/// ||max(x - upper, 0)||^2 + ||max(lower - x, 0)||^2 + beta ||upper - lower||_1
double inn_loss(const IntervalPrediction& pred, const Tensor& target, double beta);
ad::Var inn_loss_var(const ad::Var& lower, const ad::Var& upper, const Tensor& target, double beta);

/// Interval width upper - lower.
Tensor inn_uncertainty(const IntervalPrediction& pred);

/// Fraction of target entries inside [lower, upper].
double coverage(const IntervalPrediction& pred, const Tensor& target);

struct TrainingPair {
    Tensor input;
    Tensor target;
};

/// Trains lower/upper parameters with Adam; central parameters stay frozen.
class IntervalTrainer {
public:
    IntervalTrainer(NetworkSpec spec, double beta, double learning_rate);

    /// One gradient step on the batch followed by the ordering projection.
    /// Returns the mean batch loss before the step. A zero learning rate is a no-op.
    double step(IntervalParams& ip, const std::vector<TrainingPair>& batch);

    double beta() const noexcept { return beta_; }
    double learning_rate() const noexcept { return lr_; }

private:
    NetworkSpec spec_;
    double beta_;
    double lr_;
    Adam adam_;
};

/// Stateless convenience wrapper: a single step with fresh optimizer state.
IntervalParams inn_train_step(const NetworkSpec& spec, IntervalParams ip, const std::vector<TrainingPair>& batch,
                              double beta, double learning_rate);

/// Checkpoint in the common container with lower/central/upper sections.
void save_interval_network(const std::filesystem::path& path, const NetworkSpec& spec, const IntervalParams& ip);
std::pair<NetworkSpec, IntervalParams> load_interval_network(const std::filesystem::path& path);

} // namespace instab
