#pragma once

#include "instab/autodiff.hpp"
#include "instab/network.hpp"
#include "instab/tensor.hpp"

#include <cstdint>
#include <vector>

namespace instab {

struct McDropConfig {
    std::size_t T = 16;
    /// Per dropout layer, in layer order. Empty keeps the rates in the network spec.
    std::vector<double> rates;
    std::uint64_t seed = 0;
};

struct McDropResult {
    Tensor mean;
    Tensor heatmap;
};

/// Copy of `spec` with dropout rates replaced by `rates` (one per dropout layer).
NetworkSpec with_dropout_rates(const NetworkSpec& spec, const std::vector<double>& rates);

/// Pass t uses masks drawn from derive_seed(cfg.seed, {t}).
/// heatmap = (sum f_t^2 - (sum f_t)^2 / T) / (T - 1), clamped at zero.
McDropResult mcdrop_uncertainty(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                                const McDropConfig& cfg);

/// Same statistic from precomputed passes.
McDropResult mcdrop_statistics(const std::vector<Tensor>& passes);

/// softplus(r) / ln 2: positive, increasing, equal to 1 at r = 0.
double decode_variance(double raw);
Tensor decode_variance(const Tensor& raw);

/// Baseline spec with the last affine layer emitting twice the outputs.
/// The leading half of the output is the mean, the trailing half the raw variance.
NetworkSpec make_probout_spec(const NetworkSpec& baseline);

/// Copies the baseline weights into the mean half; the variance half starts
/// at zero so the decoded variance is 1 everywhere.
NetworkParams init_probout_params(const NetworkSpec& baseline, const NetworkParams& baseline_params);

struct ProbOutPrediction {
    Tensor mean;
    Tensor variance;
};

ProbOutPrediction probout_forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                                  const DropoutMasks* masks = nullptr);

struct ProbOutVar {
    ad::Var mean;
    ad::Var variance;
};

ProbOutVar probout_forward_var(const NetworkSpec& spec, const ParamVars& params, const ad::Var& input,
                               const DropoutMasks* masks = nullptr);

/// sum (target - mean)^2 / variance + sum |log variance|
double probout_loss(const Tensor& mean, const Tensor& variance, const Tensor& target);
ad::Var probout_loss_var(const ad::Var& mean, const ad::Var& variance, const Tensor& target);

} // namespace instab
