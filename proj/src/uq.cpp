#include "instab/uq.hpp"

#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <cmath>
#include <numbers>

namespace instab {

NetworkSpec with_dropout_rates(const NetworkSpec& spec, const std::vector<double>& rates)
{
    NetworkSpec out = spec;
    std::size_t next = 0;
    for (auto& layer : out.layers) {
        if (layer.kind != LayerKind::dropout) {
            continue;
        }
        if (next >= rates.size()) {
            throw ConfigError("mcdrop: " + std::to_string(rates.size()) + " rates for more dropout layers");
        }
        layer.rate = rates[next++];
    }
    if (next != rates.size()) {
        throw ConfigError("mcdrop: " + std::to_string(rates.size()) + " rates for " + std::to_string(next) +
                          " dropout layers");
    }
    out.validate();
    return out;
}

McDropResult mcdrop_statistics(const std::vector<Tensor>& passes)
{
    const std::size_t T = passes.size();
    if (T < 2) {
        throw ConfigError("mcdrop: T must be at least 2");
    }
    // Moments about the first pass; the statistic is shift invariant.
    const Tensor& k = passes.front();
    Tensor s(k.shape());
    Tensor s2(k.shape());
    for (const auto& p : passes) {
        require_same_shape(p, s, "mcdrop_statistics");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = p[i] - k[i];
            s[i] += d;
            s2[i] += d * d;
        }
    }
    const double t = static_cast<double>(T);
    Tensor heat(s.shape());
    for (std::size_t i = 0; i < s.size(); ++i) {
        heat[i] = std::max((s2[i] - s[i] * s[i] / t) / (t - 1.0), 0.0);
    }
    s *= 1.0 / t;
    s += k;
    return {std::move(s), std::move(heat)};
}

McDropResult mcdrop_uncertainty(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                                const McDropConfig& cfg)
{
    if (cfg.T < 2) {
        throw ConfigError("mcdrop: T must be at least 2, got " + std::to_string(cfg.T));
    }
    const NetworkSpec run = cfg.rates.empty() ? spec : with_dropout_rates(spec, cfg.rates);
    std::vector<Tensor> passes;
    passes.reserve(cfg.T);
    for (std::size_t t = 0; t < cfg.T; ++t) {
        const auto masks = sample_dropout_masks(run, derive_seed(cfg.seed, {t}));
        passes.push_back(forward(run, params, input, &masks));
    }
    return mcdrop_statistics(passes);
}

double decode_variance(double raw)
{
    const double sp = raw > 0.0 ? raw + std::log1p(std::exp(-raw)) : std::log1p(std::exp(raw));
    return sp / std::numbers::ln2;
}

Tensor decode_variance(const Tensor& raw)
{
    Tensor out(raw.shape());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = decode_variance(raw[i]);
    }
    return out;
}

namespace {

std::size_t last_affine(const NetworkSpec& spec)
{
    const auto affine = spec.affine_layers();
    if (affine.empty()) {
        throw ConfigError("probout: network has no affine layer");
    }
    return affine.back();
}

} // namespace

NetworkSpec make_probout_spec(const NetworkSpec& baseline)
{
    NetworkSpec spec = baseline;
    const std::size_t last = last_affine(spec);
    for (std::size_t i = last + 1; i < spec.layers.size(); ++i) {
        const auto k = spec.layers[i].kind;
        if (k != LayerKind::relu && k != LayerKind::dropout) {
            throw ConfigError("probout: layers after the head must be elementwise, found " + to_string(k));
        }
    }
    spec.layers[last].out *= 2;
    spec.validate();
    return spec;
}

NetworkParams init_probout_params(const NetworkSpec& baseline, const NetworkParams& baseline_params)
{
    check_params(baseline, baseline_params);
    const NetworkSpec spec = make_probout_spec(baseline);
    NetworkParams params = zero_params(spec);
    const std::size_t last = last_affine(baseline);
    for (std::size_t i = 0; i < baseline.layers.size(); ++i) {
        if (i != last) {
            params.layers[i] = baseline_params.layers[i];
            continue;
        }
        // Leading-axis halves: copy the mean rows, leave the variance rows at zero.
        for (auto [src, dst] : {std::pair{&baseline_params.layers[i].weight, &params.layers[i].weight},
                                {&baseline_params.layers[i].bias, &params.layers[i].bias}}) {
            std::copy(src->values().begin(), src->values().end(), dst->data().begin());
        }
    }
    return params;
}

namespace {

void require_two_halves(const Tensor::Shape& shape)
{
    if (shape.empty() || shape[0] % 2 != 0) {
        throw ShapeError("probout: output leading extent must be even, got " + shape_str(shape));
    }
}

} // namespace

ProbOutPrediction probout_forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                                  const DropoutMasks* masks)
{
    const auto v = probout_forward_var(spec, ParamVars::constants(params), ad::Var::constant(input), masks);
    return {v.mean.value(), v.variance.value()};
}

ProbOutVar probout_forward_var(const NetworkSpec& spec, const ParamVars& params, const ad::Var& input,
                               const DropoutMasks* masks)
{
    const ad::Var out = forward_var(spec, params, input, masks);
    require_two_halves(out.value().shape());
    const std::size_t half = out.value().dim(0) / 2;
    return {ad::slice0(out, 0, half), ad::unit_softplus(ad::slice0(out, half, half))};
}

double probout_loss(const Tensor& mean, const Tensor& variance, const Tensor& target)
{
    require_same_shape(mean, variance, "probout_loss");
    require_same_shape(mean, target, "probout_loss");
    double loss = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        if (!(variance[i] > 0.0)) {
            throw ContractError("probout_loss: variance must be positive");
        }
        const double r = target[i] - mean[i];
        loss += r * r / variance[i] + std::abs(std::log(variance[i]));
    }
    return loss;
}

ad::Var probout_loss_var(const ad::Var& mean, const ad::Var& variance, const Tensor& target)
{
    require_same_shape(mean.value(), target, "probout_loss_var");
    if (min_value(variance.value()) <= 0.0) {
        throw ContractError("probout_loss: variance must be positive");
    }
    const ad::Var resid = ad::sub(ad::Var::constant(target), mean);
    return ad::add(ad::sum(ad::div(ad::square(resid), variance)), ad::sum(ad::abs(ad::log(variance))));
}

} // namespace instab
