#include "instab/interval.hpp"

#include "instab/checkpoint.hpp"
#include "instab/errors.hpp"

#include <algorithm>
#include <cmath>

namespace instab {

namespace {

constexpr double kInputTolerance = 1e-9;
constexpr double kSignTolerance = 1e-12;

bool is_structural(LayerKind k)
{
    return k == LayerKind::dropout || k == LayerKind::downsample || k == LayerKind::upsample ||
           k == LayerKind::skip_save || k == LayerKind::skip_concat;
}

void require_nonnegative(const Tensor& t, std::size_t layer)
{
    const double m = min_value(t);
    if (m < -kSignTolerance) {
        throw ContractError("interval input to layer " + std::to_string(layer) + " has negative entry " +
                            std::to_string(m));
    }
}

/// Per-layer interval state: stacked [lo; hi] along axis 0, or a single
/// degenerate value before interval propagation starts.
struct Slot {
    ad::Var value;
    bool interval = false;
};

ad::Var stack_pair(const ad::Var& a, const ad::Var& b)
{
    return ad::concat0(a, b);
}

ad::Var lower_half(const ad::Var& s)
{
    return ad::slice0(s, 0, s.shape()[0] / 2);
}

ad::Var upper_half(const ad::Var& s)
{
    const auto half = s.shape()[0] / 2;
    return ad::slice0(s, half, half);
}

} // namespace

IntervalParams make_interval_params(const NetworkSpec& spec, const NetworkParams& central,
                                    std::size_t interval_layers)
{
    check_params(spec, central);
    (void)interval_entry_layer(spec, interval_layers);
    return {central, central, central, interval_layers};
}

std::size_t interval_entry_layer(const NetworkSpec& spec, std::size_t interval_layers)
{
    const auto affine = spec.affine_layers();
    if (interval_layers == 0 || interval_layers > affine.size()) {
        throw ConfigError("interval layer count " + std::to_string(interval_layers) + " outside [1, " +
                          std::to_string(affine.size()) + "]");
    }
    const std::size_t entry = affine[affine.size() - interval_layers];
    std::size_t i = entry;
    while (i > 0 && is_structural(spec.layers[i - 1].kind)) {
        --i;
    }
    if (i > 0 && spec.layers[i - 1].kind != LayerKind::relu) {
        throw ConfigError("interval propagation must start after a ReLU or at the input; layer " +
                          std::to_string(entry) + " follows a " + to_string(spec.layers[i - 1].kind));
    }
    return entry;
}

void check_interval_params(const NetworkSpec& spec, const IntervalParams& ip)
{
    check_params(spec, ip.lower);
    check_params(spec, ip.central);
    check_params(spec, ip.upper);
    const std::size_t entry = interval_entry_layer(spec, ip.interval_layers);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (!spec.layers[i].has_params()) {
            continue;
        }
        const auto& lo = ip.lower.layers[i];
        const auto& c = ip.central.layers[i];
        const auto& hi = ip.upper.layers[i];
        for (auto [l, m, u] : {std::tuple{&lo.weight, &c.weight, &hi.weight}, {&lo.bias, &c.bias, &hi.bias}}) {
            for (std::size_t j = 0; j < m->size(); ++j) {
                if (!((*l)[j] <= (*m)[j] && (*m)[j] <= (*u)[j])) {
                    throw ContractError("interval ordering violated in layer " + std::to_string(i));
                }
                if (i < entry && ((*l)[j] != (*m)[j] || (*u)[j] != (*m)[j])) {
                    throw ContractError("layer " + std::to_string(i) + " precedes interval propagation but has width");
                }
            }
        }
    }
}

void project_ordering(IntervalParams& ip)
{
    for (std::size_t i = 0; i < ip.central.layers.size(); ++i) {
        auto& lo = ip.lower.layers[i];
        auto& hi = ip.upper.layers[i];
        const auto& c = ip.central.layers[i];
        for (auto [l, m, u] : {std::tuple{&lo.weight, &c.weight, &hi.weight}, {&lo.bias, &c.bias, &hi.bias}}) {
            for (std::size_t j = 0; j < m->size(); ++j) {
                (*l)[j] = std::min((*l)[j], (*m)[j]);
                (*u)[j] = std::max((*u)[j], (*m)[j]);
            }
        }
    }
}

std::pair<Tensor, Tensor> interval_layer_forward(const Tensor& x_lo, const Tensor& x_hi, const Tensor& w_lo,
                                                 const Tensor& w_hi, const Tensor& b_lo, const Tensor& b_hi)
{
    require_same_shape(x_lo, x_hi, "interval_layer_forward input");
    require_same_shape(w_lo, w_hi, "interval_layer_forward weight");
    require_same_shape(b_lo, b_hi, "interval_layer_forward bias");
    if (w_lo.rank() != 2 || w_lo.dim(1) != x_lo.size() || b_lo.size() != w_lo.dim(0)) {
        throw ShapeError("interval_layer_forward: weight " + shape_str(w_lo.shape()) + " vs input " +
                         shape_str(x_lo.shape()) + " and bias " + shape_str(b_lo.shape()));
    }
    for (std::size_t j = 0; j < x_lo.size(); ++j) {
        if (!(0.0 <= x_lo[j] && x_lo[j] <= x_hi[j])) {
            throw ContractError("interval_layer_forward needs 0 <= x_lo <= x_hi");
        }
    }
    for (std::size_t j = 0; j < w_lo.size(); ++j) {
        if (!(w_lo[j] <= w_hi[j])) {
            throw ContractError("interval_layer_forward needs W_lo <= W_hi");
        }
    }
    for (std::size_t j = 0; j < b_lo.size(); ++j) {
        if (!(b_lo[j] <= b_hi[j])) {
            throw ContractError("interval_layer_forward needs b_lo <= b_hi");
        }
    }
    const std::size_t m = w_lo.dim(0);
    const std::size_t n = w_lo.dim(1);
    Tensor z_lo({m});
    Tensor z_hi({m});
    for (std::size_t r = 0; r < m; ++r) {
        double lo = b_lo[r];
        double hi = b_hi[r];
        for (std::size_t c = 0; c < n; ++c) {
            const double wl = w_lo[r * n + c];
            const double wh = w_hi[r * n + c];
            lo += std::max(wl, 0.0) * x_lo[c] + std::min(wl, 0.0) * x_hi[c];
            hi += std::min(wh, 0.0) * x_lo[c] + std::max(wh, 0.0) * x_hi[c];
        }
        z_lo[r] = std::max(lo, 0.0);
        z_hi[r] = std::max(hi, 0.0);
    }
    return {z_lo, z_hi};
}

IntervalBoundsVar inn_bounds_var(const NetworkSpec& spec, const ParamVars& lower, const ParamVars& upper,
                                 const NetworkParams& central, std::size_t interval_layers,
                                 const ad::Var& input)
{
    if (input.shape() != spec.input_shape) {
        throw ShapeError("network input " + shape_str(input.shape()) + ", expected " +
                         shape_str(spec.input_shape));
    }
    const std::size_t entry = interval_entry_layer(spec, interval_layers);
    std::vector<Slot> stack;
    Slot x{input, false};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        switch (l.kind) {
        case LayerKind::dense:
        case LayerKind::conv: {
            const auto& lw = central.layers[i];
            if (i < entry) {
                const auto w = ad::Var::constant(lw.weight);
                const auto b = ad::Var::constant(lw.bias);
                x.value = l.kind == LayerKind::conv ? ad::conv2d(x.value, w, b, l.padding) : ad::dense(x.value, w, b);
                break;
            }
            require_nonnegative(x.value.value(), i);
            const auto bias = stack_pair(lower.bias[i], upper.bias[i]);
            ad::Var weight;
            if (!x.interval) {
                // Degenerate non-negative input: the lower bound is W_lo x, the upper W_hi x.
                weight = stack_pair(lower.weight[i], upper.weight[i]);
            } else {
                weight = ad::interval_weight_block(lower.weight[i], upper.weight[i]);
            }
            if (l.kind == LayerKind::conv) {
                x.value = ad::conv2d(x.value, weight, bias, l.padding);
            } else {
                auto flat = x.value;
                if (x.interval && flat.shape().size() != 1) {
                    flat = ad::reshape(flat, {flat.value().size()});
                }
                x.value = ad::dense(flat, weight, bias);
            }
            x.interval = true;
            break;
        }
        case LayerKind::relu:
            x.value = ad::relu(x.value);
            break;
        case LayerKind::dropout:
            break;
        case LayerKind::downsample:
            x.value = ad::avgpool2(x.value);
            break;
        case LayerKind::upsample:
            x.value = ad::upsample2(x.value);
            break;
        case LayerKind::skip_save:
            stack.push_back(x);
            break;
        case LayerKind::skip_concat: {
            Slot saved = stack.back();
            stack.pop_back();
            if (!x.interval && !saved.interval) {
                x.value = ad::concat0(x.value, saved.value);
                break;
            }
            const auto cur_lo = x.interval ? lower_half(x.value) : x.value;
            const auto cur_hi = x.interval ? upper_half(x.value) : x.value;
            const auto sav_lo = saved.interval ? lower_half(saved.value) : saved.value;
            const auto sav_hi = saved.interval ? upper_half(saved.value) : saved.value;
            x.value = stack_pair(ad::concat0(cur_lo, sav_lo), ad::concat0(cur_hi, sav_hi));
            x.interval = true;
            break;
        }
        }
    }
    if (!x.interval) {
        throw UsageError("interval propagation never started");
    }
    auto lo = lower_half(x.value);
    auto hi = upper_half(x.value);
    if (spec.residual) {
        lo = ad::add_at(lo, input, 0);
        hi = ad::add_at(hi, input, 0);
    }
    return {lo, hi};
}

IntervalPrediction inn_forward(const NetworkSpec& spec, const IntervalParams& ip, const Tensor& input)
{
    check_params(spec, ip.central);
    for (double v : input.data()) {
        if (!(v >= -kInputTolerance && v <= 1.0 + kInputTolerance)) {
            throw ContractError("INN input must lie in [0,1]; found " + std::to_string(v));
        }
    }
    IntervalPrediction pred;
    pred.central = forward(spec, ip.central, input);
    const auto bounds = inn_bounds_var(spec, ParamVars::constants(ip.lower), ParamVars::constants(ip.upper),
                                       ip.central, ip.interval_layers, ad::Var::constant(input));
    pred.lower = bounds.lower.value();
    pred.upper = bounds.upper.value();
    for (std::size_t i = 0; i < pred.central.size(); ++i) {
        pred.lower[i] = std::min(pred.lower[i], pred.central[i]);
        pred.upper[i] = std::max(pred.upper[i], pred.central[i]);
    }
    return pred;
}

double inn_loss(const IntervalPrediction& pred, const Tensor& target, double beta)
{
    require_same_shape(pred.lower, target, "inn_loss");
    require_same_shape(pred.upper, target, "inn_loss");
    if (!(beta > 0.0)) {
        throw ContractError("beta must be positive");
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double over = std::max(target[i] - pred.upper[i], 0.0);
        const double under = std::max(pred.lower[i] - target[i], 0.0);
        loss += over * over + under * under + beta * std::abs(pred.upper[i] - pred.lower[i]);
    }
    return loss;
}

ad::Var inn_loss_var(const ad::Var& lower, const ad::Var& upper, const Tensor& target, double beta)
{
    if (!(beta > 0.0)) {
        throw ContractError("beta must be positive");
    }
    const auto t = ad::Var::constant(target);
    const auto over = ad::sum(ad::square(ad::relu(ad::sub(t, upper))));
    const auto under = ad::sum(ad::square(ad::relu(ad::sub(lower, t))));
    const auto width = ad::scale(ad::sum(ad::abs(ad::sub(upper, lower))), beta);
    return ad::add(ad::add(over, under), width);
}

Tensor inn_uncertainty(const IntervalPrediction& pred)
{
    Tensor u = pred.upper - pred.lower;
    for (auto& v : u.data()) {
        v = std::max(v, 0.0);
    }
    return u;
}

double coverage(const IntervalPrediction& pred, const Tensor& target)
{
    require_same_shape(pred.lower, target, "coverage");
    std::size_t inside = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        inside += (pred.lower[i] <= target[i] && target[i] <= pred.upper[i]) ? 1 : 0;
    }
    return static_cast<double>(inside) / static_cast<double>(target.size());
}

IntervalTrainer::IntervalTrainer(NetworkSpec spec, double beta, double learning_rate)
    : spec_(std::move(spec)), beta_(beta), lr_(learning_rate), adam_({learning_rate > 0.0 ? learning_rate : 1.0})
{
    if (!(beta > 0.0)) {
        throw ConfigError("beta must be positive");
    }
    if (!(learning_rate >= 0.0)) {
        throw ConfigError("learning rate must be non-negative");
    }
}

double IntervalTrainer::step(IntervalParams& ip, const std::vector<TrainingPair>& batch)
{
    if (batch.empty()) {
        throw ContractError("empty training batch");
    }
    const std::size_t entry = interval_entry_layer(spec_, ip.interval_layers);
    const auto lo_vars = ParamVars::trainable(ip.lower);
    const auto hi_vars = ParamVars::trainable(ip.upper);
    double total = 0.0;
    for (const auto& pair : batch) {
        const auto b = inn_bounds_var(spec_, lo_vars, hi_vars, ip.central, ip.interval_layers,
                                      ad::Var::constant(pair.input));
        const auto loss = inn_loss_var(b.lower, b.upper, pair.target, beta_);
        if (!std::isfinite(loss.value()[0])) {
            throw NumericalError("INN loss is not finite");
        }
        total += loss.value()[0];
        if (lr_ > 0.0) {
            ad::backward(ad::scale(loss, 1.0 / static_cast<double>(batch.size())));
        }
    }
    if (lr_ > 0.0) {
        std::vector<Tensor*> params;
        std::vector<Tensor> grads;
        for (std::size_t i = entry; i < spec_.layers.size(); ++i) {
            if (!spec_.layers[i].has_params()) {
                continue;
            }
            params.insert(params.end(), {&ip.lower.layers[i].weight, &ip.lower.layers[i].bias,
                                         &ip.upper.layers[i].weight, &ip.upper.layers[i].bias});
            grads.insert(grads.end(), {lo_vars.weight[i].grad(), lo_vars.bias[i].grad(), hi_vars.weight[i].grad(),
                                       hi_vars.bias[i].grad()});
        }
        std::vector<const Tensor*> gptr;
        for (const auto& g : grads) {
            gptr.push_back(&g);
        }
        adam_.step(params, gptr);
        project_ordering(ip);
    }
    return total / static_cast<double>(batch.size());
}

IntervalParams inn_train_step(const NetworkSpec& spec, IntervalParams ip, const std::vector<TrainingPair>& batch,
                              double beta, double learning_rate)
{
    IntervalTrainer trainer(spec, beta, learning_rate);
    trainer.step(ip, batch);
    return ip;
}

void save_interval_network(const std::filesystem::path& path, const NetworkSpec& spec, const IntervalParams& ip)
{
    check_interval_params(spec, ip);
    TensorBundle b;
    b.header["spec"] = spec;
    b.header["interval_layers"] = ip.interval_layers;
    b.header["sections"] = {"lower", "central", "upper"};
    for (const auto& [section, p] : {std::pair{"lower", &ip.lower}, {"central", &ip.central}, {"upper", &ip.upper}}) {
        auto named = params_to_named(*p, section);
        b.tensors.insert(b.tensors.end(), named.begin(), named.end());
    }
    write_bundle(path, "interval_network", b);
}

std::pair<NetworkSpec, IntervalParams> load_interval_network(const std::filesystem::path& path)
{
    const auto b = read_bundle(path, "interval_network");
    NetworkSpec spec = b.header.at("spec").get<NetworkSpec>();
    IntervalParams ip;
    ip.interval_layers = b.header.at("interval_layers").get<std::size_t>();
    ip.lower = params_from_bundle(spec, b, "lower");
    ip.central = params_from_bundle(spec, b, "central");
    ip.upper = params_from_bundle(spec, b, "upper");
    check_interval_params(spec, ip);
    return {spec, ip};
}

} // namespace instab
