#include "instab/network.hpp"

#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <random>
#include <utility>

namespace instab {

namespace {

constexpr std::array<std::pair<LayerKind, const char*>, 8> kind_names{{
    {LayerKind::dense, "dense"},
    {LayerKind::conv, "conv"},
    {LayerKind::relu, "relu"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::downsample, "downsample"},
    {LayerKind::upsample, "upsample"},
    {LayerKind::skip_save, "skip_save"},
    {LayerKind::skip_concat, "skip_concat"},
}};

std::string layer_name(std::size_t i, const LayerSpec& l)
{
    return "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
}

} // namespace

std::string to_string(LayerKind kind)
{
    for (auto [k, name] : kind_names) {
        if (k == kind) {
            return name;
        }
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& name)
{
    for (auto [k, n] : kind_names) {
        if (name == n) {
            return k;
        }
    }
    throw ConfigError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::make_dense(std::size_t in, std::size_t out)
{
    return {LayerKind::dense, in, out, 0, 0, 0.0};
}

LayerSpec LayerSpec::make_conv(std::size_t in, std::size_t out, std::size_t kernel)
{
    return {LayerKind::conv, in, out, kernel, kernel / 2, 0.0};
}

LayerSpec LayerSpec::make(LayerKind kind)
{
    LayerSpec l;
    l.kind = kind;
    return l;
}

LayerSpec LayerSpec::make_dropout(double rate)
{
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.rate = rate;
    return l;
}

std::vector<Tensor::Shape> NetworkSpec::layer_shapes() const
{
    if (input_shape.empty() || shape_numel(input_shape) == 0) {
        throw ShapeError("network input shape " + shape_str(input_shape) + " is empty");
    }
    std::vector<Tensor::Shape> shapes;
    std::vector<Tensor::Shape> stack;
    Tensor::Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        switch (l.kind) {
        case LayerKind::dense:
            if (shape_numel(cur) != l.in || l.out == 0) {
                throw ShapeError(layer_name(i, l) + " expects " + std::to_string(l.in) + " inputs, got " +
                                 shape_str(cur));
            }
            cur = {l.out};
            break;
        case LayerKind::conv:
            if (cur.size() != 3 || cur[0] != l.in || l.out == 0 || l.kernel == 0 ||
                cur[1] + 2 * l.padding < l.kernel || cur[2] + 2 * l.padding < l.kernel) {
                throw ShapeError(layer_name(i, l) + " cannot take input " + shape_str(cur));
            }
            cur = {l.out, cur[1] + 2 * l.padding - l.kernel + 1, cur[2] + 2 * l.padding - l.kernel + 1};
            break;
        case LayerKind::relu:
            break;
        case LayerKind::dropout:
            if (!(l.rate >= 0.0 && l.rate < 1.0)) {
                throw ShapeError(layer_name(i, l) + " rate must lie in [0,1)");
            }
            break;
        case LayerKind::downsample:
            if (cur.size() != 3 || cur[1] % 2 || cur[2] % 2) {
                throw ShapeError(layer_name(i, l) + " needs even spatial size, got " + shape_str(cur));
            }
            cur = {cur[0], cur[1] / 2, cur[2] / 2};
            break;
        case LayerKind::upsample:
            if (cur.size() != 3) {
                throw ShapeError(layer_name(i, l) + " needs [C,H,W], got " + shape_str(cur));
            }
            cur = {cur[0], cur[1] * 2, cur[2] * 2};
            break;
        case LayerKind::skip_save:
            stack.push_back(cur);
            break;
        case LayerKind::skip_concat: {
            if (stack.empty()) {
                throw ShapeError(layer_name(i, l) + " with empty skip stack");
            }
            auto saved = stack.back();
            stack.pop_back();
            if (saved.size() != cur.size() || !std::equal(cur.begin() + 1, cur.end(), saved.begin() + 1)) {
                throw ShapeError(layer_name(i, l) + " joins " + shape_str(cur) + " with " + shape_str(saved));
            }
            cur[0] += saved[0];
            break;
        }
        }
        shapes.push_back(cur);
    }
    if (!stack.empty()) {
        throw ShapeError("unconsumed skip connections at end of network");
    }
    if (residual && (cur.size() != input_shape.size() || cur[0] < input_shape[0] ||
                     !std::equal(cur.begin() + 1, cur.end(), input_shape.begin() + 1))) {
        throw ShapeError("residual network output " + shape_str(cur) + " incompatible with input " +
                         shape_str(input_shape));
    }
    return shapes;
}

Tensor::Shape NetworkSpec::output_shape() const
{
    auto shapes = layer_shapes();
    return shapes.empty() ? input_shape : shapes.back();
}

void NetworkSpec::validate() const
{
    (void)layer_shapes();
}

std::vector<std::size_t> NetworkSpec::affine_layers() const
{
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].has_params()) {
            idx.push_back(i);
        }
    }
    return idx;
}

void to_json(nlohmann::json& j, const NetworkSpec& spec)
{
    j = nlohmann::json::object();
    j["input_shape"] = spec.input_shape;
    j["residual"] = spec.residual;
    auto& arr = j["layers"] = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        nlohmann::json e{{"kind", to_string(l.kind)}};
        switch (l.kind) {
        case LayerKind::dense:
            e["in"] = l.in;
            e["out"] = l.out;
            break;
        case LayerKind::conv:
            e["in"] = l.in;
            e["out"] = l.out;
            e["kernel"] = l.kernel;
            e["padding"] = l.padding;
            break;
        case LayerKind::dropout:
            e["rate"] = l.rate;
            break;
        default:
            break;
        }
        arr.push_back(std::move(e));
    }
}

void from_json(const nlohmann::json& j, NetworkSpec& spec)
{
    spec = {};
    spec.input_shape = j.at("input_shape").get<Tensor::Shape>();
    spec.residual = j.value("residual", false);
    for (const auto& e : j.at("layers")) {
        LayerSpec l = LayerSpec::make(layer_kind_from_string(e.at("kind").get<std::string>()));
        l.in = e.value("in", std::size_t{0});
        l.out = e.value("out", std::size_t{0});
        l.kernel = e.value("kernel", std::size_t{0});
        l.padding = e.value("padding", l.kernel / 2);
        l.rate = e.value("rate", 0.0);
        spec.layers.push_back(l);
    }
    spec.validate();
}

NetworkSpec make_denoiser_spec(std::size_t image_side, std::size_t conv_layers, std::size_t channels,
                               double dropout_rate, std::size_t out_channels)
{
    if (conv_layers < 2) {
        throw ConfigError("denoiser needs at least 2 conv layers");
    }
    NetworkSpec spec;
    spec.input_shape = {1, image_side, image_side};
    spec.residual = true;
    spec.layers.push_back(LayerSpec::make_conv(1, channels));
    spec.layers.push_back(LayerSpec::make(LayerKind::relu));
    for (std::size_t i = 1; i + 1 < conv_layers; ++i) {
        spec.layers.push_back(LayerSpec::make_conv(channels, channels));
        spec.layers.push_back(LayerSpec::make(LayerKind::relu));
        if (i % 2 == 1 && dropout_rate > 0.0) {
            spec.layers.push_back(LayerSpec::make_dropout(dropout_rate));
        }
    }
    spec.layers.push_back(LayerSpec::make_conv(channels, out_channels));
    spec.validate();
    return spec;
}

NetworkSpec make_unet_spec(std::size_t image_side, std::size_t base_channels, double dropout_rate,
                           std::size_t out_channels, bool residual)
{
    if (image_side % 4 != 0) {
        throw ConfigError("U-Net image side must be divisible by 4");
    }
    const std::size_t c1 = base_channels;
    const std::size_t c2 = 2 * base_channels;
    const std::size_t c3 = 4 * base_channels;
    NetworkSpec spec;
    spec.input_shape = {1, image_side, image_side};
    spec.residual = residual;
    auto& L = spec.layers;
    auto conv_relu = [&](std::size_t in, std::size_t out) {
        L.push_back(LayerSpec::make_conv(in, out));
        L.push_back(LayerSpec::make(LayerKind::relu));
    };
    auto drop = [&] {
        if (dropout_rate > 0.0) {
            L.push_back(LayerSpec::make_dropout(dropout_rate));
        }
    };
    conv_relu(1, c1);
    conv_relu(c1, c1);
    L.push_back(LayerSpec::make(LayerKind::skip_save));
    L.push_back(LayerSpec::make(LayerKind::downsample));
    drop();
    conv_relu(c1, c2);
    conv_relu(c2, c2);
    L.push_back(LayerSpec::make(LayerKind::skip_save));
    L.push_back(LayerSpec::make(LayerKind::downsample));
    drop();
    conv_relu(c2, c3);
    conv_relu(c3, c3);
    L.push_back(LayerSpec::make(LayerKind::upsample));
    drop();
    L.push_back(LayerSpec::make(LayerKind::skip_concat));
    conv_relu(c3 + c2, c2);
    conv_relu(c2, c2);
    L.push_back(LayerSpec::make(LayerKind::upsample));
    drop();
    L.push_back(LayerSpec::make(LayerKind::skip_concat));
    conv_relu(c2 + c1, c1);
    conv_relu(c1, c1);
    L.push_back(LayerSpec::make_conv(c1, out_channels));
    spec.validate();
    return spec;
}

std::vector<Tensor*> NetworkParams::tensors()
{
    std::vector<Tensor*> out;
    for (auto& l : layers) {
        if (!l.weight.empty()) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    }
    return out;
}

std::vector<const Tensor*> NetworkParams::tensors() const
{
    std::vector<const Tensor*> out;
    for (const auto& l : layers) {
        if (!l.weight.empty()) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    }
    return out;
}

std::size_t NetworkParams::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* t : tensors()) {
        n += t->size();
    }
    return n;
}

NetworkParams zero_params(const NetworkSpec& spec)
{
    spec.validate();
    NetworkParams p;
    p.layers.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.kind == LayerKind::dense) {
            p.layers[i] = {Tensor({l.out, l.in}), Tensor({l.out})};
        } else if (l.kind == LayerKind::conv) {
            p.layers[i] = {Tensor({l.out, l.in, l.kernel, l.kernel}), Tensor({l.out})};
        }
    }
    return p;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed)
{
    NetworkParams p = zero_params(spec);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        auto& w = p.layers[i].weight;
        if (w.empty()) {
            continue;
        }
        const std::size_t fan_in = w.size() / w.dim(0);
        Rng rng(derive_seed(seed, {i}));
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (auto& v : w.data()) {
            v = normal(rng);
        }
    }
    return p;
}

void check_params(const NetworkSpec& spec, const NetworkParams& params)
{
    const NetworkParams ref = zero_params(spec);
    if (params.layers.size() != ref.layers.size()) {
        throw ShapeError("parameter set has " + std::to_string(params.layers.size()) + " layers, spec has " +
                         std::to_string(ref.layers.size()));
    }
    for (std::size_t i = 0; i < ref.layers.size(); ++i) {
        if (params.layers[i].weight.shape() != ref.layers[i].weight.shape() ||
            params.layers[i].bias.shape() != ref.layers[i].bias.shape()) {
            throw ShapeError("parameters of " + layer_name(i, spec.layers[i]) + " have shape " +
                             shape_str(params.layers[i].weight.shape()) + ", expected " +
                             shape_str(ref.layers[i].weight.shape()));
        }
    }
}

DropoutMasks sample_dropout_masks(const NetworkSpec& spec, std::uint64_t seed)
{
    const auto shapes = spec.layer_shapes();
    DropoutMasks masks(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.kind != LayerKind::dropout) {
            continue;
        }
        Rng rng(derive_seed(seed, {i}));
        Tensor m(shapes[i], 1.0);
        for (auto& v : m.data()) {
            v = uniform01(rng) < l.rate ? 0.0 : 1.0;
        }
        masks[i] = std::move(m);
    }
    return masks;
}

ParamVars ParamVars::constants(const NetworkParams& params)
{
    ParamVars pv;
    for (const auto& l : params.layers) {
        pv.weight.push_back(l.weight.empty() ? ad::Var() : ad::Var::constant(l.weight));
        pv.bias.push_back(l.bias.empty() ? ad::Var() : ad::Var::constant(l.bias));
    }
    return pv;
}

ParamVars ParamVars::trainable(const NetworkParams& params)
{
    ParamVars pv;
    for (const auto& l : params.layers) {
        pv.weight.push_back(l.weight.empty() ? ad::Var() : ad::Var::parameter(l.weight));
        pv.bias.push_back(l.bias.empty() ? ad::Var() : ad::Var::parameter(l.bias));
    }
    return pv;
}

NetworkParams ParamVars::grads() const
{
    NetworkParams g;
    g.layers.resize(weight.size());
    for (std::size_t i = 0; i < weight.size(); ++i) {
        if (weight[i].defined()) {
            g.layers[i] = {weight[i].grad(), bias[i].grad()};
        }
    }
    return g;
}

ad::Var forward_var(const NetworkSpec& spec, const ParamVars& params, const ad::Var& input,
                    const DropoutMasks* masks)
{
    if (input.shape() != spec.input_shape) {
        throw ShapeError("network input " + shape_str(input.shape()) + ", expected " +
                         shape_str(spec.input_shape));
    }
    if (params.weight.size() != spec.layers.size()) {
        throw ShapeError("parameter/layer count mismatch");
    }
    if (masks && masks->size() != spec.layers.size()) {
        throw ShapeError("dropout mask list must have one entry per layer");
    }
    std::vector<ad::Var> stack;
    ad::Var x = input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        switch (l.kind) {
        case LayerKind::dense:
            x = ad::dense(x, params.weight[i], params.bias[i]);
            break;
        case LayerKind::conv:
            x = ad::conv2d(x, params.weight[i], params.bias[i], l.padding);
            break;
        case LayerKind::relu:
            x = ad::relu(x);
            break;
        case LayerKind::dropout:
            if (masks && !(*masks)[i].empty()) {
                const auto& m = (*masks)[i];
                require_same_shape(m, x.value(), "dropout mask");
                Tensor scaled = m * (1.0 / (1.0 - l.rate));
                x = ad::mul(x, ad::Var::constant(std::move(scaled)));
            }
            break;
        case LayerKind::downsample:
            x = ad::avgpool2(x);
            break;
        case LayerKind::upsample:
            x = ad::upsample2(x);
            break;
        case LayerKind::skip_save:
            stack.push_back(x);
            break;
        case LayerKind::skip_concat:
            x = ad::concat0(x, stack.back());
            stack.pop_back();
            break;
        }
    }
    if (spec.residual) {
        x = ad::add_at(x, input, 0);
    }
    return x;
}

Tensor forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
               const DropoutMasks* masks)
{
    check_params(spec, params);
    return forward_var(spec, ParamVars::constants(params), ad::Var::constant(input), masks).value();
}

const Tensor& ForwardTrace::output() const
{
    if (!recorded()) {
        throw UsageError("forward trace has not been recorded");
    }
    return output_.value();
}

ForwardTrace trace_forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                           const DropoutMasks* masks, bool parameter_gradients)
{
    check_params(spec, params);
    ForwardTrace t;
    t.parameter_gradients_ = parameter_gradients;
    t.params_ = parameter_gradients ? ParamVars::trainable(params) : ParamVars::constants(params);
    t.input_ = ad::Var::parameter(input);
    t.output_ = forward_var(spec, t.params_, t.input_, masks);
    return t;
}

Gradients backward(const ForwardTrace& trace, const Tensor& loss_gradient_at_output)
{
    if (!trace.recorded()) {
        throw UsageError("backward called without a recorded forward trace");
    }
    for (auto& w : trace.params_.weight) {
        if (w.defined()) {
            w.zero_grad();
        }
    }
    for (auto& b : trace.params_.bias) {
        if (b.defined()) {
            b.zero_grad();
        }
    }
    trace.input_.zero_grad();
    // Intermediate nodes keep adjoints from a previous call; reset them all.
    {
        std::vector<ad::Node*> stack{trace.output_.node().get()};
        while (!stack.empty()) {
            auto* n = stack.back();
            stack.pop_back();
            if (n->grad.empty()) {
                continue;
            }
            n->grad = Tensor();
            for (auto& p : n->parents) {
                stack.push_back(p.get());
            }
        }
    }
    ad::backward(trace.output_, loss_gradient_at_output);
    if (!trace.parameter_gradients_) {
        return {NetworkParams{}, trace.input_.grad()};
    }
    return {trace.params_.grads(), trace.input_.grad()};
}

ad::Var squared_error(const ad::Var& output, const Tensor& target)
{
    return ad::sum(ad::square(ad::sub(output, ad::Var::constant(target))));
}

} // namespace instab
