#pragma once

#include "instab/autodiff.hpp"
#include "instab/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace instab {

enum class LayerKind {
    dense,       ///< affine map on the flattened activation
    conv,        ///< 2-D convolution, stride 1, zero padding
    relu,
    dropout,     ///< inverted dropout; identity without a mask
    downsample,  ///< 2x2 average pooling
    upsample,    ///< nearest-neighbour 2x upsampling
    skip_save,   ///< pushes the current activation onto the skip stack
    skip_concat, ///< pops the skip stack and concatenates it after the current channels
};

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t in = 0;      ///< dense inputs / conv input channels
    std::size_t out = 0;     ///< dense outputs / conv output channels
    std::size_t kernel = 0;  ///< conv kernel side
    std::size_t padding = 0; ///< conv zero padding per side
    double rate = 0.0;       ///< dropout probability

    static LayerSpec make_dense(std::size_t in, std::size_t out);
    static LayerSpec make_conv(std::size_t in, std::size_t out, std::size_t kernel = 3);
    static LayerSpec make(LayerKind kind);
    static LayerSpec make_dropout(double rate);

    bool has_params() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv; }
    bool operator==(const LayerSpec&) const = default;
};

/// Feed-forward layer sequence. With `residual` set, the input is added to
/// the leading channels of the output.
struct NetworkSpec {
    Tensor::Shape input_shape;
    std::vector<LayerSpec> layers;
    bool residual = false;

    /// Output shape of every layer; throws ShapeError when layers do not compose.
    std::vector<Tensor::Shape> layer_shapes() const;
    Tensor::Shape output_shape() const;
    void validate() const;
    /// Indices of conv/dense layers in order.
    std::vector<std::size_t> affine_layers() const;

    bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

/// Residual DnCNN-style denoiser: conv-relu stack with dropout after every
/// other hidden conv and a linear output conv.
NetworkSpec make_denoiser_spec(std::size_t image_side, std::size_t conv_layers, std::size_t channels,
                               double dropout_rate, std::size_t out_channels = 1);

/// Three-scale encoder-decoder with skip connections and dropout after each
/// down/up-sampling step.
NetworkSpec make_unet_spec(std::size_t image_side, std::size_t base_channels, double dropout_rate,
                           std::size_t out_channels = 1, bool residual = true);

struct LayerParams {
    Tensor weight;
    Tensor bias;
    bool operator==(const LayerParams&) const = default;
};

/// Weights and biases per layer index; layers without parameters hold empty tensors.
struct NetworkParams {
    std::vector<LayerParams> layers;

    /// Pointers to every non-empty tensor in layer order (weight before bias).
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    std::size_t parameter_count() const;
    bool operator==(const NetworkParams&) const = default;
};

/// Parameters with `spec`'s shapes, all zeros.
NetworkParams zero_params(const NetworkSpec& spec);
/// He-normal weights, zero biases.
NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);
void check_params(const NetworkSpec& spec, const NetworkParams& params);

/// One binary keep-mask per layer: empty for non-dropout layers, otherwise
/// shaped like that layer's activation.
using DropoutMasks = std::vector<Tensor>;
DropoutMasks sample_dropout_masks(const NetworkSpec& spec, std::uint64_t seed);

/// Parameters wrapped as autodiff leaves.
struct ParamVars {
    std::vector<ad::Var> weight;
    std::vector<ad::Var> bias;

    static ParamVars constants(const NetworkParams& params);
    static ParamVars trainable(const NetworkParams& params);
    NetworkParams grads() const;
};

/// Differentiable forward pass. Without masks dropout is the identity.
ad::Var forward_var(const NetworkSpec& spec, const ParamVars& params, const ad::Var& input,
                    const DropoutMasks* masks = nullptr);

Tensor forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
               const DropoutMasks* masks = nullptr);

struct Gradients {
    NetworkParams params;
    Tensor input;
};

/// Recorded computation of one forward pass, consumed by backward().
class ForwardTrace {
public:
    ForwardTrace() = default;
    bool recorded() const noexcept { return output_.defined(); }
    const Tensor& output() const;

private:
    friend ForwardTrace trace_forward(const NetworkSpec&, const NetworkParams&, const Tensor&,
                                      const DropoutMasks*, bool);
    friend Gradients backward(const ForwardTrace&, const Tensor&);
    ParamVars params_;
    ad::Var input_;
    ad::Var output_;
    bool parameter_gradients_ = true;
};

/// With `parameter_gradients` false only the input gradient is computed and
/// Gradients::params comes back empty.
ForwardTrace trace_forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input,
                           const DropoutMasks* masks = nullptr, bool parameter_gradients = true);
/// Gradients of <loss_gradient_at_output, output> w.r.t. parameters and input.
/// The trace can be reused; each call starts from zero gradients.
Gradients backward(const ForwardTrace& trace, const Tensor& loss_gradient_at_output);

/// Sum of squared errors ||target - output||^2 as a differentiable scalar.
ad::Var squared_error(const ad::Var& output, const Tensor& target);

} // namespace instab
