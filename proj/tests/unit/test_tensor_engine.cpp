#include "instab/checkpoint.hpp"
#include "instab/errors.hpp"
#include "instab/network.hpp"
#include "instab/optim.hpp"
#include "instab/rng.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace instab;

namespace {

NetworkSpec single_dense(bool relu)
{
    NetworkSpec s;
    s.input_shape = {1};
    s.layers.push_back(LayerSpec::make_dense(1, 1));
    if (relu) {
        s.layers.push_back(LayerSpec::make(LayerKind::relu));
    }
    return s;
}

NetworkParams scalar_params(const NetworkSpec& spec, double w, double b)
{
    NetworkParams p = zero_params(spec);
    p.layers[0].weight[0] = w;
    p.layers[0].bias[0] = b;
    return p;
}

Tensor random_tensor(Tensor::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        v = lo + (hi - lo) * uniform01(rng);
    }
    return t;
}

/// Smallest |pre-activation| feeding any ReLU, found by running prefixes of the net.
double min_abs_preactivation(const NetworkSpec& spec, const NetworkParams& params, const Tensor& input)
{
    double m = INFINITY;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind != LayerKind::relu) {
            continue;
        }
        NetworkSpec prefix = spec;
        prefix.residual = false;
        prefix.layers.resize(i);
        NetworkParams pp = params;
        pp.layers.resize(i);
        const Tensor pre = forward(prefix, pp, input);
        for (double v : pre.data()) {
            m = std::min(m, std::abs(v));
        }
    }
    return m;
}

/// Random feed-forward spec with at most 3 affine layers and at most 64 parameters.
NetworkSpec random_small_spec(Rng& rng)
{
    NetworkSpec s;
    if (uniform01(rng) < 0.5) {
        std::size_t width = 1 + uniform_index(rng, 4);
        s.input_shape = {width};
        const std::size_t layers = 1 + uniform_index(rng, 3);
        std::size_t params = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            std::size_t out = 1 + uniform_index(rng, 4);
            if (params + (width + 1) * out > 64) {
                break;
            }
            params += (width + 1) * out;
            s.layers.push_back(LayerSpec::make_dense(width, out));
            if (l + 1 < layers) {
                s.layers.push_back(LayerSpec::make(LayerKind::relu));
            }
            width = out;
        }
    } else {
        s.input_shape = {1, 5, 5};
        s.layers.push_back(LayerSpec::make_conv(1, 2));
        s.layers.push_back(LayerSpec::make(LayerKind::relu));
        s.layers.push_back(LayerSpec::make_conv(2, 1));
        s.residual = uniform01(rng) < 0.5;
    }
    return s;
}

} // namespace

TEST_CASE("forward: single dense layer examples")
{
    const auto spec = single_dense(true);
    CHECK(forward(spec, scalar_params(spec, 1.0, 0.0), Tensor({1}, -2.0))[0] == 0.0);
    CHECK(forward(spec, scalar_params(spec, 2.0, 1.0), Tensor({1}, 3.0))[0] == 7.0);
}

TEST_CASE("forward: zero 3x3 kernel with bias 0.5 gives a constant image")
{
    NetworkSpec spec;
    spec.input_shape = {1, 6, 7};
    spec.layers = {LayerSpec::make_conv(1, 1), LayerSpec::make(LayerKind::relu)};
    NetworkParams p = zero_params(spec);
    p.layers[0].bias[0] = 0.5;
    Rng rng(3);
    const Tensor out = forward(spec, p, random_tensor(spec.input_shape, rng));
    CHECK(out.shape() == spec.input_shape);
    for (double v : out.data()) {
        CHECK(v == 0.5);
    }
}

TEST_CASE("forward: shape mismatch is a structured error")
{
    const auto spec = single_dense(true);
    CHECK_THROWS_AS(forward(spec, scalar_params(spec, 1.0, 0.0), Tensor({2}, 1.0)), ShapeError);
    NetworkSpec bad;
    bad.input_shape = {1, 4, 4};
    bad.layers = {LayerSpec::make_conv(2, 1)};
    CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("backward: hand chain rule for loss = output^2")
{
    const auto spec = single_dense(true);
    const auto trace = trace_forward(spec, scalar_params(spec, 1.0, 0.0), Tensor({1}, 2.0));
    const double out = trace.output()[0];
    const auto g = backward(trace, Tensor({1}, 2.0 * out));
    CHECK(g.params.layers[0].weight[0] == doctest::Approx(8.0));
    // d(out^2)/dx = 2 * out * w = 4.
    CHECK(g.input[0] == doctest::Approx(4.0));
}

TEST_CASE("backward: zero loss gradient gives zero gradients; missing trace is a usage error")
{
    Rng rng(11);
    const auto spec = make_denoiser_spec(8, 3, 4, 0.0);
    const auto params = init_params(spec, 5);
    const auto trace = trace_forward(spec, params, random_tensor(spec.input_shape, rng, 0.0, 1.0));
    const auto g = backward(trace, Tensor(spec.output_shape(), 0.0));
    for (const auto* t : g.params.tensors()) {
        for (double v : t->data()) {
            CHECK(v == 0.0);
        }
    }
    CHECK_THROWS_AS(backward(ForwardTrace{}, Tensor({1})), UsageError);
}

TEST_CASE("backward: gradients match central finite differences on random small nets")
{
    Rng rng(2024);
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const NetworkSpec spec = random_small_spec(rng);
        REQUIRE(spec.affine_layers().size() <= 3);
        NetworkParams params = init_params(spec, rng());
        for (auto* t : params.tensors()) {
            for (auto& v : t->data()) {
                v += 0.1 * (uniform01(rng) - 0.5);
            }
        }
        REQUIRE(params.parameter_count() <= 64);
        const Tensor input = random_tensor(spec.input_shape, rng);
        if (min_abs_preactivation(spec, params, input) < 1e-4) {
            continue;
        }
        const Tensor target = random_tensor(spec.output_shape(), rng);
        auto loss_of = [&](const NetworkParams& p, const Tensor& x) {
            const Tensor out = forward(spec, p, x);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) {
                s += (out[i] - target[i]) * (out[i] - target[i]);
            }
            return s;
        };
        const auto trace = trace_forward(spec, params, input);
        Tensor seed = trace.output();
        for (std::size_t i = 0; i < seed.size(); ++i) {
            seed[i] = 2.0 * (seed[i] - target[i]);
        }
        const auto g = backward(trace, seed);
        auto ptensors = params.tensors();
        auto gtensors = g.params.tensors();
        for (std::size_t k = 0; k < ptensors.size(); ++k) {
            auto f = [&](const Tensor& t) {
                NetworkParams p = params;
                *p.tensors()[k] = t;
                return loss_of(p, input);
            };
            CHECK(testing::gradient_check(f, *ptensors[k], *gtensors[k]) < 1e-5);
        }
        auto fx = [&](const Tensor& x) { return loss_of(params, x); };
        CHECK(testing::gradient_check(fx, input, g.input) < 1e-5);
        ++checked;
    }
    CHECK(checked >= 40);
}

TEST_CASE("forward: deterministic and rate-0 dropout reproduces the maskless pass")
{
    Rng rng(7);
    NetworkSpec spec = make_denoiser_spec(12, 4, 4, 0.0);
    spec.layers.insert(spec.layers.begin() + 2, LayerSpec::make_dropout(0.0));
    const auto params = init_params(spec, 9);
    const Tensor x = random_tensor(spec.input_shape, rng, 0.0, 1.0);
    const Tensor a = forward(spec, params, x);
    CHECK(a == forward(spec, params, x));
    const auto masks = sample_dropout_masks(spec, 1);
    CHECK(forward(spec, params, x, &masks) == a);
}

TEST_CASE("forward: inverted dropout scales kept activations by 1/keep")
{
    NetworkSpec spec;
    spec.input_shape = {4};
    spec.layers = {LayerSpec::make_dropout(0.5)};
    DropoutMasks masks(1);
    masks[0] = Tensor({4}, std::vector<double>{1, 0, 1, 0});
    const Tensor out = forward(spec, zero_params(spec), Tensor({4}, std::vector<double>{1, 2, 3, 4}), &masks);
    CHECK(out == Tensor({4}, std::vector<double>{2, 0, 6, 0}));
}

TEST_CASE("unet spec composes and preserves the image shape")
{
    const auto spec = make_unet_spec(16, 2, 0.7);
    CHECK(spec.output_shape() == spec.input_shape);
    Rng rng(1);
    const Tensor x = random_tensor(spec.input_shape, rng, 0.0, 1.0);
    const auto params = init_params(spec, 4);
    const auto masks = sample_dropout_masks(spec, 3);
    CHECK(forward(spec, params, x, &masks).all_finite());
}

TEST_CASE("sgd_step examples")
{
    const auto spec = single_dense(false);
    NetworkParams p = scalar_params(spec, 1.0, 0.0);
    NetworkParams g = scalar_params(spec, 2.0, 0.0);
    sgd_step(p, g, 0.1);
    CHECK(p.layers[0].weight[0] == doctest::Approx(0.8));
    const NetworkParams before = p;
    sgd_step(p, zero_params(spec), 0.1);
    CHECK(p == before);
    CHECK_THROWS_AS(sgd_step(p, g, 0.0), ContractError);
    g.layers[0].weight[0] = NAN;
    CHECK_THROWS_AS(sgd_step(p, g, 0.1), NumericalError);
}

TEST_CASE("Adam converges on a quadratic bowl")
{
    Tensor w({1}, 0.0);
    Adam adam({0.1});
    for (int i = 0; i < 200; ++i) {
        Tensor g({1}, 2.0 * (w[0] - 3.0));
        adam.step({&w}, {&g});
    }
    CHECK(std::abs(w[0] - 3.0) < 1e-2);
    Tensor zero({1}, 0.0);
    const Tensor before = w;
    Adam fresh({0.1});
    fresh.step({&w}, {&zero});
    CHECK(w == before);
}

TEST_CASE("checkpoint round trip is lossless")
{
    const auto spec = make_unet_spec(8, 2, 0.5);
    const auto params = init_params(spec, 77);
    const auto path = std::filesystem::temp_directory_path() / "instab_ckpt_test.bin";
    save_network(path, spec, params);
    const auto loaded = load_network(path);
    CHECK(loaded.spec == spec);
    CHECK(loaded.params == params);
    std::filesystem::remove(path);
}
