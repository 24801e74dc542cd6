#include "instab/errors.hpp"
#include "instab/rng.hpp"
#include "instab/uq.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace instab;

namespace {

/// input -> dropout(rate) -> dense(1,1) with weight w and zero bias.
std::pair<NetworkSpec, NetworkParams> single_unit(double rate, double w)
{
    NetworkSpec spec;
    spec.input_shape = {1};
    spec.layers = {LayerSpec::make_dropout(rate), LayerSpec::make_dense(1, 1)};
    NetworkParams params = zero_params(spec);
    params.layers[1].weight[0] = w;
    return {spec, params};
}

double stddev(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) {
        m += x;
    }
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

TEST_CASE("mcdrop: zero dropout gives a zero heatmap")
{
    const auto spec = make_denoiser_spec(6, 4, 3, 0.0);
    const auto params = init_params(spec, 1);
    const Tensor x(spec.input_shape, 0.3);
    const auto r = mcdrop_uncertainty(spec, params, x, {8, {}, 42});
    CHECK(r.heatmap == Tensor(x.shape(), 0.0));
    CHECK(max_abs_diff(r.mean, forward(spec, params, x)) < 1e-14);
}

TEST_CASE("mcdrop: Bernoulli variance of a single linear unit")
{
    // Y = c B / p with B ~ Bernoulli(p); Var Y = c^2 (1-p)/p and the sample
    // variance has standard error sqrt((mu4 - sigma^4) / T) to leading order.
    const double w = 1.7;
    const double x = 0.6;
    const double p = 0.7;
    const std::size_t T = 20000;
    const auto [spec, params] = single_unit(1.0 - p, w);
    const auto r = mcdrop_uncertainty(spec, params, Tensor({1}, x), {T, {}, 99});

    const double c = w * x;
    const double var = c * c * (1.0 - p) / p;
    const double up = c * (1.0 / p - 1.0);
    const double mu4 = p * std::pow(up, 4) + (1.0 - p) * std::pow(c, 4);
    const double se = std::sqrt((mu4 - var * var) / static_cast<double>(T));
    CHECK(std::abs(r.heatmap[0] - var) < 3.0 * se);
}

TEST_CASE("mcdrop: fixed seed is bit-identical and T < 2 is rejected")
{
    const auto spec = make_unet_spec(8, 2, 0.5);
    const auto params = init_params(spec, 4);
    const Tensor x(spec.input_shape, 0.5);
    const auto a = mcdrop_uncertainty(spec, params, x, {6, {}, 7});
    const auto b = mcdrop_uncertainty(spec, params, x, {6, {}, 7});
    CHECK(a.heatmap == b.heatmap);
    CHECK(a.mean == b.mean);
    CHECK(min_value(a.heatmap) >= 0.0);
    CHECK(max_value(a.heatmap) > 0.0);
    CHECK_THROWS_AS(mcdrop_uncertainty(spec, params, x, {1, {}, 7}), ConfigError);
}

TEST_CASE("mcdrop: rate override applies per dropout layer")
{
    const auto spec = make_unet_spec(8, 2, 0.5);
    const auto params = init_params(spec, 4);
    const Tensor x(spec.input_shape, 0.5);
    const auto r = mcdrop_uncertainty(spec, params, x, {4, {0.0, 0.0, 0.0, 0.0}, 7});
    CHECK(r.heatmap == Tensor(x.shape(), 0.0));
    CHECK_THROWS_AS(mcdrop_uncertainty(spec, params, x, {4, {0.1}, 7}), ConfigError);
}

TEST_CASE("mcdrop: heatmap is invariant under permutation of the passes")
{
    Rng rng(12);
    std::vector<Tensor> passes;
    for (int t = 0; t < 17; ++t) {
        Tensor p({5});
        for (auto& v : p.data()) {
            v = uniform01(rng) * 10.0 - 5.0;
        }
        passes.push_back(p);
    }
    const auto ref = mcdrop_statistics(passes);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(passes.begin(), passes.end(), rng);
        const auto r = mcdrop_statistics(passes);
        CHECK(max_abs_diff(r.heatmap, ref.heatmap) < 1e-12);
        CHECK(min_value(r.heatmap) >= 0.0);
    }
}

TEST_CASE("mcdrop: standard error of the heatmap scales as 1/sqrt(T)")
{
    // Quadrupling T halves the Monte-Carlo standard error.
    const auto spec = make_denoiser_spec(4, 3, 2, 0.3);
    const auto params = init_params(spec, 8);
    const Tensor x(spec.input_shape, 0.4);
    auto spread = [&](std::size_t T) {
        std::vector<double> means;
        for (std::uint64_t rep = 0; rep < 400; ++rep) {
            means.push_back(mean(mcdrop_uncertainty(spec, params, x, {T, {}, derive_seed(1000, {rep})}).heatmap));
        }
        return stddev(means);
    };
    const double ratio = spread(8) / spread(32);
    MESSAGE("standard-error ratio " << ratio);
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.25));
}

TEST_CASE("probout: decode calibration and monotonicity")
{
    CHECK(decode_variance(0.0) == 1.0);
    double prev = 0.0;
    for (double r = -40.0; r <= 40.0; r += 0.5) {
        const double v = decode_variance(r);
        CHECK(v > prev);
        prev = v;
    }
    CHECK(decode_variance(-700.0) > 0.0);
}

TEST_CASE("probout: initialisation keeps the baseline mean and unit variance")
{
    const auto base = make_denoiser_spec(6, 4, 3, 0.1);
    const auto base_params = init_params(base, 2);
    const auto spec = make_probout_spec(base);
    CHECK(spec.output_shape() == Tensor::Shape{2, 6, 6});
    const auto params = init_probout_params(base, base_params);
    const Tensor x(base.input_shape, 0.25);
    const auto pred = probout_forward(spec, params, x);
    CHECK(max_abs_diff(pred.mean, forward(base, base_params, x)) < 1e-12);
    CHECK(pred.variance == Tensor(x.shape(), 1.0));
    // The heatmap is the decoded variance channel itself.
    const Tensor raw = forward(spec, params, x);
    CHECK(pred.variance == decode_variance(Tensor(x.shape(), std::vector<double>(raw.values().begin() + 36, raw.values().end()))));
}

TEST_CASE("probout_loss examples")
{
    const std::size_t n = 7;
    const Tensor t({n}, 0.3);
    CHECK(probout_loss(t, Tensor({n}, 1.0), t) == 0.0);
    CHECK(probout_loss(t, Tensor({n}, std::exp(1.0)), t) == doctest::Approx(n));
    CHECK(probout_loss(t + Tensor({n}, 1.0), Tensor({n}, 1.0), t) == doctest::Approx(n));
    CHECK_THROWS_AS(probout_loss(t, Tensor({n}, 0.0), t), ContractError);
}

TEST_CASE("probout_loss gradient matches finite differences")
{
    Rng rng(55);
    Tensor m({6});
    Tensor raw({6});
    Tensor target({6});
    for (std::size_t i = 0; i < 6; ++i) {
        m[i] = uniform01(rng);
        raw[i] = 4.0 * uniform01(rng) - 2.0;
        target[i] = uniform01(rng);
    }
    // Keep decoded variances away from 1 where |log v| has its kink.
    for (std::size_t i = 0; i < 6; ++i) {
        if (std::abs(raw[i]) < 0.2) {
            raw[i] += 0.5;
        }
    }
    auto f_mean = [&](const Tensor& mm) { return probout_loss(mm, decode_variance(raw), target); };
    auto f_raw = [&](const Tensor& rr) { return probout_loss(m, decode_variance(rr), target); };

    const auto mv = ad::Var::parameter(m);
    const auto rv = ad::Var::parameter(raw);
    const auto loss = probout_loss_var(mv, ad::unit_softplus(rv), target);
    CHECK(loss.value()[0] == doctest::Approx(f_mean(m)).epsilon(1e-13));
    ad::backward(loss);
    CHECK(testing::gradient_check(f_mean, m, mv.grad()) < 1e-5);
    CHECK(testing::gradient_check(f_raw, raw, rv.grad()) < 1e-5);
}
