#include "instab/attacks.hpp"
#include "instab/errors.hpp"
#include "instab/rng.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace instab;

namespace {

NetworkSpec identity_net(std::size_t side)
{
    NetworkSpec spec;
    spec.input_shape = {1, side, side};
    return spec;
}

Tensor random_image(std::size_t side, Rng& rng, double lo = 0.0, double hi = 1.0)
{
    Tensor t({1, side, side});
    for (auto& v : t.data()) {
        v = lo + (hi - lo) * uniform01(rng);
    }
    return t;
}

bool monotone(const std::vector<double>& trace)
{
    for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace[i] > trace[i - 1]) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("patch sizes follow the image side")
{
    CHECK(scaled_patch_size(512, true) == 50);
    CHECK(scaled_patch_size(181, false) == 50);
    CHECK(scaled_patch_size(64, true) == 6);
    CHECK(scaled_patch_size(64, false) == 18);
}

TEST_CASE("adv_target_denoise: locality and noise level")
{
    const Tensor x(Tensor::Shape{1, 128, 128}, 0.5);
    AttackConfig cfg;
    cfg.patch_size = 0;
    const auto none = adv_target_denoise(x, cfg);
    CHECK(none.target == x);
    CHECK(sum(none.mask) == 0.0);

    cfg.patch_size = scaled_patch_size(128, false);
    cfg.seed = 9;
    const auto t = adv_target_denoise(x, cfg);
    CHECK(sum(t.mask) == static_cast<double>(cfg.patch_size * cfg.patch_size));
    double s = 0.0;
    double s2 = 0.0;
    double n = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (t.mask[i] == 0.0) {
            CHECK(t.target[i] == x[i]);
        } else {
            const double d = t.target[i] - x[i];
            s += d;
            s2 += d * d;
            n += 1.0;
        }
    }
    const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
    CHECK(sd == doctest::Approx(25.0 / 255.0).epsilon(0.10));
    CHECK(min_value(t.target) >= 0.0);
    CHECK(max_value(t.target) <= 1.0);
    CHECK(adv_target_denoise(x, cfg).target == t.target);
    cfg.patch_size = 129;
    CHECK_THROWS_AS(adv_target_denoise(x, cfg), ContractError);
}

TEST_CASE("adv_target_ct examples")
{
    AttackConfig cfg;
    cfg.patch_size = 7;
    const auto one = adv_target_ct(Tensor(Tensor::Shape{1, 32, 32}, 1.0), cfg);
    CHECK(sum(one.mask) == 49.0);
    for (std::size_t i = 0; i < one.mask.size(); ++i) {
        CHECK(one.target[i] == (one.mask[i] != 0.0 ? -0.5 : 1.0));
    }
    const Tensor zero(Tensor::Shape{1, 32, 32});
    CHECK(adv_target_ct(zero, cfg).target == zero);
    cfg.patch_size = 40;
    CHECK_THROWS_AS(adv_target_ct(zero, cfg), ContractError);
}

TEST_CASE("attack objective gradient matches finite differences")
{
    Rng rng(4);
    const auto spec = make_denoiser_spec(6, 3, 3, 0.0);
    const auto params = init_params(spec, 2);
    const Tensor xt = random_image(6, rng);
    const Tensor target = random_image(6, rng);
    const Tensor x = random_image(6, rng);
    Tensor g;
    attack_objective(spec, params, x, xt, target, 0.5, &g);
    auto f = [&](const Tensor& v) { return attack_objective(spec, params, v, xt, target, 0.5); };
    CHECK(testing::gradient_check(f, x, g) < 1e-5);
}

TEST_CASE("identity network: already optimal start is returned unchanged")
{
    Rng rng(5);
    const Tensor xt = random_image(8, rng);
    for (double lambda : {0.0, 0.5, 10.0}) {
        AttackConfig cfg;
        cfg.lambda = lambda;
        const auto r = find_adversarial_input(identity_net(8), {}, xt, xt, cfg);
        CHECK(r.x_adv == xt);
        CHECK(r.final_objective() == 0.0);
    }
}

TEST_CASE("identity network: closed-form box-constrained optimum")
{
    // Separable quadratic: x* = clip((t + lambda x_tilde) / (1 + lambda), 0, 1).
    Rng rng(6);
    const Tensor xt = random_image(8, rng);
    for (auto opt : {AttackOptimizer::lbfgs, AttackOptimizer::projected_gradient}) {
        for (double lambda : {0.0, 0.5}) {
            for (bool interior : {true, false}) {
                const Tensor t = interior ? random_image(8, rng, 0.1, 0.9) : random_image(8, rng, -0.5, 1.5);
                AttackConfig cfg;
                cfg.lambda = lambda;
                cfg.optimizer = opt;
                const auto r = find_adversarial_input(identity_net(8), {}, xt, t, cfg);
                Tensor expect(t.shape());
                for (std::size_t i = 0; i < t.size(); ++i) {
                    expect[i] = std::clamp((t[i] + lambda * xt[i]) / (1.0 + lambda), 0.0, 1.0);
                }
                CHECK(max_abs_diff(r.x_adv, expect) < 1e-6);
                CHECK(monotone(r.trace));
            }
        }
    }
}

TEST_CASE("attacks on random nets: feasibility, monotone trace, determinism")
{
    Rng rng(7);
    for (int net = 0; net < 4; ++net) {
        const auto spec = net % 2 == 0 ? make_denoiser_spec(8, 4, 4, 0.1) : make_unet_spec(8, 2, 0.5);
        const auto params = init_params(spec, rng());
        const Tensor xt = random_image(8, rng);
        AttackConfig cfg;
        cfg.seed = 3;
        cfg.max_iterations = 60;
        cfg.patch_size = 3;
        const auto target = adv_target_ct(forward(spec, params, xt), cfg).target;
        const auto r = find_adversarial_input(spec, params, xt, target, cfg);
        CHECK(min_value(r.x_adv) >= 0.0);
        CHECK(max_value(r.x_adv) <= 1.0);
        CHECK(monotone(r.trace));
        CHECK(r.final_objective() <= r.initial_objective());
        CHECK(r.final_objective() < r.initial_objective());
        CHECK(r.final_objective() == attack_objective(spec, params, r.x_adv, xt, target, cfg.lambda));
        const auto again = find_adversarial_input(spec, params, xt, target, cfg);
        CHECK(again.x_adv == r.x_adv);
        CHECK(again.trace == r.trace);
    }
}

TEST_CASE("a dominant proximity term keeps the attack near the start")
{
    Rng rng(8);
    for (int net = 0; net < 3; ++net) {
        const auto spec = make_denoiser_spec(8, 4, 4, 0.0);
        const auto params = init_params(spec, rng());
        const Tensor xt = random_image(8, rng);
        AttackConfig cfg;
        cfg.lambda = 1e6;
        cfg.patch_size = 4;
        cfg.seed = static_cast<std::uint64_t>(net);
        const auto target = adv_target_ct(forward(spec, params, xt), cfg).target;
        const auto r = find_adversarial_input(spec, params, xt, target, cfg);
        CHECK(max_value(abs(r.x_adv - xt)) < 1e-2);
    }
}

TEST_CASE("attack preconditions")
{
    AttackConfig cfg;
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(attack_optimizer_from_string("adam"), ConfigError);
    const Tensor outside(Tensor::Shape{1, 4, 4}, 1.5);
    CHECK_THROWS_AS(find_adversarial_input(identity_net(4), {}, outside, outside, AttackConfig{}), ContractError);
    CHECK_THROWS_AS(find_adversarial_input(identity_net(4), {}, Tensor({1, 4, 4}), Tensor({1, 5, 5}), AttackConfig{}),
                    ShapeError);
}
