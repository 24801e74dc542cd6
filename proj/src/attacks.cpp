#include "instab/attacks.hpp"

#include "instab/checkpoint.hpp"
#include "instab/errors.hpp"
#include "instab/rng.hpp"

#include <cmath>
#include <deque>
#include <random>

namespace instab {

std::string to_string(AttackOptimizer opt)
{
    return opt == AttackOptimizer::lbfgs ? "lbfgs" : "projected_gradient";
}

AttackOptimizer attack_optimizer_from_string(const std::string& name)
{
    if (name == "lbfgs") {
        return AttackOptimizer::lbfgs;
    }
    if (name == "projected_gradient") {
        return AttackOptimizer::projected_gradient;
    }
    throw ConfigError("unknown attack optimizer '" + name + "'");
}

void AttackConfig::validate() const
{
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("attack: lambda must be a finite non-negative number");
    }
    if (!(tolerance >= 0.0) || window == 0 || memory == 0) {
        throw ConfigError("attack: tolerance, window and memory must be positive");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ConfigError("attack: noise sigma must be non-negative");
    }
}

std::size_t scaled_patch_size(std::size_t image_side, bool ct)
{
    const double ratio = ct ? 50.0 / 512.0 : 50.0 / 181.0;
    return static_cast<std::size_t>(std::lround(ratio * static_cast<double>(image_side)));
}

namespace {

struct ImageDims {
    std::size_t h;
    std::size_t w;
};

ImageDims image_dims(const Tensor& x, const char* what)
{
    const auto& s = x.shape();
    if (s.size() == 2) {
        return {s[0], s[1]};
    }
    if (s.size() == 3 && s[0] == 1) {
        return {s[1], s[2]};
    }
    throw ShapeError(std::string(what) + ": expected a single-channel image, got " + shape_str(s));
}

/// Square mask of side cfg.patch_size at a seeded uniform position.
Tensor random_patch(const Tensor& x, const AttackConfig& cfg, const char* what)
{
    const auto [h, w] = image_dims(x, what);
    Tensor mask(x.shape());
    const auto p = cfg.patch_size;
    if (p > h || p > w) {
        throw ContractError(std::string(what) + ": patch " + std::to_string(p) + " exceeds image");
    }
    if (p == 0) {
        return mask;
    }
    Rng rng(derive_seed(cfg.seed, {0x7a7c}));
    const auto r0 = uniform_index(rng, h - p + 1);
    const auto c0 = uniform_index(rng, w - p + 1);
    for (std::size_t r = r0; r < r0 + p; ++r) {
        for (std::size_t c = c0; c < c0 + p; ++c) {
            mask[r * w + c] = 1.0;
        }
    }
    return mask;
}

} // namespace

AttackTarget adv_target_denoise(const Tensor& x_rec, const AttackConfig& cfg)
{
    cfg.validate();
    Tensor mask = random_patch(x_rec, cfg, "adv_target_denoise");
    Tensor target = x_rec;
    Rng rng(derive_seed(cfg.seed, {0x401e}));
    std::normal_distribution<double> gauss(0.0, cfg.noise_sigma);
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (mask[i] != 0.0) {
            target[i] = std::clamp(target[i] + gauss(rng), 0.0, 1.0);
        }
    }
    return {std::move(target), std::move(mask)};
}

AttackTarget adv_target_ct(const Tensor& x_rec, const AttackConfig& cfg)
{
    cfg.validate();
    Tensor mask = random_patch(x_rec, cfg, "adv_target_ct");
    Tensor target = x_rec;
    const double shift = 1.5 * mean(x_rec);
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (mask[i] != 0.0) {
            target[i] = x_rec[i] - shift;
        }
    }
    return {std::move(target), std::move(mask)};
}

double attack_objective(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x,
                        const Tensor& x_tilde, const Tensor& target, double lambda, Tensor* gradient)
{
    require_same_shape(x, x_tilde, "attack_objective");
    const ForwardTrace tr = trace_forward(spec, params, x, nullptr, false);
    const Tensor resid = tr.output() - target;
    const Tensor prox = x - x_tilde;
    const double f = squared_norm(resid) + lambda * squared_norm(prox);
    if (gradient != nullptr) {
        Tensor seed = resid;
        seed *= 2.0;
        Tensor g = backward(tr, seed).input;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += 2.0 * lambda * prox[i];
        }
        *gradient = std::move(g);
    }
    return f;
}

namespace {

/// Variables held at a bound by a gradient pointing out of the box.
std::vector<char> fixed_set(const Tensor& x, const Tensor& g)
{
    std::vector<char> fixed(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        fixed[i] = (x[i] <= 0.0 && g[i] > 0.0) || (x[i] >= 1.0 && g[i] < 0.0);
    }
    return fixed;
}

Tensor masked(Tensor v, const std::vector<char>& fixed)
{
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (fixed[i]) {
            v[i] = 0.0;
        }
    }
    return v;
}

struct Pair {
    Tensor s;
    Tensor y;
    double rho;
};

/// Two-loop recursion: approximate -H g.
Tensor lbfgs_direction(const Tensor& g, const std::deque<Pair>& mem)
{
    Tensor q = g;
    std::vector<double> alpha(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
        alpha[k] = mem[k].rho * dot(mem[k].s, q);
        for (std::size_t i = 0; i < q.size(); ++i) {
            q[i] -= alpha[k] * mem[k].y[i];
        }
    }
    if (!mem.empty()) {
        const auto& last = mem.back();
        q *= dot(last.s, last.y) / dot(last.y, last.y);
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
        const double beta = mem[k].rho * dot(mem[k].y, q);
        for (std::size_t i = 0; i < q.size(); ++i) {
            q[i] += (alpha[k] - beta) * mem[k].s[i];
        }
    }
    q *= -1.0;
    return q;
}

Tensor project_step(const Tensor& x, const Tensor& d, double alpha)
{
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::clamp(x[i] + alpha * d[i], 0.0, 1.0);
    }
    return out;
}

[[noreturn]] void non_finite(const Tensor& x, const AttackConfig& cfg)
{
    std::string where;
    if (!cfg.dump_path.empty()) {
        save_tensor(cfg.dump_path, x);
        where = "; last iterate written to " + cfg.dump_path.string();
    }
    throw NumericalError("attack objective is not finite" + where);
}

} // namespace

AttackResult find_adversarial_input(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x_tilde,
                                    const Tensor& target, const AttackConfig& cfg)
{
    cfg.validate();
    if (target.shape() != spec.output_shape()) {
        throw ShapeError("find_adversarial_input: target " + shape_str(target.shape()) + " but network outputs " +
                         shape_str(spec.output_shape()));
    }
    if (min_value(x_tilde) < 0.0 || max_value(x_tilde) > 1.0) {
        throw ContractError("find_adversarial_input: x_tilde must lie in [0,1]");
    }
    constexpr double armijo = 1e-4;
    constexpr int max_backtracks = 40;

    AttackResult res;
    Tensor x = x_tilde;
    Tensor g;
    double f = attack_objective(spec, params, x, x_tilde, target, cfg.lambda, &g);
    if (!std::isfinite(f)) {
        non_finite(x, cfg);
    }
    res.trace.push_back(f);
    std::deque<Pair> mem;

    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        if (f == 0.0) {
            res.converged = true;
            break;
        }
        const auto fixed = fixed_set(x, g);
        const Tensor gf = masked(g, fixed);
        if (squared_norm(gf) == 0.0) {
            res.converged = true;
            break;
        }
        Tensor d;
        bool quasi_newton = cfg.optimizer == AttackOptimizer::lbfgs && !mem.empty();
        if (quasi_newton) {
            d = masked(lbfgs_direction(gf, mem), fixed);
            if (!(dot(d, gf) < 0.0)) {
                quasi_newton = false;
                mem.clear();
            }
        }
        double alpha = 1.0;
        if (!quasi_newton) {
            d = gf;
            d *= -1.0;
            alpha = 1.0 / std::max(std::sqrt(squared_norm(gf)), 1e-12);
        }

        // Projected backtracking line search; fall back to steepest descent once.
        Tensor x_new;
        Tensor g_new;
        double f_new = f;
        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            for (int bt = 0; bt < max_backtracks; ++bt, alpha *= 0.5) {
                x_new = project_step(x, d, alpha);
                f_new = attack_objective(spec, params, x_new, x_tilde, target, cfg.lambda, &g_new);
                if (!std::isfinite(f_new)) {
                    non_finite(x_new, cfg);
                }
                const double decrease = dot(g, x_new - x);
                if (f_new < f && f_new <= f + armijo * decrease) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted && quasi_newton) {
                mem.clear();
                quasi_newton = false;
                d = gf;
                d *= -1.0;
                alpha = 1.0 / std::max(std::sqrt(squared_norm(gf)), 1e-12);
            } else {
                break;
            }
        }
        if (!accepted) {
            res.converged = true;
            break;
        }

        Tensor s = x_new - x;
        Tensor y = g_new - g;
        const double sy = dot(s, y);
        if (sy > 1e-12 * std::sqrt(squared_norm(s) * squared_norm(y))) {
            mem.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (mem.size() > cfg.memory) {
                mem.pop_front();
            }
        }
        x = std::move(x_new);
        g = std::move(g_new);
        f = f_new;
        res.trace.push_back(f);
        res.iterations = it + 1;

        const auto n = res.trace.size();
        if (n > cfg.window) {
            const double past = res.trace[n - 1 - cfg.window];
            if (past - f < cfg.tolerance * std::abs(past)) {
                res.converged = true;
                break;
            }
        }
    }
    res.x_adv = std::move(x);
    return res;
}

} // namespace instab
