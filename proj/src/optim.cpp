#include "instab/optim.hpp"

#include "instab/errors.hpp"

#include <cmath>

namespace instab {

void require_finite_gradients(const std::vector<const Tensor*>& grads, const char* what)
{
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i]->all_finite()) {
            throw NumericalError(std::string(what) + ": non-finite gradient in tensor " + std::to_string(i));
        }
    }
}

void sgd_step(NetworkParams& params, const NetworkParams& grads, double learning_rate)
{
    if (!(learning_rate > 0.0)) {
        throw ContractError("learning rate must be positive");
    }
    auto p = params.tensors();
    auto g = grads.tensors();
    if (p.size() != g.size()) {
        throw ShapeError("sgd_step: parameter/gradient count mismatch");
    }
    require_finite_gradients(g, "sgd_step");
    for (std::size_t i = 0; i < p.size(); ++i) {
        require_same_shape(*p[i], *g[i], "sgd_step");
        auto pd = p[i]->data();
        auto gd = g[i]->data();
        for (std::size_t j = 0; j < pd.size(); ++j) {
            pd[j] -= learning_rate * gd[j];
        }
    }
}

Adam::Adam(AdamOptions options) : options_(options)
{
    set_learning_rate(options.learning_rate);
}

void Adam::set_learning_rate(double lr)
{
    if (!(lr > 0.0)) {
        throw ContractError("learning rate must be positive");
    }
    options_.learning_rate = lr;
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads)
{
    if (params.size() != grads.size()) {
        throw ShapeError("Adam: parameter/gradient count mismatch");
    }
    require_finite_gradients(grads, "Adam");
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->shape(), 0.0);
            v_.emplace_back(p->shape(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw UsageError("Adam state was created for a different parameter list");
    }
    ++t_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double lr = options_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(*params[i], *grads[i], "Adam");
        require_same_shape(*params[i], m_[i], "Adam state");
        auto p = params[i]->data();
        auto g = grads[i]->data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.epsilon);
        }
    }
}

void Adam::step(NetworkParams& params, const NetworkParams& grads)
{
    step(params.tensors(), grads.tensors());
}

} // namespace instab
