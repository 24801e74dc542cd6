#pragma once

#include "instab/network.hpp"
#include "instab/tensor.hpp"

#include <span>
#include <vector>

namespace instab {

/// Plain gradient descent: params -= learning_rate * grads.
void sgd_step(NetworkParams& params, const NetworkParams& grads, double learning_rate);

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step
/// and bound to the order of the tensors passed in.
class Adam {
public:
    explicit Adam(AdamOptions options = {});

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
    void step(NetworkParams& params, const NetworkParams& grads);

    const AdamOptions& options() const noexcept { return options_; }
    void set_learning_rate(double lr);
    std::size_t steps_taken() const noexcept { return t_; }

private:
    AdamOptions options_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Throws NumericalError naming `what` if any gradient entry is NaN or infinite.
void require_finite_gradients(const std::vector<const Tensor*>& grads, const char* what);

} // namespace instab
