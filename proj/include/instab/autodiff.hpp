#pragma once

#include "instab/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

// Minimal tape-free reverse-mode differentiation over Tensors.
//
// Every op returns a Var holding its value and, when any input requires a
// gradient, a closure that scatters the output adjoint into the inputs.
// backward() walks the graph in reverse creation order. Graphs are owned by
// the Vars that reference them and vanish with them.

namespace instab::ad {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    /// Adds g into grad, allocating zeros on first use.
    void accumulate(const Tensor& g);
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;

    /// Value that never receives a gradient.
    static Var constant(Tensor value);
    /// Leaf whose gradient is recorded by backward().
    static Var parameter(Tensor value);

    bool defined() const noexcept { return node_ != nullptr; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const Tensor& value() const;
    const Tensor::Shape& shape() const { return value().shape(); }
    /// Gradient after backward(); zeros of value's shape if nothing flowed in.
    Tensor grad() const;
    void zero_grad() const;

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

    /// Builds an op result; the closure is dropped unless a parent needs it.
    static Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

private:
    std::shared_ptr<Node> node_;
};

/// Propagates `seed` (d loss / d root) to every reachable parameter.
void backward(const Var& root, const Tensor& seed);
/// Same with seed 1 for scalar roots.
void backward(const Var& root);

// Elementwise (same shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var log(const Var& a);
/// softplus(a) / log(2): positive, increasing, equals 1 at 0.
Var unit_softplus(const Var& a);

/// Sum of all entries, shape [1].
Var sum(const Var& a);

/// Adds `b` elementwise into `a` starting at flat offset `offset`.
Var add_at(const Var& a, const Var& b, std::size_t offset);

/// Concatenation / slicing along axis 0 (contiguous in row-major layout).
Var concat0(const Var& a, const Var& b);
Var slice0(const Var& a, std::size_t begin, std::size_t count);
/// Reinterprets the element order under another shape.
Var reshape(const Var& a, Tensor::Shape shape);

/// 2-D convolution, stride 1, symmetric zero padding.
/// x: [C,H,W], w: [O,C,k,k], b: [O] -> [O, H+2p-k+1, W+2p-k+1].
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t padding);
/// Affine map on the flattened input. x: any shape with numel n, w: [m,n], b: [m] -> [m].
Var dense(const Var& x, const Var& w, const Var& b);
/// 2x2 average pooling. [C,H,W] -> [C,H/2,W/2], H and W even.
Var avgpool2(const Var& x);
/// Nearest-neighbour 2x upsampling. [C,H,W] -> [C,2H,2W].
Var upsample2(const Var& x);

/// Weight block used by interval propagation with non-negative inputs:
///   [[ max(lo,0), min(lo,0) ],
///    [ min(hi,0), max(hi,0) ]]
/// lo/hi: [O, I, ...] -> [2O, 2I, ...]. Applied to a stacked input
/// [x_lo; x_hi] this yields [z_lo; z_hi] for the interval affine map.
/// The split has derivative 1 on the max branch for w > 0 and on the min
/// branch for w <= 0.
Var interval_weight_block(const Var& lo, const Var& hi);

} // namespace instab::ad
