#include "instab/autodiff.hpp"

#include "instab/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace instab::ad {

namespace {

std::atomic<std::uint64_t> next_id{1};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Node& parent(Node& n, std::size_t i)
{
    return *n.parents[i];
}

void require_same(const Var& a, const Var& b, const char* op)
{
    require_same_shape(a.value(), b.value(), op);
}

template <typename F>
Var unary(const Var& a, F&& f, std::function<void(Node&)> bw)
{
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v = f(v);
    }
    return Var::make(std::move(out), {a}, std::move(bw));
}

void im2col(const Tensor& x, std::size_t k, std::size_t pad, std::size_t ho, std::size_t wo, double* col)
{
    const std::size_t c_in = x.dim(0);
    const std::size_t h = x.dim(1);
    const std::size_t w = x.dim(2);
    const auto* src = x.raw();
    std::size_t row = 0;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj, ++row) {
                double* dst = col + row * ho * wo;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
                    double* drow = dst + oh * wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(drow, drow + wo, 0.0);
                        continue;
                    }
                    const double* srow = src + (c * h + static_cast<std::size_t>(ih)) * w;
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad);
                        drow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : srow[iw];
                    }
                }
            }
        }
    }
}

void col2im(const double* col, std::size_t k, std::size_t pad, std::size_t ho, std::size_t wo, Tensor& dx)
{
    const std::size_t c_in = dx.dim(0);
    const std::size_t h = dx.dim(1);
    const std::size_t w = dx.dim(2);
    auto* dst = dx.raw();
    std::size_t row = 0;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj, ++row) {
                const double* src = col + row * ho * wo;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
                        continue;
                    }
                    double* drow = dst + (c * h + static_cast<std::size_t>(ih)) * w;
                    const double* srow = src + oh * wo;
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                        const auto iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad);
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) {
                            drow[iw] += srow[ow];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

// ---------------------------------------------------------------- Node / Var

Tensor& Node::grad_buffer()
{
    if (grad.empty()) {
        grad = Tensor(value.shape(), 0.0);
    }
    return grad;
}

void Node::accumulate(const Tensor& g)
{
    auto& buf = grad_buffer();
    auto out = buf.data();
    auto in = g.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += in[i];
    }
}

Var Var::constant(Tensor value)
{
    Var v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    v.node_->id = next_id++;
    return v;
}

Var Var::parameter(Tensor value)
{
    Var v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
}

const Tensor& Var::value() const
{
    if (!node_) {
        throw UsageError("access to an undefined Var");
    }
    return node_->value;
}

Tensor Var::grad() const
{
    if (!node_) {
        throw UsageError("access to an undefined Var");
    }
    return node_->grad.empty() ? Tensor(node_->value.shape(), 0.0) : node_->grad;
}

void Var::zero_grad() const
{
    if (node_) {
        node_->grad = Tensor();
    }
}

Var Var::make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn)
{
    if (!value.all_finite()) {
        throw NumericalError("non-finite value produced by a tensor operation");
    }
    Var v = constant(std::move(value));
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (needs) {
        v.node_->requires_grad = true;
        v.node_->parents.reserve(parents.size());
        for (auto& p : parents) {
            v.node_->parents.push_back(p.node_);
        }
        v.node_->backward_fn = std::move(backward_fn);
    }
    return v;
}

void backward(const Var& root, const Tensor& seed)
{
    if (!root.defined()) {
        throw UsageError("backward on an undefined Var");
    }
    require_same_shape(root.value(), seed, "backward seed");
    if (!root.requires_grad()) {
        return;
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.node().get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || !seen.insert(n).second) {
            continue;
        }
        order.push_back(n);
        for (auto& p : n->parents) {
            stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });
    root.node()->accumulate(seed);
    for (Node* n : order) {
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

void backward(const Var& root)
{
    if (root.defined() && root.value().size() != 1) {
        throw UsageError("backward() without seed requires a scalar root");
    }
    backward(root, Tensor::scalar(1.0));
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b)
{
    require_same(a, b, "add");
    Tensor out = a.value() + b.value();
    return Var::make(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t i = 0; i < 2; ++i) {
            if (parent(n, i).requires_grad) {
                parent(n, i).accumulate(n.grad);
            }
        }
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same(a, b, "sub");
    Tensor out = a.value() - b.value();
    return Var::make(std::move(out), {a, b}, [](Node& n) {
        if (parent(n, 0).requires_grad) {
            parent(n, 0).accumulate(n.grad);
        }
        if (parent(n, 1).requires_grad) {
            parent(n, 1).accumulate(n.grad * -1.0);
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    return Var::make(std::move(out), {a, b}, [](Node& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[i] * pb.value[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[i] * pa.value[i];
            }
        }
    });
}

Var div(const Var& a, const Var& b)
{
    require_same(a, b, "div");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] /= b.value()[i];
    }
    return Var::make(std::move(out), {a, b}, [](Node& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[i] / pb.value[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= n.grad[i] * n.value[i] / pb.value[i];
            }
        }
    });
}

Var scale(const Var& a, double s)
{
    return Var::make(a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Var relu(const Var& a)
{
    return unary(a, [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& n) {
        auto& p = parent(n, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (p.value[i] > 0.0) {
                g[i] += n.grad[i];
            }
        }
    });
}

Var square(const Var& a)
{
    return unary(a, [](double v) { return v * v; }, [](Node& n) {
        auto& p = parent(n, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += 2.0 * p.value[i] * n.grad[i];
        }
    });
}

Var abs(const Var& a)
{
    return unary(a, [](double v) { return std::abs(v); }, [](Node& n) {
        auto& p = parent(n, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p.value[i];
            g[i] += (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0)) * n.grad[i];
        }
    });
}

Var log(const Var& a)
{
    for (double v : a.value().data()) {
        if (!(v > 0.0)) {
            throw ContractError("log of a non-positive value");
        }
    }
    return unary(a, [](double v) { return std::log(v); }, [](Node& n) {
        auto& p = parent(n, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += n.grad[i] / p.value[i];
        }
    });
}

Var unit_softplus(const Var& a)
{
    constexpr double inv_ln2 = 1.0 / std::numbers::ln2;
    auto softplus = [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
    return unary(a, [=](double v) { return softplus(v) * inv_ln2; }, [=](Node& n) {
        auto& p = parent(n, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-p.value[i]));
            g[i] += n.grad[i] * sig * inv_ln2;
        }
    });
}

Var sum(const Var& a)
{
    return Var::make(Tensor::scalar(instab::sum(a.value())), {a}, [](Node& n) {
        auto& g = parent(n, 0).grad_buffer();
        const double s = n.grad[0];
        for (auto& v : g.data()) {
            v += s;
        }
    });
}

Var add_at(const Var& a, const Var& b, std::size_t offset)
{
    if (offset + b.value().size() > a.value().size()) {
        throw ShapeError("add_at: " + shape_str(b.shape()) + " at offset " + std::to_string(offset) +
                         " exceeds " + shape_str(a.shape()));
    }
    Tensor out = a.value();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < bv.size(); ++i) {
        out[offset + i] += bv[i];
    }
    return Var::make(std::move(out), {a, b}, [offset](Node& n) {
        if (parent(n, 0).requires_grad) {
            parent(n, 0).accumulate(n.grad);
        }
        auto& pb = parent(n, 1);
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[offset + i];
            }
        }
    });
}

// ---------------------------------------------------------------- structure

Var concat0(const Var& a, const Var& b)
{
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
        throw ShapeError("concat0: " + shape_str(sa) + " vs " + shape_str(sb));
    }
    Tensor::Shape shape = sa;
    shape[0] += sb[0];
    AlignedBuffer data(a.value().values());
    data.insert(data.end(), b.value().values().begin(), b.value().values().end());
    const std::size_t na = a.value().size();
    return Var::make(Tensor(std::move(shape), std::move(data)), {a, b}, [na](Node& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += n.grad[na + i];
            }
        }
    });
}

Var slice0(const Var& a, std::size_t begin, std::size_t count)
{
    const auto& sa = a.shape();
    if (count == 0 || begin + count > sa.at(0)) {
        throw ShapeError("slice0: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                         shape_str(sa));
    }
    Tensor::Shape shape = sa;
    shape[0] = count;
    const std::size_t stride = a.value().size() / sa[0];
    const std::size_t off = begin * stride;
    AlignedBuffer data(a.value().values().begin() + static_cast<std::ptrdiff_t>(off),
                       a.value().values().begin() + static_cast<std::ptrdiff_t>(off + count * stride));
    return Var::make(Tensor(std::move(shape), std::move(data)), {a}, [off](Node& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            g[off + i] += n.grad[i];
        }
    });
}

Var reshape(const Var& a, Tensor::Shape shape)
{
    return Var::make(a.value().reshaped(std::move(shape)), {a}, [](Node& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += n.grad[i];
        }
    });
}

// ---------------------------------------------------------------- layers

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t padding)
{
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || b.value().size() != ws[0]) {
        throw ShapeError("conv2d: input " + shape_str(xs) + ", weight " + shape_str(ws) + ", bias " +
                         shape_str(b.shape()));
    }
    const std::size_t k = ws[2];
    if (xs[1] + 2 * padding < k || xs[2] + 2 * padding < k) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    const std::size_t c_out = ws[0];
    const std::size_t kk = xs[0] * k * k;
    const std::size_t ho = xs[1] + 2 * padding - k + 1;
    const std::size_t wo = xs[2] + 2 * padding - k + 1;
    const std::size_t hw = ho * wo;

    auto col = std::make_shared<AlignedBuffer>(kk * hw);
    im2col(x.value(), k, padding, ho, wo, col->data());

    Tensor out({c_out, ho, wo});
    {
        ConstMapMat wm(w.value().raw(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(kk));
        ConstMapMat cm(col->data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
        MapMat om(out.raw(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(hw));
        om.noalias() = wm * cm;
        for (std::size_t o = 0; o < c_out; ++o) {
            om.row(static_cast<Eigen::Index>(o)).array() += b.value()[o];
        }
    }
    if (!w.requires_grad()) {
        col.reset();
    }
    return Var::make(std::move(out), {x, w, b}, [col, k, padding, ho, wo, kk, hw, c_out](Node& n) {
        auto& px = parent(n, 0);
        auto& pw = parent(n, 1);
        auto& pb = parent(n, 2);
        ConstMapMat gm(n.grad.raw(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(hw));
        if (pw.requires_grad) {
            ConstMapMat cm(col->data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
            MapMat gw(pw.grad_buffer().raw(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(kk));
            gw.noalias() += gm * cm.transpose();
        }
        if (pb.requires_grad) {
            auto& gb = pb.grad_buffer();
            for (std::size_t o = 0; o < c_out; ++o) {
                gb[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
            }
        }
        if (px.requires_grad) {
            ConstMapMat wm(pw.value.raw(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(kk));
            RowMat dcol = wm.transpose() * gm;
            col2im(dcol.data(), k, padding, ho, wo, px.grad_buffer());
        }
    });
}

Var dense(const Var& x, const Var& w, const Var& b)
{
    const auto& ws = w.shape();
    if (ws.size() != 2 || ws[1] != x.value().size() || b.value().size() != ws[0]) {
        throw ShapeError("dense: input " + shape_str(x.shape()) + ", weight " + shape_str(ws) + ", bias " +
                         shape_str(b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(ws[0]);
    const auto nn = static_cast<Eigen::Index>(ws[1]);
    Tensor out({ws[0]});
    {
        ConstMapMat wm(w.value().raw(), m, nn);
        Eigen::Map<const Eigen::VectorXd> xv(x.value().raw(), nn);
        Eigen::Map<const Eigen::VectorXd> bv(b.value().raw(), m);
        Eigen::Map<Eigen::VectorXd> ov(out.raw(), m);
        ov.noalias() = wm * xv + bv;
    }
    return Var::make(std::move(out), {x, w, b}, [m, nn](Node& n) {
        auto& px = parent(n, 0);
        auto& pw = parent(n, 1);
        auto& pb = parent(n, 2);
        Eigen::Map<const Eigen::VectorXd> gv(n.grad.raw(), m);
        if (pw.requires_grad) {
            Eigen::Map<const Eigen::VectorXd> xv(px.value.raw(), nn);
            MapMat gw(pw.grad_buffer().raw(), m, nn);
            gw.noalias() += gv * xv.transpose();
        }
        if (pb.requires_grad) {
            Eigen::Map<Eigen::VectorXd>(pb.grad_buffer().raw(), m) += gv;
        }
        if (px.requires_grad) {
            ConstMapMat wm(pw.value.raw(), m, nn);
            Eigen::Map<Eigen::VectorXd>(px.grad_buffer().raw(), nn).noalias() += wm.transpose() * gv;
        }
    });
}

Var avgpool2(const Var& x)
{
    const auto& s = x.shape();
    if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0) {
        throw ShapeError("avgpool2 needs [C,H,W] with even H, W; got " + shape_str(s));
    }
    const std::size_t c = s[0];
    const std::size_t h = s[1] / 2;
    const std::size_t w = s[2] / 2;
    Tensor out({c, h, w});
    const auto& in = x.value();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                out.at(ch, i, j) = 0.25 * (in.at(ch, 2 * i, 2 * j) + in.at(ch, 2 * i, 2 * j + 1) +
                                           in.at(ch, 2 * i + 1, 2 * j) + in.at(ch, 2 * i + 1, 2 * j + 1));
            }
        }
    }
    return Var::make(std::move(out), {x}, [c, h, w](Node& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    const double v = 0.25 * n.grad.at(ch, i, j);
                    g.at(ch, 2 * i, 2 * j) += v;
                    g.at(ch, 2 * i, 2 * j + 1) += v;
                    g.at(ch, 2 * i + 1, 2 * j) += v;
                    g.at(ch, 2 * i + 1, 2 * j + 1) += v;
                }
            }
        }
    });
}

Var upsample2(const Var& x)
{
    const auto& s = x.shape();
    if (s.size() != 3) {
        throw ShapeError("upsample2 needs [C,H,W]; got " + shape_str(s));
    }
    const std::size_t c = s[0];
    const std::size_t h = s[1];
    const std::size_t w = s[2];
    Tensor out({c, 2 * h, 2 * w});
    const auto& in = x.value();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < 2 * h; ++i) {
            for (std::size_t j = 0; j < 2 * w; ++j) {
                out.at(ch, i, j) = in.at(ch, i / 2, j / 2);
            }
        }
    }
    return Var::make(std::move(out), {x}, [c, h, w](Node& n) {
        auto& g = parent(n, 0).grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < 2 * h; ++i) {
                for (std::size_t j = 0; j < 2 * w; ++j) {
                    g.at(ch, i / 2, j / 2) += n.grad.at(ch, i, j);
                }
            }
        }
    });
}

Var interval_weight_block(const Var& lo, const Var& hi)
{
    require_same(lo, hi, "interval_weight_block");
    const auto& s = lo.shape();
    if (s.size() < 2) {
        throw ShapeError("interval_weight_block needs rank >= 2, got " + shape_str(s));
    }
    const std::size_t rows = s[0];
    const std::size_t cols = s[1];
    const std::size_t inner = lo.value().size() / (rows * cols);
    Tensor::Shape shape = s;
    shape[0] *= 2;
    shape[1] *= 2;
    Tensor out(shape, 0.0);
    // Flat index of block (br, bc) element (r, c, q).
    auto idx = [=](std::size_t br, std::size_t bc, std::size_t r, std::size_t c, std::size_t q) {
        return ((br * rows + r) * 2 * cols + bc * cols + c) * inner + q;
    };
    const auto& lv = lo.value();
    const auto& hv = hi.value();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t q = 0; q < inner; ++q) {
                const std::size_t src = (r * cols + c) * inner + q;
                const double l = lv[src];
                const double u = hv[src];
                out[idx(0, 0, r, c, q)] = l > 0.0 ? l : 0.0;
                out[idx(0, 1, r, c, q)] = l > 0.0 ? 0.0 : l;
                out[idx(1, 0, r, c, q)] = u > 0.0 ? 0.0 : u;
                out[idx(1, 1, r, c, q)] = u > 0.0 ? u : 0.0;
            }
        }
    }
    return Var::make(std::move(out), {lo, hi}, [=](Node& n) {
        auto& pl = parent(n, 0);
        auto& ph = parent(n, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                for (std::size_t q = 0; q < inner; ++q) {
                    const std::size_t src = (r * cols + c) * inner + q;
                    if (pl.requires_grad) {
                        const bool pos = pl.value[src] > 0.0;
                        pl.grad_buffer()[src] += n.grad[idx(0, pos ? 0 : 1, r, c, q)];
                    }
                    if (ph.requires_grad) {
                        const bool pos = ph.value[src] > 0.0;
                        ph.grad_buffer()[src] += n.grad[idx(1, pos ? 1 : 0, r, c, q)];
                    }
                }
            }
        }
    });
}

} // namespace instab::ad
