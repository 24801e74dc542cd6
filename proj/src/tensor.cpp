#include "instab/tensor.hpp"

#include "instab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace instab {

std::size_t shape_numel(const Tensor::Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Tensor::Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    for (auto d : shape_) {
        if (d == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, const std::vector<double>& data) : Tensor(std::move(shape), AlignedBuffer(data.begin(), data.end()))
{
}

Tensor::Tensor(Shape shape, AlignedBuffer data) : shape_(std::move(shape)), data_(std::move(data))
{
    for (auto d : shape_) {
        if (d == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
    }
}

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    }
    return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const
{
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value)
{
    std::fill(data_.begin(), data_.end(), value);
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other)
{
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] -= other.data_[i];
    }
    return *this;
}

Tensor& Tensor::operator*=(double s)
{
    for (auto& v : data_) {
        v *= s;
    }
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b)
{
    a += b;
    return a;
}

Tensor operator-(Tensor a, const Tensor& b)
{
    a -= b;
    return a;
}

Tensor operator*(Tensor a, double s)
{
    a *= s;
    return a;
}

double sum(const Tensor& t)
{
    return std::accumulate(t.data().begin(), t.data().end(), 0.0);
}

double dot(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size()) {
        throw ShapeError("dot: size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double min_value(const Tensor& t)
{
    return t.empty() ? 0.0 : *std::min_element(t.data().begin(), t.data().end());
}

double max_value(const Tensor& t)
{
    return t.empty() ? 0.0 : *std::max_element(t.data().begin(), t.data().end());
}

double mean(const Tensor& t)
{
    return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.size());
}

double squared_norm(const Tensor& t)
{
    return dot(t, t);
}

Tensor abs(Tensor t)
{
    for (auto& v : t.data()) {
        v = std::abs(v);
    }
    return t;
}

Tensor clip(Tensor t, double lo, double hi)
{
    for (auto& v : t.data()) {
        v = std::clamp(v, lo, hi);
    }
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

double mse(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double psnr(const Tensor& estimate, const Tensor& reference, double peak)
{
    const double err = mse(estimate, reference);
    if (err == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / err);
}

} // namespace instab
