#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace instab {

/// Cache-line aligned allocation. Vectorised reductions peel a prefix that
/// depends on the address, so unaligned buffers give run-to-run bit drift.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with shape metadata.
///
/// Images are stored as [channels, height, width]; vectors as [n].
/// A scalar is a tensor of shape [1].
class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, const std::vector<double>& data);
    Tensor(Shape shape, AlignedBuffer data);

    static Tensor scalar(double value) { return Tensor({1}, value); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }
    const AlignedBuffer& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Element of a rank-3 tensor.
    double& at(std::size_t c, std::size_t h, std::size_t w)
    {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const
    {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;
    void fill(double value);

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    AlignedBuffer data_;
};

std::size_t shape_numel(const Tensor::Shape& shape);
std::string shape_str(const Tensor::Shape& shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

double sum(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);
double min_value(const Tensor& t);
double max_value(const Tensor& t);
double mean(const Tensor& t);
double squared_norm(const Tensor& t);
Tensor abs(Tensor t);
Tensor clip(Tensor t, double lo, double hi);
/// Largest absolute elementwise difference.
double max_abs_diff(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);
/// Peak signal-to-noise ratio in dB for the given peak value.
double psnr(const Tensor& estimate, const Tensor& reference, double peak = 1.0);

} // namespace instab
