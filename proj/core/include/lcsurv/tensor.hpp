#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lcsurv {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

enum class Dtype : std::uint8_t { f64 = 0, f32 = 1 };

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major n-dimensional array. Storage is always double; an f32 tensor
// keeps every element representable as a float (see round_to_dtype).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, Dtype dtype = Dtype::f64);
    Tensor(Shape shape, std::vector<double> data, Dtype dtype = Dtype::f64);

    static Tensor from(std::initializer_list<double> values);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    Dtype dtype() const noexcept { return dtype_; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& raw() noexcept { return data_; }
    const std::vector<double>& raw() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(double value);
    void zero() { fill(0.0); }
    void set_dtype(Dtype dtype);
    void round_to_dtype();

    Tensor reshaped(Shape shape) const;
    // Copy of the i-th slice along axis 0.
    Tensor slice(std::size_t index) const;
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
    Dtype dtype_ = Dtype::f64;
};

// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace lcsurv
