#include "lcsurv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "lcsurv/error.hpp"

namespace lcsurv {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill, Dtype dtype)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill), dtype_(dtype) {
    for (auto d : shape_) {
        if (d == 0) throw DimensionError("tensor shape " + shape_string(shape_) + " has a zero axis");
    }
    round_to_dtype();
}

Tensor::Tensor(Shape shape, std::vector<double> data, Dtype dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }
    round_to_dtype();
}

Tensor Tensor::from(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& v : t.data_) v = normal(rng);
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
}

void Tensor::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
    round_to_dtype();
}

void Tensor::set_dtype(Dtype dtype) {
    dtype_ = dtype;
    round_to_dtype();
}

void Tensor::round_to_dtype() {
    if (dtype_ == Dtype::f32) {
        for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

Tensor Tensor::slice(std::size_t index) const {
    if (shape_.empty() || index >= shape_[0]) {
        throw DimensionError("slice " + std::to_string(index) + " out of range for shape " + shape_string(shape_));
    }
    Shape inner(shape_.begin() + 1, shape_.end());
    if (inner.empty()) inner = {1};
    const std::size_t stride = data_.size() / shape_[0];
    std::vector<double> part(data_.begin() + static_cast<std::ptrdiff_t>(index * stride),
                             data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * stride));
    return Tensor(std::move(inner), std::move(part), dtype_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("cannot stack zero tensors");
    const Shape& inner = parts.front().shape();
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const auto& p : parts) {
        if (p.shape() != inner) {
            throw DimensionError("stack: shape " + shape_string(p.shape()) + " differs from " + shape_string(inner));
        }
        data.insert(data.end(), p.raw().begin(), p.raw().end());
    }
    return Tensor(std::move(shape), std::move(data), parts.front().dtype());
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace lcsurv
