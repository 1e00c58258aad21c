#pragma once

#include <aftn/error.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace aftn {

using Shape = std::vector<std::size_t>;

/// Packet-aligned storage, so Eigen kernels over it sum in a fixed order.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
    out << ']';
    return out.str();
}

/// Dense row-major array of doubles with a same-shape gradient buffer.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        for (auto d : shape_)
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
        data_.assign(shape_size(shape_), fill);
        grad_.assign(data_.size(), 0.0);
    }

    Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
        if (values.size() != data_.size())
            throw DimensionError("tensor of shape " + shape_str(shape_) + " cannot hold " +
                                 std::to_string(values.size()) + " values");
        std::copy(values.begin(), values.end(), data_.begin());
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> grad() noexcept { return grad_; }
    std::span<const double> grad() const noexcept { return grad_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

    /// Same data, different shape with equal element count.
    void reshape(Shape shape) {
        if (shape_size(shape) != data_.size())
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        shape_ = std::move(shape);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    Shape shape_;
    Buffer data_;
    Buffer grad_;
};

inline void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
}

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
    if (t.shape() != expected)
        throw DimensionError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                             shape_str(t.shape()));
}

/// Trainable tensor with Adam moment buffers.
struct Param {
    Tensor value;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::size_t step_count = 0;
    bool decay_enabled = false;

    Param() = default;
    explicit Param(Shape shape, bool decay = false)
        : value(std::move(shape)), adam_m(value.size(), 0.0), adam_v(value.size(), 0.0), decay_enabled(decay) {}

    const Shape& shape() const noexcept { return value.shape(); }
    std::size_t size() const noexcept { return value.size(); }
};

} // namespace aftn
