#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "scm/errors.hpp"

namespace scm {

/// Dense n-dimensional array of doubles in row-major order.
///
/// Tensors are plain values: copying copies the data, and nothing inside the
/// library mutates a tensor it did not create. Gradients live on the tape
/// (GradientTape), not here.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<int> shape);

    Tensor(std::vector<int> shape, std::vector<double> data);

    /// 1-D tensor from values, e.g. Tensor::row({1.0, 2.0, 3.0}).
    static Tensor row(std::vector<double> values);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    const double& at(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const double& at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    /// Value of the single element of a 1-element tensor.
    double item() const;

    /// Same data, new shape (element count must match).
    Tensor reshaped(std::vector<int> new_shape) const;

    bool all_finite() const;

    /// Throws NumericError naming `context` if any element is NaN/Inf.
    void require_finite(const std::string& context) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_string() const;

    static std::int64_t shape_numel(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace scm
