#include "scm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace scm {

std::int64_t Tensor::shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
    }
}

Tensor Tensor::row(std::vector<double> values) {
    if (values.empty()) throw ShapeError("tensor cannot be empty");
    const int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a 1-element tensor, shape is " + shape_string());
    }
    return data_[0];
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_string() + " to new element count");
    }
    return Tensor(std::move(new_shape), data_);
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) throw NumericError(context + ": non-finite value in tensor");
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

}  // namespace scm
