#pragma once

#include "scm/tensor.hpp"

namespace scm::ops {

/// Epsilon used inside every normalization (instance norm, layer norm).
constexpr double kNormEpsilon = 1e-5;

/// Numerically stabilized softmax along `axis` (max-subtraction).
/// Slices along the axis sum to 1. Throws NumericError on non-finite input.
Tensor softmax(const Tensor& x, int axis);

/// Zero-mean unit-variance normalization over the whole tensor,
/// epsilon-stabilized. A single-element tensor passes through unchanged.
Tensor instance_normalize(const Tensor& x);

/// Per-row (last axis) zero-mean unit-variance followed by gain/bias affine.
/// gain and bias must match the last extent of x.
Tensor layer_normalize(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Robust regression loss: 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

}  // namespace scm::ops
