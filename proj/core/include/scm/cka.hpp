#pragma once

#include <vector>

#include "scm/tensor.hpp"

namespace scm {

/// Linear Centered Kernel Alignment between two activation matrices
/// (examples x features, same example count):
///   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)  with column-centered Xc, Yc.
/// Computed through n-by-n centered Gram matrices so wide feature matrices
/// stay cheap. Throws DomainError when either input has zero variance.
double linear_cka(const Tensor& x, const Tensor& y);

/// Entry (i,j) = linear_cka(acts_a[i], acts_b[j]). All matrices must share
/// the example count.
Tensor cka_similarity_map(const std::vector<Tensor>& acts_a, const std::vector<Tensor>& acts_b);

}  // namespace scm
