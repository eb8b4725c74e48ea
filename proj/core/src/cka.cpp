#include "scm/cka.hpp"

#include <cmath>

namespace scm {

namespace {

// Doubly-centered Gram matrix H (X X^T) H, equal to Xc Xc^T for column-centered Xc.
Tensor centered_gram(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("linear_cka: expected [n,p] matrix");
    const int n = x.dim(0), p = x.dim(1);
    if (n < 2) throw DomainError("linear_cka: need at least 2 examples");
    Tensor gram({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            double dot = 0.0;
            const std::int64_t ri = static_cast<std::int64_t>(i) * p;
            const std::int64_t rj = static_cast<std::int64_t>(j) * p;
            for (int f = 0; f < p; ++f) dot += x[ri + f] * x[rj + f];
            gram.at(i, j) = dot;
            gram.at(j, i) = dot;
        }
    }
    std::vector<double> row_mean(static_cast<std::size_t>(n), 0.0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) row_mean[static_cast<std::size_t>(i)] += gram.at(i, j);
        row_mean[static_cast<std::size_t>(i)] /= n;
        total += row_mean[static_cast<std::size_t>(i)];
    }
    total /= n;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            gram.at(i, j) -= row_mean[static_cast<std::size_t>(i)] +
                             row_mean[static_cast<std::size_t>(j)] - total;
        }
    }
    return gram;
}

double frobenius_inner(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

double linear_cka(const Tensor& x, const Tensor& y) {
    if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0)) {
        throw ShapeError("linear_cka: example counts differ");
    }
    const Tensor kx = centered_gram(x);
    const Tensor ky = centered_gram(y);
    const double xx = frobenius_inner(kx, kx);
    const double yy = frobenius_inner(ky, ky);
    if (xx <= 0.0 || yy <= 0.0) {
        throw DomainError("linear_cka: zero-variance input, similarity undefined");
    }
    return frobenius_inner(kx, ky) / std::sqrt(xx * yy);
}

Tensor cka_similarity_map(const std::vector<Tensor>& acts_a, const std::vector<Tensor>& acts_b) {
    if (acts_a.empty() || acts_b.empty()) throw ShapeError("cka_similarity_map: empty layer list");
    const int n = acts_a[0].dim(0);
    for (const Tensor& t : acts_a) {
        if (t.dim(0) != n) throw ShapeError("cka_similarity_map: mismatched example counts");
    }
    for (const Tensor& t : acts_b) {
        if (t.dim(0) != n) throw ShapeError("cka_similarity_map: mismatched example counts");
    }
    const int la = static_cast<int>(acts_a.size());
    const int lb = static_cast<int>(acts_b.size());

    std::vector<Tensor> grams_a, grams_b;
    grams_a.reserve(static_cast<std::size_t>(la));
    for (const Tensor& t : acts_a) grams_a.push_back(centered_gram(t));
    grams_b.reserve(static_cast<std::size_t>(lb));
    for (const Tensor& t : acts_b) grams_b.push_back(centered_gram(t));

    Tensor map({la, lb});
    for (int i = 0; i < la; ++i) {
        const double xx = frobenius_inner(grams_a[static_cast<std::size_t>(i)],
                                          grams_a[static_cast<std::size_t>(i)]);
        for (int j = 0; j < lb; ++j) {
            const double yy = frobenius_inner(grams_b[static_cast<std::size_t>(j)],
                                              grams_b[static_cast<std::size_t>(j)]);
            if (xx <= 0.0 || yy <= 0.0) {
                throw DomainError("cka_similarity_map: zero-variance layer");
            }
            map.at(i, j) = frobenius_inner(grams_a[static_cast<std::size_t>(i)],
                                           grams_b[static_cast<std::size_t>(j)]) /
                           std::sqrt(xx * yy);
        }
    }
    return map;
}

}  // namespace scm
