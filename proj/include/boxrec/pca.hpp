#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "boxrec/tensor.hpp"

namespace boxrec {

// Projects the rows of X onto its top `out_dim` principal directions
// (column-centered, cyclic Jacobi on the covariance). With out_dim equal to
// the input width this is an orthogonal change of basis. Eigenvector signs
// are fixed by making each vector's largest-magnitude entry positive.
inline Tensor<double> pca_project(const Tensor<double>& x, std::size_t out_dim) {
  const std::size_t n = x.rows, d = x.cols;
  if (out_dim == 0 || out_dim > d) throw std::invalid_argument("pca: output dimension out of range");
  if (n == 0) throw std::invalid_argument("pca: empty input");

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x.at(r, c);
  for (auto& m : mean) m /= static_cast<double>(n);

  // Covariance (unnormalized; scaling does not change eigenvectors).
  Tensor<double> cov(d, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x.at(r, i) - mean[i];
      for (std::size_t j = i; j < d; ++j) cov.at(i, j) += xi * (x.at(r, j) - mean[j]);
    }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) cov.at(i, j) = cov.at(j, i);

  Tensor<double> vecs(d, d);
  for (std::size_t i = 0; i < d; ++i) vecs.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += cov.at(i, j) * cov.at(i, j);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = cov.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (cov.at(q, q) - cov.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = cov.at(k, p), akq = cov.at(k, q);
          cov.at(k, p) = c * akp - s * akq;
          cov.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = cov.at(p, k), aqk = cov.at(q, k);
          cov.at(p, k) = c * apk - s * aqk;
          cov.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = vecs.at(k, p), vkq = vecs.at(k, q);
          vecs.at(k, p) = c * vkp - s * vkq;
          vecs.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return cov.at(a, a) > cov.at(b, b); });

  Tensor<double> out(n, out_dim);
  for (std::size_t k = 0; k < out_dim; ++k) {
    const std::size_t col = order[k];
    double best = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      if (std::abs(vecs.at(i, col)) > std::abs(best)) best = vecs.at(i, col);
    const double sign = best < 0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += (x.at(r, i) - mean[i]) * vecs.at(i, col);
      out.at(r, k) = sign * dot;
    }
  }
  return out;
}

}  // namespace boxrec
