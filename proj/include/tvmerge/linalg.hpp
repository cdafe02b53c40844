#pragma once

#include <cstdint>
#include <vector>

#include "tvmerge/mat.hpp"

namespace tvmerge::linalg {

// Thin SVD factors: u (rows x r) and v (cols x r) with orthonormal columns,
// s non-negative and non-increasing. Signs are canonicalized so each column
// of u has a non-negative entry of largest magnitude, making outputs
// reproducible despite the inherent sign ambiguity.
struct SvdFactors {
    Mat u;
    std::vector<double> s;
    Mat v;

    std::int64_t rank() const { return static_cast<std::int64_t>(s.size()); }
};

SvdFactors svd(const Mat& m);

SvdFactors truncate(const SvdFactors& f, std::int64_t k);

// Frobenius-nearest matrix with orthonormal columns (orthogonal Procrustes):
// for input A * Sigma * B^T the solution is A * B^T. Requires cols <= rows
// and full column rank (smallest singular value >= 1e-10 * largest).
Mat orthogonalize(const Mat& u_concat);

Mat reconstruct(const SvdFactors& f);

// Smallest k with sum_{i<=k} s_i^2 >= energy * sum_i s_i^2.
std::int64_t effective_rank(const std::vector<double>& s, double energy);

}  // namespace tvmerge::linalg
