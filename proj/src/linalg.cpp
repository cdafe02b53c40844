#include "tvmerge/linalg.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace tvmerge::linalg {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajorMatrix>;

namespace {

Mat from_eigen(const Eigen::MatrixXd& m) {
    Mat out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    Eigen::Map<RowMajorMatrix>(out.data(), m.rows(), m.cols()) = m;
    return out;
}

void check_finite(const Mat& m) {
    for (double v : m.values())
        if (!std::isfinite(v)) throw MergeError(ErrorKind::NonFiniteInput, "matrix contains NaN or Inf");
}

// Flip u/v column pairs so the largest-magnitude entry of each u column is
// non-negative; ties resolved by the first occurrence.
void canonicalize_signs(Eigen::MatrixXd& u, Eigen::MatrixXd& v) {
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        Eigen::Index imax = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            const double a = std::fabs(u(i, j));
            if (a > best) {
                best = a;
                imax = i;
            }
        }
        if (u(imax, j) < 0.0) {
            u.col(j) = -u.col(j);
            v.col(j) = -v.col(j);
        }
    }
}

}  // namespace

SvdFactors svd(const Mat& m) {
    if (m.rows() == 0 || m.cols() == 0) throw MergeError(ErrorKind::EmptyMatrix, "svd of empty matrix");
    check_finite(m);

    ConstMap mapped(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
    Eigen::BDCSVD<Eigen::MatrixXd> solver(mapped, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (solver.info() != Eigen::Success)
        throw MergeError(ErrorKind::ConvergenceFailure, "svd did not converge");

    Eigen::MatrixXd u = solver.matrixU();
    Eigen::MatrixXd v = solver.matrixV();
    canonicalize_signs(u, v);

    SvdFactors out;
    out.u = from_eigen(u);
    out.v = from_eigen(v);
    out.s.assign(solver.singularValues().data(), solver.singularValues().data() + solver.singularValues().size());
    return out;
}

SvdFactors truncate(const SvdFactors& f, std::int64_t k) {
    if (k < 1 || k > f.rank())
        throw MergeError(ErrorKind::RankOutOfRange,
                         "truncation rank " + std::to_string(k) + " outside [1, " + std::to_string(f.rank()) + "]");
    const std::size_t kk = static_cast<std::size_t>(k);
    SvdFactors out;
    out.u = Mat(f.u.rows(), kk);
    out.v = Mat(f.v.rows(), kk);
    for (std::size_t r = 0; r < f.u.rows(); ++r)
        for (std::size_t c = 0; c < kk; ++c) out.u(r, c) = f.u(r, c);
    for (std::size_t r = 0; r < f.v.rows(); ++r)
        for (std::size_t c = 0; c < kk; ++c) out.v(r, c) = f.v(r, c);
    out.s.assign(f.s.begin(), f.s.begin() + k);
    return out;
}

Mat orthogonalize(const Mat& u_concat) {
    if (u_concat.rows() == 0 || u_concat.cols() == 0)
        throw MergeError(ErrorKind::EmptyMatrix, "orthogonalize of empty matrix");
    if (u_concat.cols() > u_concat.rows())
        throw MergeError(ErrorKind::TooManyColumns,
                         "cannot orthonormalize " + std::to_string(u_concat.cols()) + " columns in dimension " +
                             std::to_string(u_concat.rows()));
    check_finite(u_concat);

    ConstMap mapped(u_concat.data(), static_cast<Eigen::Index>(u_concat.rows()),
                    static_cast<Eigen::Index>(u_concat.cols()));
    Eigen::BDCSVD<Eigen::MatrixXd> solver(mapped, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (solver.info() != Eigen::Success)
        throw MergeError(ErrorKind::ConvergenceFailure, "svd did not converge");

    const auto& s = solver.singularValues();
    if (s(0) <= 0.0 || s(s.size() - 1) < 1e-10 * s(0))
        throw MergeError(ErrorKind::RankDeficient, "concatenated singular vectors are numerically rank-deficient");

    return from_eigen(solver.matrixU() * solver.matrixV().transpose());
}

Mat reconstruct(const SvdFactors& f) {
    const std::size_t r = f.s.size();
    if (f.u.cols() != r || f.v.cols() != r)
        throw MergeError(ErrorKind::ShapeMismatch, "svd factors have inconsistent rank");
    ConstMap u(f.u.data(), static_cast<Eigen::Index>(f.u.rows()), static_cast<Eigen::Index>(r));
    ConstMap v(f.v.data(), static_cast<Eigen::Index>(f.v.rows()), static_cast<Eigen::Index>(r));
    Eigen::Map<const Eigen::VectorXd> s(f.s.data(), static_cast<Eigen::Index>(r));
    return from_eigen(u * s.asDiagonal() * v.transpose());
}

std::int64_t effective_rank(const std::vector<double>& s, double energy) {
    if (energy <= 0.0 || energy > 1.0)
        throw MergeError(ErrorKind::InvalidArgument, "energy must be in (0, 1]");
    double total = 0.0;
    for (double v : s) total += v * v;
    if (total <= 0.0) throw MergeError(ErrorKind::AllZeroSpectrum, "all singular values are zero");
    const double target = energy * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        acc += s[i] * s[i];
        if (acc >= target) return static_cast<std::int64_t>(i + 1);
    }
    return static_cast<std::int64_t>(s.size());  // round-off fallback
}

}  // namespace tvmerge::linalg
