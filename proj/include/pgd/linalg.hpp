#pragma once

// Dense double-precision kernel shared by every other module. Storage and
// products come from Eigen; this header fixes the layout (row-major
// matrices) and adds the small set of solvers the toolkit needs.

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "pgd/error.hpp"

namespace pgd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Augmented activation [a; 1] with the bias coordinate appended last.
inline Vec augment(const Vec& a) {
  Vec z(a.size() + 1);
  z.head(a.size()) = a;
  z[a.size()] = 1.0;
  return z;
}

/// argmin_X ||A X - B||_F^2 + lambda ||X||_F^2 through the normal equations
/// (A^T A + lambda I) X = A^T B, solved by Cholesky.
///
/// With lambda > 0 a failed factorization is retried once with
/// 1e-12 * trace(A^T A) / p added to the diagonal. With lambda == 0 the
/// Gram matrix must be numerically invertible; otherwise SingularSystem.
inline Matrix solve_ridge(const Matrix& a, const Matrix& b, double lambda) {
  require(a.rows() >= 1, ErrorKind::dimension, "solve_ridge: A has no rows");
  require(a.rows() == b.rows(), ErrorKind::dimension,
          "solve_ridge: A is " + shape_str(a.rows(), a.cols()) + " but B is " +
              shape_str(b.rows(), b.cols()));
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::domain,
          "solve_ridge: lambda must be finite and nonnegative");

  const Eigen::Index p = a.cols();
  Eigen::MatrixXd gram = a.transpose() * a;
  Eigen::MatrixXd rhs = a.transpose() * b;
  gram.diagonal().array() += lambda;

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  bool ok = llt.info() == Eigen::Success;
  if (lambda == 0.0) {
    // Reciprocal condition estimate of the Gram matrix.
    if (!ok || llt.rcond() < 1e-13)
      fail(ErrorKind::singular_system,
           "solve_ridge: A^T A is numerically singular and lambda = 0");
  } else if (!ok) {
    const double jitter = 1e-12 * gram.trace() / static_cast<double>(p);
    gram.diagonal().array() += jitter;
    llt.compute(gram);
    if (llt.info() != Eigen::Success)
      fail(ErrorKind::singular_system, "solve_ridge: Cholesky failed after jitter");
  }
  Matrix x = llt.solve(rhs);
  if (!x.allFinite())
    fail(ErrorKind::singular_system, "solve_ridge: non-finite solution");
  return x;
}

struct SvdResult {
  Matrix u;        // n x r, orthonormal columns
  Vec singulars;   // r, descending
  Matrix vt;       // r x p
};

/// Leading r singular triplets of A.
inline SvdResult truncated_svd(const Matrix& a, Eigen::Index r) {
  const Eigen::Index k = std::min(a.rows(), a.cols());
  require(r >= 1 && r <= k, ErrorKind::dimension,
          "truncated_svd: rank " + std::to_string(r) + " outside [1, " +
              std::to_string(k) + "]");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(a),
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out;
  out.u = svd.matrixU().leftCols(r);
  out.singulars = svd.singularValues().head(r);
  out.vt = svd.matrixV().leftCols(r).transpose();
  return out;
}

/// Singular values only, in descending order.
inline Vec singular_values(const Matrix& a) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(a)};
  return svd.singularValues();
}

inline double cosine(const Vec& u, const Vec& v) {
  require(u.size() == v.size(), ErrorKind::dimension,
          "cosine: dimensions " + std::to_string(u.size()) + " and " +
              std::to_string(v.size()));
  const double nu = u.norm();
  const double nv = v.norm();
  require(nu > 0.0 && nv > 0.0, ErrorKind::zero_norm, "cosine: zero-norm input");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

}  // namespace pgd
