// Dense linear-algebra helpers shared by the estimators and the asymptotics.
//
// Convention: vec() stacks columns (column-major). Every Jacobian in this
// library is written against that convention, so the commutation matrix
// satisfies  commutation_matrix(p, q) * vec(A) == vec(A^T)  for p x q A.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace smm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Column-stacked copy of M.
inline Vector vec(const Matrix& M)
{
    return Eigen::Map<const Vector>(M.data(), M.size());
}

/// Inverse of vec(): reshape a vector into a rows x cols matrix, column-major.
inline Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols)
{
    if (v.size() != rows * cols)
        throw std::invalid_argument("unvec: size mismatch");
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Matrix kron(const Matrix& A, const Matrix& B)
{
    Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

/// The pq x pq permutation K with K * vec(A) = vec(A^T) for every p x q matrix A.
inline Matrix commutation_matrix(Eigen::Index p, Eigen::Index q)
{
    if (p < 1 || q < 1)
        throw std::invalid_argument("commutation_matrix: dimensions must be positive");
    Matrix K = Matrix::Zero(p * q, p * q);
    // A(i,j) sits at vec index i + j*p; A^T(j,i) sits at j + i*q.
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < q; ++j)
            K(j + i * q, i + j * p) = 1.0;
    return K;
}

inline Matrix symmetrize(const Matrix& A)
{
    if (A.rows() != A.cols())
        throw std::invalid_argument("symmetrize: matrix is not square");
    Matrix S = 0.5 * (A + A.transpose());
    // force exact symmetry against rounding in the two halves
    for (Eigen::Index j = 0; j < S.cols(); ++j)
        for (Eigen::Index i = j + 1; i < S.rows(); ++i)
            S(j, i) = S(i, j);
    return S;
}

/// Cholesky-based test. tol <= 0 selects 1e-12 * max|diag|.
/// Asymmetry beyond tol (relative to the largest entry) returns false.
inline bool is_positive_definite(const Matrix& A, double tol = -1.0)
{
    if (A.rows() != A.cols() || A.size() == 0)
        return false;
    if (!A.allFinite())
        return false;
    const double scale = std::max(A.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if (tol <= 0.0)
        tol = 1e-12 * std::max(A.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > std::max(tol, 1e-12 * scale))
        return false;

    // Hand-rolled so that the pivot threshold is ours, not Eigen's.
    const Eigen::Index n = A.rows();
    Matrix L = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double pivot = A(j, j) - L.row(j).head(j).squaredNorm();
        if (!(pivot > tol))
            return false;
        L(j, j) = std::sqrt(pivot);
        for (Eigen::Index i = j + 1; i < n; ++i)
            L(i, j) = (A(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
    }
    return true;
}

struct LinearSolve {
    Matrix x;
    double rcond = 0.0;     // reciprocal 1-norm condition estimate of A
    bool singular = true;
};

/// Reciprocal condition estimates below this are treated as singular.
inline constexpr double kSingularRcond = 1e-12;

/// Solves A X = B by partial-pivot LU. `singular` is set when the reciprocal
/// condition estimate falls under kSingularRcond; X is still filled when finite.
inline LinearSolve solve_linear(const Matrix& A, const Matrix& B)
{
    if (A.rows() != A.cols())
        throw std::invalid_argument("solve_linear: matrix is not square");
    if (A.rows() != B.rows())
        throw std::invalid_argument("solve_linear: right-hand side is not conformable");

    LinearSolve out;
    if (!A.allFinite() || !B.allFinite())
        return out;
    Eigen::PartialPivLU<Matrix> lu(A);
    out.rcond = lu.rcond();
    out.x = lu.solve(B);
    out.singular = !(out.rcond >= kSingularRcond) || !out.x.allFinite();
    return out;
}

/// Solves X A = B, i.e. X = B A^{-1}, via the transposed system.
inline LinearSolve solve_right(const Matrix& B, const Matrix& A)
{
    LinearSolve t = solve_linear(A.transpose(), B.transpose());
    t.x.transposeInPlace();
    return t;
}

} // namespace smm
