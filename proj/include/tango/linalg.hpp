#pragma once

#include <cmath>

#include "tango/common.hpp"

namespace tango {

inline bool is_symmetric(const Matrix& a, double tol = 1e-12) {
    if (a.rows() != a.cols()) return false;
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, a.cwiseAbs().maxCoeff());
}

struct SymmetricEigen {
    Vector values;   // ascending
    Matrix vectors;  // columns
};

inline SymmetricEigen symmetric_eigen(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
    if (solver.info() != Eigen::Success) {
        throw singular_matrix_error("symmetric eigendecomposition failed");
    }
    return {solver.eigenvalues(), solver.eigenvectors()};
}

inline double smallest_eigenvalue(const Matrix& a) { return symmetric_eigen(a).values.minCoeff(); }

inline double largest_eigenvalue(const Matrix& a) { return symmetric_eigen(a).values.maxCoeff(); }

// Operator norm. Symmetric matrices go through the eigendecomposition,
// anything else through the SVD.
inline double operator_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    if (is_symmetric(m, 1e-10)) {
        return symmetric_eigen(m).values.cwiseAbs().maxCoeff();
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues().maxCoeff();
}

// Solve A x = b for symmetric A with smallest eigenvalue above min_eigenvalue.
// Uses the spectral factorization; no inverse matrix is formed.
inline Vector spd_solve(const Matrix& a, const Vector& b, double min_eigenvalue = 1e-10) {
    const SymmetricEigen eig = symmetric_eigen(a);
    if (eig.values.minCoeff() <= min_eigenvalue) {
        throw singular_matrix_error("matrix is singular or indefinite (smallest eigenvalue " +
                                    format_real(eig.values.minCoeff()) + ")");
    }
    return eig.vectors * (eig.values.cwiseInverse().asDiagonal() * (eig.vectors.transpose() * b));
}

// Explicit inverse for the few places that need the matrix itself (e.g. the
// terminal condition of the backward B-matrix recursion).
inline Matrix spd_inverse(const Matrix& a, double min_eigenvalue = 1e-10) {
    const SymmetricEigen eig = symmetric_eigen(a);
    if (eig.values.minCoeff() <= min_eigenvalue) {
        throw singular_matrix_error("matrix is singular or indefinite (smallest eigenvalue " +
                                    format_real(eig.values.minCoeff()) + ")");
    }
    return eig.vectors * eig.values.cwiseInverse().asDiagonal() * eig.vectors.transpose();
}

inline Matrix spd_sqrt(const Matrix& a, double min_eigenvalue = 1e-10) {
    const SymmetricEigen eig = symmetric_eigen(a);
    if (eig.values.minCoeff() <= min_eigenvalue) {
        throw singular_matrix_error("matrix has no SPD square root (smallest eigenvalue " +
                                    format_real(eig.values.minCoeff()) + ")");
    }
    return eig.vectors * eig.values.cwiseSqrt().asDiagonal() * eig.vectors.transpose();
}

// Smallest rho such that s <= rho * a in the semidefinite order, i.e. the
// largest generalized eigenvalue of (s, a). Both inputs symmetric, a PD.
inline double generalized_max_eigenvalue(const Matrix& s, const Matrix& a) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(s, a);
    if (solver.info() != Eigen::Success) {
        throw singular_matrix_error("generalized eigendecomposition failed");
    }
    return solver.eigenvalues().maxCoeff();
}

}  // namespace tango
