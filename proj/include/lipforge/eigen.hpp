#pragma once

#include "lipforge/matrix.hpp"

namespace lipforge {

struct SymEigResult {
    Vector eigenvalues;       // ascending
    DenseMatrix eigenvectors; // orthonormal columns, aligned with eigenvalues
    bool has_vectors = false;
};

// Symmetric eigensolver: cyclic Jacobi rotations, iterated until the
// off-diagonal Frobenius norm falls below 1e-12 * ||A||_F.
// Input must be symmetric within 1e-12 relative skew (else SymmetryError);
// it is then symmetrized exactly via (A + A^T)/2 before iterating.
// Throws ConvergenceError (carrying the current smallest diagonal value)
// if 100 sweeps do not converge.
SymEigResult sym_eig(const DenseMatrix& a, bool want_vectors = false);

// Smallest eigenvalue via sym_eig.
double min_eig(const DenseMatrix& a);

// Spectral norm sigma_max(W) by power iteration on the Gram matrix W^T W
// from the deterministic seed vector (1, 1/2, 1/3, ...)/norm. Returns an
// estimate within tol * sigma_max. Throws ConvergenceError carrying the last
// estimate when max_iter is exhausted first.
double spectral_norm(const DenseMatrix& w, double tol = 1e-10,
                     std::size_t max_iter = 10000);

// True iff a_ii > 0 and a_ii >= sum_{j != i} |a_ij| for every row
// (strict diagonal positivity, weak dominance).
bool is_diag_dominant_posdiag(const DenseMatrix& a);

// min_i (a_ii - sum_{j != i} |a_ij|): by the Gershgorin circle theorem a
// lower bound on every eigenvalue of a symmetric matrix.
double gershgorin_lower_bound(const DenseMatrix& a);

}  // namespace lipforge
