#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lipforge/eigen.hpp"
#include "lipforge/matrix.hpp"

namespace lipforge::scaling {

enum class Method { SN, AOL, SLL, GAMMA, HEURISTIC_OPT };

const char* method_name(Method m);

// How a constructor certifies the condition W^T W <= T it just solved.
//   Eigen:       margin = min_eig(T - W^T W) from the Jacobi solver.
//   Certificate: margin = an analytic lower bound on that eigenvalue
//                (Gershgorin dominance for AOL/SLL, the power-iteration
//                tolerance for SN). Exact up to stated rounding slack and
//                much cheaper, so hot loops and large sizes use it.
//   Auto:        Eigen for n <= 256, Certificate above.
enum class MarginPolicy { Eigen, Certificate, Auto };

// PSD acceptance threshold shared repo-wide: a symmetric matrix with
// min_eig >= -psd_tolerance(scale) is treated as PSD, where scale is the
// Frobenius norm of the matrix being tested.
inline double psd_tolerance(double scale) { return 1e-9 * (scale > 1.0 ? scale : 1.0); }

// Diagonal of T plus the method that produced it and its feasibility
// certificate. feasibility_margin is a certified lower bound on
// min_eig(T - W^T W) (the exact eigenvalue under MarginPolicy::Eigen);
// margin_scale is max(1, ||W^T W||_F, max_i T_i) - the magnitude of the
// matrix T - W^T W that the margin is judged against.
struct ScalingVector {
    Vector diag;
    Method method = Method::AOL;
    double feasibility_margin = 0.0;
    double margin_scale = 1.0;

    bool feasible() const { return feasibility_margin >= -psd_tolerance(margin_scale); }
};

// Strictly positive per-coordinate weights (validated at construction).
struct QVector {
    Vector q;
    explicit QVector(Vector values);
};

// Diagonal of a possibly singular scaling Gamma with Gamma W^T W Gamma <= Gamma;
// zeros appear exactly where W has zero columns.
struct GammaScaling {
    Vector diag;
    double feasibility_margin = 0.0;  // min_eig(Gamma - Gamma W^T W Gamma)
    double margin_scale = 1.0;
};

// T = sigma_max(W)^2 * I. Throws ZeroWeightError for W = 0.
ScalingVector t_sn(const DenseMatrix& w, MarginPolicy policy = MarginPolicy::Auto);

// T_ii = sum_j |W^T W|_ij. Throws ZeroColumnError if W has an all-zero
// column (use gamma_variant there instead).
ScalingVector t_aol(const DenseMatrix& w, MarginPolicy policy = MarginPolicy::Auto);

// T_ii = sum_j |W^T W|_ij * q_j / q_i. Same zero-column policy as t_aol.
ScalingVector t_sll(const DenseMatrix& w, const QVector& q,
                    MarginPolicy policy = MarginPolicy::Auto);

// Gamma_ii = 0 where row i of W^T W is entirely zero, else the reciprocal of
// that row's absolute sum. Zero columns are permitted; the feasibility
// condition Gamma W^T W Gamma <= Gamma is checked eigendirectly.
GammaScaling gamma_variant(const DenseMatrix& w);

// min_eig(T - W^T W) via the eigensolver — the independent feasibility
// oracle (never reads the stored margin).
double check_feasible(const DenseMatrix& w, const ScalingVector& t);

// (trace metric, Frobenius metric) of orthogonality deviation:
//   trace = tr(I - T^{-1/2} W^T W T^{-1/2}),  fro = ||T^{-1/2} W^T W T^{-1/2} - I||_F.
// Requires t feasible for w (FeasibilityError otherwise); asserts the
// identity fro <= trace + 1e-9.
std::pair<double, double> ortho_distance(const DenseMatrix& w, const ScalingVector& t);

// `count` diagonals T with T_ii = (AOL value)_i * (1 + u_i), u_i ~ U[0, 2]:
// uniform multiplicative samples from the diagonally-dominant feasible set
// (T - W^T W diagonally dominant with non-negative diagonal), used as the
// optimality oracle against the AOL choice.
std::vector<ScalingVector> sample_feasible_dd(const DenseMatrix& w, std::size_t count,
                                              std::uint64_t rng_seed);

// Random-restart coordinate descent over log T_ii for the Frobenius
// orthogonality objective, over all feasible diagonal T (PSD feasibility
// checked with min_eig, not just diagonal dominance). Starts from the AOL
// diagonal, so the result never scores worse than AOL. Enforces n <= 64
// (ScaleError above). `iters` caps the total number of candidate evaluations.
ScalingVector t_opt_heuristic(const DenseMatrix& w, std::size_t iters,
                              std::uint64_t rng_seed);

}  // namespace lipforge::scaling
