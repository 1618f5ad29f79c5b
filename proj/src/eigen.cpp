#include "lipforge/eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace lipforge {

namespace {

void require_square(const DenseMatrix& a, const char* op) {
    if (a.rows() != a.cols()) {
        throw DimensionError(std::string(op) + ": matrix is " + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + ", expected square");
    }
}

double offdiag_frobenius(const DenseMatrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) acc += a(i, j) * a(i, j);
    return std::sqrt(acc);
}

}  // namespace

SymEigResult sym_eig(const DenseMatrix& a, bool want_vectors) {
    require_square(a, "sym_eig");
    const std::size_t n = a.rows();
    const double fro = frobenius_norm(a);

    double max_skew = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            max_skew = std::max(max_skew, std::fabs(a(i, j) - a(j, i)));
    if (max_skew > 1e-12 * fro) {
        throw SymmetryError("sym_eig: input skew " + std::to_string(max_skew) +
                            " exceeds 1e-12 relative tolerance");
    }

    // Exact no-op for already-symmetric input: 0.5*(x + x) == x.
    DenseMatrix b(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) b(i, j) = 0.5 * (a(i, j) + a(j, i));

    DenseMatrix v;
    if (want_vectors) v = DenseMatrix::identity(n);

    const double conv_thresh = 1e-12 * fro;
    // Entries all below conv_thresh/n guarantee off-diagonal Frobenius <= conv_thresh.
    const double skip_thresh = (n > 0) ? conv_thresh / static_cast<double>(n) : 0.0;

    bool converged = n <= 1 || offdiag_frobenius(b) <= conv_thresh;
    for (std::size_t sweep = 0; sweep < 100 && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = b(p, q);
                if (std::fabs(apq) <= skip_thresh) continue;
                const double app = b(p, p);
                const double aqq = b(q, q);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0)
                                     ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                     : -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                b(p, p) = app - t * apq;
                b(q, q) = aqq + t * apq;
                b(p, q) = 0.0;
                b(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = b(k, p);
                    const double akq = b(k, q);
                    b(k, p) = c * akp - s * akq;
                    b(p, k) = b(k, p);
                    b(k, q) = s * akp + c * akq;
                    b(q, k) = b(k, q);
                }
                if (want_vectors) {
                    for (std::size_t k = 0; k < n; ++k) {
                        const double vkp = v(k, p);
                        const double vkq = v(k, q);
                        v(k, p) = c * vkp - s * vkq;
                        v(k, q) = s * vkp + c * vkq;
                    }
                }
            }
        }
        converged = offdiag_frobenius(b) <= conv_thresh;
    }
    if (!converged) {
        double min_diag = b(0, 0);
        for (std::size_t i = 1; i < n; ++i) min_diag = std::min(min_diag, b(i, i));
        throw ConvergenceError("sym_eig: no convergence within 100 sweeps", min_diag);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return b(x, x) < b(y, y); });

    SymEigResult res;
    res.eigenvalues.resize(n);
    for (std::size_t i = 0; i < n; ++i) res.eigenvalues[i] = b(order[i], order[i]);
    if (want_vectors) {
        res.eigenvectors = DenseMatrix(n, n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k) res.eigenvectors(k, j) = v(k, order[j]);
        res.has_vectors = true;
    }
    return res;
}

double min_eig(const DenseMatrix& a) {
    if (a.rows() == 0) throw DimensionError("min_eig: empty matrix");
    return sym_eig(a, false).eigenvalues.front();
}

double spectral_norm(const DenseMatrix& w, double tol, std::size_t max_iter) {
    if (!(tol > 0.0)) throw DomainError("spectral_norm: tol must be positive");
    if (w.rows() == 0 || w.cols() == 0) throw DimensionError("spectral_norm: empty matrix");

    const DenseMatrix g = gram(w);
    const std::size_t n = g.rows();
    if (frobenius_norm(g) == 0.0) return 0.0;

    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 / static_cast<double>(i + 1);
    const double v0n = norm2(v);
    for (auto& x : v) x /= v0n;

    double lambda = 0.0;
    double prev_lambda = 0.0;
    double prev_diff = -1.0;
    std::size_t settled = 0;  // extra confirmation iterations after the stop test
    std::size_t perturb = 0;
    for (std::size_t it = 0; it < max_iter; ++it) {
        Vector u = matvec(g, v);
        lambda = dot(v, u);  // Rayleigh quotient (v is unit)
        const double un = norm2(u);
        if (un == 0.0) {
            // v landed in the kernel; nudge deterministically and retry.
            if (perturb >= n) return 0.0;  // perturbations exhausted: W^T W acts as zero
            v[perturb % n] += 1.0;
            const double nn = norm2(v);
            for (auto& x : v) x /= nn;
            ++perturb;
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) v[i] = u[i] / un;

        if (it > 0) {
            const double diff = std::fabs(lambda - prev_lambda);
            // Geometric-tail estimate of the remaining Rayleigh-quotient error:
            // successive diffs decay roughly by r = (lambda_2/lambda_1)^2, so the
            // tail is about diff * r / (1 - r).
            double remaining = diff;
            if (prev_diff > 0.0 && diff < prev_diff) {
                const double r = std::min(diff / prev_diff, 0.999);
                remaining = diff * r / (1.0 - r);
            }
            if (remaining <= 0.5 * tol * std::max(lambda, 1e-300) || diff == 0.0) {
                if (++settled >= 3) return std::sqrt(std::max(lambda, 0.0));
            } else {
                settled = 0;
            }
            prev_diff = diff;
        }
        prev_lambda = lambda;
    }
    throw ConvergenceError("spectral_norm: max_iter exhausted",
                           std::sqrt(std::max(lambda, 0.0)));
}

bool is_diag_dominant_posdiag(const DenseMatrix& a) {
    require_square(a, "is_diag_dominant_posdiag");
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (!(a(i, i) > 0.0)) return false;
        double off = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (j != i) off += std::fabs(a(i, j));
        if (a(i, i) < off) return false;
    }
    return true;
}

double gershgorin_lower_bound(const DenseMatrix& a) {
    require_square(a, "gershgorin_lower_bound");
    if (a.rows() == 0) throw DimensionError("gershgorin_lower_bound: empty matrix");
    double bound = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double off = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (j != i) off += std::fabs(a(i, j));
        const double row_bound = a(i, i) - off;
        if (i == 0 || row_bound < bound) bound = row_bound;
    }
    return bound;
}

}  // namespace lipforge
