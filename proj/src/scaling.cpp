#include "lipforge/scaling.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <string>

#include "lipforge/rng.hpp"

namespace lipforge::scaling {

namespace {

constexpr std::size_t kAutoEigenLimit = 256;

bool use_eigen_margin(MarginPolicy policy, std::size_t n) {
    switch (policy) {
        case MarginPolicy::Eigen: return true;
        case MarginPolicy::Certificate: return false;
        case MarginPolicy::Auto: return n <= kAutoEigenLimit;
    }
    return true;
}

void require_no_zero_column(const DenseMatrix& w) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
        bool all_zero = true;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            if (w(i, j) != 0.0) {
                all_zero = false;
                break;
            }
        }
        if (all_zero) {
            throw ZeroColumnError("column " + std::to_string(j) +
                                  " of W is entirely zero; this scaling requires nonzero "
                                  "columns — use the gamma variant instead");
        }
    }
}

Vector abs_row_sums(const DenseMatrix& g) {
    Vector d(g.rows(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) acc += std::fabs(g(i, j));
        d[i] = acc;
    }
    return d;
}

// T - G for diagonal T.
DenseMatrix t_minus(const Vector& diag, const DenseMatrix& g) {
    DenseMatrix m = scale(g, -1.0);
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) += diag[i];
    return m;
}

void require_positive_diag(const Vector& diag, const char* method) {
    for (double v : diag) {
        if (!(v > 0.0)) {
            throw DomainError(std::string(method) +
                              ": scaling diagonal must be strictly positive (column norms "
                              "may have underflowed to zero)");
        }
    }
}

ScalingVector finish(Vector diag, Method method, double margin, const DenseMatrix& g) {
    ScalingVector t;
    t.diag = std::move(diag);
    t.method = method;
    t.feasibility_margin = margin;
    // Judge the margin at the scale of the matrix actually certified, T - G.
    // With strongly skewed q the diagonal can dwarf ||G||_F, and rounding of
    // order eps * max T_i is legitimate at that magnitude.
    double scale = std::max(1.0, frobenius_norm(g));
    for (double v : t.diag) scale = std::max(scale, std::fabs(v));
    t.margin_scale = scale;
    if (!t.feasible()) {
        throw FeasibilityError(std::string(method_name(method)) +
                               ": construction produced margin " + std::to_string(margin) +
                               " below tolerance");
    }
    return t;
}

// Certified rounding slack for a Gershgorin-style bound computed from n-term
// absolute row sums of G.
double dominance_slack(std::size_t n, const Vector& diag) {
    double max_d = 0.0;
    for (double v : diag) max_d = std::max(max_d, std::fabs(v));
    return 4.0 * static_cast<double>(n) * DBL_EPSILON * max_d;
}

double frobenius_metric(const DenseMatrix& g, const Vector& diag) {
    const std::size_t n = diag.size();
    Vector s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::sqrt(diag[i]);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double r = g(i, j) / (s[i] * s[j]) - (i == j ? 1.0 : 0.0);
            acc += r * r;
        }
    }
    return std::sqrt(acc);
}

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::SN: return "sn";
        case Method::AOL: return "aol";
        case Method::SLL: return "sll";
        case Method::GAMMA: return "gamma";
        case Method::HEURISTIC_OPT: return "opt";
    }
    return "?";
}

QVector::QVector(Vector values) : q(std::move(values)) {
    for (double v : q) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw DomainError("q entries must be strictly positive and finite");
        }
    }
}

ScalingVector t_sn(const DenseMatrix& w, MarginPolicy policy) {
    if (frobenius_norm(w) == 0.0) throw ZeroWeightError("t_sn: W is identically zero");
    const double sigma_tol = 1e-10;
    const DenseMatrix g = gram(w);
    double lambda;
    bool power_converged = true;
    try {
        const double sigma = spectral_norm(w, sigma_tol, 10000);
        lambda = sigma * sigma;
    } catch (const ConvergenceError&) {
        // Clustered top singular values stall the power iteration. Up to the
        // eigendirect size limit the Gram spectrum is cheap to take whole;
        // beyond it the stall is a genuine failure.
        if (w.cols() > 256) throw;
        lambda = std::max(sym_eig(g).eigenvalues.back(), 0.0);
        power_converged = false;
    }
    Vector diag(w.cols(), lambda);
    require_positive_diag(diag, "t_sn");
    double margin;
    if (!power_converged || use_eigen_margin(policy, w.cols())) {
        margin = min_eig(t_minus(diag, g));
    } else {
        // min_eig(sigma^2 I - G) = sigma_hat^2 - lambda_max(G) and the power
        // iteration guarantees lambda_max <= sigma_hat^2 / (1 - tol)^2.
        margin = -4.0 * sigma_tol * lambda;
    }
    return finish(std::move(diag), Method::SN, margin, g);
}

ScalingVector t_aol(const DenseMatrix& w, MarginPolicy policy) {
    require_no_zero_column(w);
    const DenseMatrix g = gram(w);
    Vector diag = abs_row_sums(g);
    require_positive_diag(diag, "t_aol");
    double margin;
    if (use_eigen_margin(policy, w.cols())) {
        margin = min_eig(t_minus(diag, g));
    } else {
        // T - G is diagonally dominant with non-negative diagonal by
        // construction; the only uncertainty is rounding of the row sums.
        margin = -dominance_slack(g.rows(), diag);
    }
    return finish(std::move(diag), Method::AOL, margin, g);
}

ScalingVector t_sll(const DenseMatrix& w, const QVector& q, MarginPolicy policy) {
    if (q.q.size() != w.cols()) {
        throw DimensionError("t_sll: q has " + std::to_string(q.q.size()) +
                             " entries, W has " + std::to_string(w.cols()) + " columns");
    }
    require_no_zero_column(w);
    const DenseMatrix g = gram(w);
    const std::size_t n = g.rows();
    Vector diag(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += std::fabs(g(i, j)) * (q.q[j] / q.q[i]);
        diag[i] = acc;
    }
    require_positive_diag(diag, "t_sll");
    double margin;
    if (use_eigen_margin(policy, n)) {
        margin = min_eig(t_minus(diag, g));
    } else {
        // Similarity transform B = Q (T - G) Q^{-1} with Q = diag(1/q) shares
        // the (real) spectrum of T - G and is diagonally dominant by
        // construction of T; its Gershgorin bound certifies the margin.
        double bound = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double off = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) off += std::fabs(g(i, j)) * (q.q[j] / q.q[i]);
            const double row = (diag[i] - g(i, i)) - off;
            if (i == 0 || row < bound) bound = row;
        }
        margin = bound - dominance_slack(n, diag);
    }
    return finish(std::move(diag), Method::SLL, margin, g);
}

GammaScaling gamma_variant(const DenseMatrix& w) {
    const DenseMatrix g = gram(w);
    const std::size_t n = g.rows();
    const Vector rowsum = abs_row_sums(g);
    GammaScaling gs;
    gs.diag.resize(n);
    for (std::size_t i = 0; i < n; ++i) gs.diag[i] = rowsum[i] == 0.0 ? 0.0 : 1.0 / rowsum[i];

    // Condition matrix Gamma - Gamma G Gamma, assembled exactly symmetric.
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double v = -(gs.diag[i] * g(i, j)) * gs.diag[j];
            if (i == j) v += gs.diag[i];
            m(i, j) = v;
            m(j, i) = v;
        }
    }
    gs.margin_scale = std::max(1.0, frobenius_norm(m));
    gs.feasibility_margin = n == 0 ? 0.0 : min_eig(m);
    if (gs.feasibility_margin < -psd_tolerance(gs.margin_scale)) {
        throw FeasibilityError("gamma_variant: condition matrix is not PSD (margin " +
                               std::to_string(gs.feasibility_margin) + ")");
    }
    return gs;
}

double check_feasible(const DenseMatrix& w, const ScalingVector& t) {
    if (t.diag.size() != w.cols()) {
        throw DimensionError("check_feasible: T has " + std::to_string(t.diag.size()) +
                             " entries, W has " + std::to_string(w.cols()) + " columns");
    }
    return min_eig(t_minus(t.diag, gram(w)));
}

std::pair<double, double> ortho_distance(const DenseMatrix& w, const ScalingVector& t) {
    if (t.diag.size() != w.cols()) {
        throw DimensionError("ortho_distance: T/W dimension mismatch");
    }
    require_positive_diag(t.diag, "ortho_distance");
    const DenseMatrix g = gram(w);
    const std::size_t n = g.rows();

    // Feasibility gate: accept fast when T - G is diagonally dominant
    // (Gershgorin certifies PSD); otherwise fall back to the eigen check.
    const DenseMatrix m = t_minus(t.diag, g);
    if (gershgorin_lower_bound(m) < 0.0) {
        const double margin = min_eig(m);
        if (margin < -psd_tolerance(std::max(1.0, frobenius_norm(g)))) {
            throw FeasibilityError("ortho_distance: T is infeasible for W (margin " +
                                   std::to_string(margin) + ")");
        }
    }

    Vector s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::sqrt(t.diag[i]);
    double trace_metric = 0.0;
    double fro_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double r = g(i, j) / (s[i] * s[j]) - (i == j ? 1.0 : 0.0);
            fro_acc += r * r;
            if (i == j) trace_metric += -r;  // 1 - G_ii/T_ii
        }
    }
    const double fro_metric = std::sqrt(fro_acc);
    if (fro_metric > trace_metric + 1e-9) {
        throw CertificateError("ortho_distance: Frobenius metric " +
                               std::to_string(fro_metric) + " exceeds trace metric " +
                               std::to_string(trace_metric));
    }
    return {trace_metric, fro_metric};
}

std::vector<ScalingVector> sample_feasible_dd(const DenseMatrix& w, std::size_t count,
                                              std::uint64_t rng_seed) {
    require_no_zero_column(w);
    const DenseMatrix g = gram(w);
    const Vector aol = abs_row_sums(g);
    const std::size_t n = aol.size();
    const double scale_norm = std::max(1.0, frobenius_norm(g));

    Rng rng(rng_seed);
    std::vector<ScalingVector> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        ScalingVector t;
        t.method = Method::AOL;  // a member of AOL's diagonally-dominant feasible set
        t.diag.resize(n);
        t.margin_scale = scale_norm;
        double margin = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = rng.uniform(0.0, 2.0);
            t.diag[i] = aol[i] * (1.0 + u);
            // Membership in the set: T_ii >= sum_j |G_ij| (holds by construction;
            // verified here because the sample IS the oracle).
            if (!(t.diag[i] >= aol[i]) || !(t.diag[i] > 0.0)) {
                throw FeasibilityError("sample_feasible_dd: sampled diagonal left the set");
            }
            const double row_margin = t.diag[i] - aol[i];
            if (i == 0 || row_margin < margin) margin = row_margin;
        }
        t.feasibility_margin = margin;  // Gershgorin bound of T - G
        out.push_back(std::move(t));
    }
    return out;
}

ScalingVector t_opt_heuristic(const DenseMatrix& w, std::size_t iters,
                              std::uint64_t rng_seed) {
    if (w.cols() > 64) {
        throw ScaleError("t_opt_heuristic: n = " + std::to_string(w.cols()) +
                         " exceeds the desk-scale bound 64");
    }
    require_no_zero_column(w);
    const DenseMatrix g = gram(w);
    const std::size_t n = g.rows();
    const Vector aol = abs_row_sums(g);
    require_positive_diag(aol, "t_opt_heuristic");

    const auto feasible = [&](const Vector& diag) {
        return min_eig(t_minus(diag, g)) >= 0.0;
    };

    Vector best = aol;
    double best_obj = frobenius_metric(g, aol);

    constexpr std::size_t kRestarts = 8;
    const std::size_t budget_per_restart = std::max<std::size_t>(4 * n, iters / kRestarts);
    Rng rng(rng_seed);

    for (std::size_t restart = 0; restart < kRestarts; ++restart) {
        Vector cur = aol;
        if (restart > 0) {
            // Interior point of the dominant set: strictly feasible, so descent
            // can cross into regions the AOL boundary blocks.
            for (std::size_t i = 0; i < n; ++i)
                cur[i] = aol[i] * (1.0 + rng.uniform(0.0, 2.0));
        }
        double cur_obj = frobenius_metric(g, cur);
        double step = 0.5;  // in log-space
        std::size_t evals = 0;
        while (evals < budget_per_restart && step > 1e-4) {
            bool improved = false;
            for (std::size_t i = 0; i < n && evals < budget_per_restart; ++i) {
                for (int dir : {-1, +1}) {
                    Vector cand = cur;
                    cand[i] = cur[i] * std::exp(dir * step);
                    ++evals;
                    if (!(cand[i] > 0.0)) continue;
                    const double obj = frobenius_metric(g, cand);
                    if (obj < cur_obj && feasible(cand)) {
                        cur = std::move(cand);
                        cur_obj = obj;
                        improved = true;
                        break;
                    }
                }
            }
            if (!improved) step *= 0.5;
        }
        if (cur_obj < best_obj) {
            best = cur;
            best_obj = cur_obj;
        }
    }

    const double margin = min_eig(t_minus(best, g));
    return finish(std::move(best), Method::HEURISTIC_OPT, margin, g);
}

}  // namespace lipforge::scaling
