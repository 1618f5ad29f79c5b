#include <doctest.h>

#include <cmath>

#include "lipforge/eigen.hpp"
#include "lipforge/layers.hpp"
#include "lipforge/matrix.hpp"
#include "lipforge/rng.hpp"
#include "lipforge/scaling.hpp"

using namespace lipforge;
using layers::ActivationKind;
using layers::ConvKernel;
using layers::ConvShape;
using layers::GeneralLayerSpec;
using layers::WeightSpec;
using scaling::QVector;
using scaling::ScalingVector;

namespace {

DenseMatrix column(const Vector& v) {
    DenseMatrix m(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
    return m;
}

// Direct sliding-window convolution with zero padding: the oracle the
// materialized matrix must reproduce.
Vector direct_conv(const ConvKernel& k, const ConvShape& in, const Vector& img,
                   std::size_t padding, std::size_t stride) {
    const std::size_t oh = (in.h + 2 * padding - k.kh) / stride + 1;
    const std::size_t ow = (in.w + 2 * padding - k.kw) / stride + 1;
    Vector out(k.oc * oh * ow, 0.0);
    for (std::size_t o = 0; o < k.oc; ++o)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t i = 0; i < k.ic; ++i)
                    for (std::size_t ky = 0; ky < k.kh; ++ky)
                        for (std::size_t kx = 0; kx < k.kw; ++kx) {
                            const long iy = static_cast<long>(oy * stride + ky) -
                                            static_cast<long>(padding);
                            const long ix = static_cast<long>(ox * stride + kx) -
                                            static_cast<long>(padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) ||
                                ix >= static_cast<long>(in.w))
                                continue;
                            acc += k.at(o, i, ky, kx) *
                                   img[(i * in.h + static_cast<std::size_t>(iy)) * in.w +
                                       static_cast<std::size_t>(ix)];
                        }
                out[(o * oh + oy) * ow + ox] = acc;
            }
    return out;
}

// Forward-difference Jacobian of f at x (single sample).
template <typename Fn>
DenseMatrix fd_jacobian(Fn&& f, const Vector& x, double h = 1e-6) {
    const Vector fx = f(x);
    DenseMatrix jac(fx.size(), x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        Vector xp = x;
        xp[j] += h;
        const Vector fp = f(xp);
        for (std::size_t i = 0; i < fx.size(); ++i) jac(i, j) = (fp[i] - fx[i]) / h;
    }
    return jac;
}

double frob_inner(const DenseMatrix& a, const DenseMatrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    return acc;
}

// Scalar probe whose gradient residual_backward must reproduce:
// L = <upstream, residual(W, b, q)(x)>, with T recomputed from (W, q).
double residual_probe(const DenseMatrix& w, const Vector& b, const Vector& q,
                      ActivationKind kind, const DenseMatrix& x, const DenseMatrix& up) {
    const auto t = scaling::t_sll(w, QVector(q), scaling::MarginPolicy::Certificate);
    return frob_inner(up, layers::residual_forward(WeightSpec{w, b}, t, kind, x));
}

double linear_probe(const DenseMatrix& w, const Vector& b, const Vector& q,
                    const DenseMatrix& x, const DenseMatrix& up) {
    const auto t = scaling::t_sll(w, QVector(q), scaling::MarginPolicy::Certificate);
    return frob_inner(up, layers::linear_forward(WeightSpec{w, b}, t, x));
}

// Rejection-samples a residual instance whose pre-activations and Gram
// off-diagonals are all at least `kink_margin` from the nearest kink, so
// central differences are valid.
struct ResidualInstance {
    DenseMatrix w;
    Vector b;
    Vector q;
    DenseMatrix x;
    DenseMatrix up;
};

ResidualInstance sample_away_from_kinks(std::size_t n, std::size_t batch, Rng& rng,
                                        double kink_margin = 1e-3) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        ResidualInstance inst;
        inst.w = gaussian_matrix(n, n, rng);
        inst.b = gaussian_vector(n, rng, 0.5);
        inst.q.resize(n);
        for (auto& v : inst.q) v = std::exp(0.3 * rng.normal());
        inst.x = gaussian_matrix(n, batch, rng);
        inst.up = gaussian_matrix(n, batch, rng);

        const DenseMatrix z =
            layers::add_bias_rows(matmul(transpose(inst.w), inst.x), inst.b);
        bool safe = true;
        for (std::size_t i = 0; i < z.size() && safe; ++i)
            if (std::fabs(z.data()[i]) <= kink_margin) safe = false;
        const DenseMatrix g = gram(inst.w);
        for (std::size_t i = 0; i < g.rows() && safe; ++i)
            for (std::size_t j = 0; j < g.cols() && safe; ++j)
                if (i != j && std::fabs(g(i, j)) <= kink_margin) safe = false;
        if (safe) return inst;
    }
    FAIL("could not sample an instance away from kinks");
    return {};
}

}  // namespace

TEST_CASE("activation values and names") {
    CHECK(layers::act(ActivationKind::ReLU, -1.0) == 0.0);
    CHECK(layers::act(ActivationKind::ReLU, 0.0) == 0.0);
    CHECK(layers::act(ActivationKind::ReLU, 2.0) == 2.0);
    CHECK(layers::act(ActivationKind::Tanh, 0.0) == 0.0);
    CHECK(layers::act(ActivationKind::Sigmoid, 0.0) == 0.5);
    CHECK(layers::act(ActivationKind::Sigmoid, 700.0) == doctest::Approx(1.0));
    CHECK(layers::act(ActivationKind::Sigmoid, -700.0) == doctest::Approx(0.0));

    CHECK(layers::activation_from_name("relu") == ActivationKind::ReLU);
    CHECK(layers::activation_from_name("tanh") == ActivationKind::Tanh);
    CHECK(layers::activation_from_name("sigmoid") == ActivationKind::Sigmoid);
    CHECK(std::string(layers::activation_name(ActivationKind::ReLU)) == "relu");
    CHECK_THROWS_AS(layers::activation_from_name("gelu"), ParseError);
}

TEST_CASE("activation derivatives stay in [0, 1] and honor the kink convention") {
    DenseMatrix zero(1, 1, 0.0);
    CHECK(layers::act_deriv(ActivationKind::ReLU, zero)(0, 0) == 0.0);  // subgradient choice

    Rng rng(501);
    for (ActivationKind kind :
         {ActivationKind::ReLU, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
        for (int i = 0; i < 1000; ++i) {
            DenseMatrix z(1, 1, rng.normal(0.0, 3.0));
            const double d = layers::act_deriv(kind, z)(0, 0);
            CHECK(d >= 0.0);
            CHECK(d <= 1.0);
        }
    }
}

TEST_CASE("slope quadratic-constraint residual") {
    const ScalingVector t{{1.0}, scaling::Method::AOL, 0.0, 1.0};

    // Identical inputs evaluate to exactly zero.
    CHECK(layers::slope_qc_residual(ActivationKind::Tanh, {0.7}, {0.7}, t) == 0.0);

    // Hand evaluation: d = 2, ds = relu(1) - relu(-1) = 1, 2*ds*(ds-d)/T = -2.
    CHECK(layers::slope_qc_residual(ActivationKind::ReLU, {1.0}, {-1.0}, t) ==
          doctest::Approx(-2.0).epsilon(1e-15));

    Rng rng(503);
    for (ActivationKind kind :
         {ActivationKind::ReLU, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
        for (int trial = 0; trial < 10000; ++trial) {
            const std::size_t n = 1 + rng.index(6);
            Vector diag(n);
            for (auto& v : diag) v = std::exp(rng.normal());
            const ScalingVector tv{diag, scaling::Method::AOL, 0.0, 1.0};
            const Vector x1 = gaussian_vector(n, rng, 2.0);
            const Vector x2 = gaussian_vector(n, rng, 2.0);
            CHECK(layers::slope_qc_residual(kind, x1, x2, tv) <= 1e-12);
        }
    }
}

TEST_CASE("linear forward basics") {
    // W = I, T = I, b = 0: the identity map.
    const auto t = scaling::t_aol(DenseMatrix::identity(3));
    Rng rng(507);
    const DenseMatrix x = gaussian_matrix(3, 4, rng);
    const DenseMatrix y =
        layers::linear_forward(WeightSpec{DenseMatrix::identity(3), Vector(3, 0.0)}, t, x);
    CHECK(max_abs_diff(x, y) == 0.0);

    // With the spectral scaling the layer is exactly (1/sigma) W x + b.
    const DenseMatrix w = gaussian_matrix(4, 3, rng);
    const Vector b = gaussian_vector(4, rng);
    const auto tsn = scaling::t_sn(w);
    const double sigma = spectral_norm(w);
    const DenseMatrix got = layers::linear_forward(WeightSpec{w, b}, tsn, x);
    DenseMatrix want = scale(matmul(w, x), 1.0 / sigma);
    for (std::size_t i = 0; i < want.rows(); ++i)
        for (std::size_t j = 0; j < want.cols(); ++j) want(i, j) += b[i];
    CHECK(max_abs_diff(got, want) <= 1e-12 * std::max(1.0, frobenius_norm(want)));

    // A corrupted certificate is refused.
    auto bad = tsn;
    bad.feasibility_margin = -1.0;
    CHECK_THROWS_AS(layers::linear_forward(WeightSpec{w, b}, bad, x), FeasibilityError);
    CHECK_THROWS_AS(layers::linear_forward(WeightSpec{w, b}, tsn, DenseMatrix(5, 2, 1.0)),
                    DimensionError);
}

TEST_CASE("residual forward basics") {
    // W = I, T = I, ReLU, b = 0, x = [-1]: sigma(-1) = 0, so h(x) = x.
    const auto t = scaling::t_aol(DenseMatrix::identity(1));
    const DenseMatrix y = layers::residual_forward(
        WeightSpec{DenseMatrix::identity(1), Vector(1, 0.0)}, t, ActivationKind::ReLU,
        column({-1.0}));
    CHECK(y(0, 0) == -1.0);

    // With the spectral scaling the residual layer is the literal
    // x - (2 / sigma^2) W sigma(W^T x + b) composition.
    Rng rng(509);
    const DenseMatrix w = gaussian_matrix(4, 4, rng);
    const Vector b = gaussian_vector(4, rng);
    const DenseMatrix x = gaussian_matrix(4, 5, rng);
    const auto tsn = scaling::t_sn(w);
    const double sigma2 = tsn.diag[0];
    for (ActivationKind kind :
         {ActivationKind::ReLU, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
        const DenseMatrix got = layers::residual_forward(WeightSpec{w, b}, tsn, kind, x);
        const DenseMatrix inner =
            layers::act(kind, layers::add_bias_rows(matmul(transpose(w), x), b));
        const DenseMatrix want = subtract(x, scale(matmul(w, inner), 2.0 / sigma2));
        double denom = 1.0;
        for (std::size_t i = 0; i < want.size(); ++i)
            denom = std::max(denom, std::fabs(want.data()[i]));
        CHECK(max_abs_diff(got, want) <= 1e-15 * denom);
    }
}

TEST_CASE("layer forms are 1-Lipschitz on sampled pairs") {
    Rng rng(511);
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + rng.index(6);
        const DenseMatrix w = gaussian_matrix(n, n, rng);
        const Vector b = gaussian_vector(n, rng);
        Vector qv(n);
        for (auto& v : qv) v = std::exp(0.4 * rng.normal());
        const QVector q(qv);
        const auto tsll = scaling::t_sll(w, q);
        const auto tsn = scaling::t_sn(w);
        const auto gspec = layers::general_from_residual(WeightSpec{w, b}, tsll);

        for (int pair = 0; pair < 40; ++pair) {
            const DenseMatrix x = gaussian_matrix(n, 1, rng);
            DenseMatrix y = x;
            const double eps = std::pow(10.0, -3.0 * rng.uniform());
            for (std::size_t i = 0; i < n; ++i) y(i, 0) += eps * rng.normal();
            const double din = frobenius_norm(subtract(x, y));
            if (din == 0.0) continue;
            auto ratio = [&](const DenseMatrix& fx, const DenseMatrix& fy) {
                return frobenius_norm(subtract(fx, fy)) / din;
            };
            const WeightSpec ws{w, b};
            worst = std::max(worst, ratio(layers::linear_forward(ws, tsn, x),
                                          layers::linear_forward(ws, tsn, y)));
            for (ActivationKind kind :
                 {ActivationKind::ReLU, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
                worst = std::max(worst, ratio(layers::residual_forward(ws, tsll, kind, x),
                                              layers::residual_forward(ws, tsll, kind, y)));
            }
            worst = std::max(worst,
                             ratio(layers::general_forward(gspec, ActivationKind::ReLU, x),
                                   layers::general_forward(gspec, ActivationKind::ReLU, y)));
            worst = std::max(worst, ratio(layers::nonresidual_gershgorin_forward(ws, q, x),
                                          layers::nonresidual_gershgorin_forward(ws, q, y)));
        }
    }
    CHECK(worst <= 1.0 + 1e-7);
}

TEST_CASE("per-sample Jacobians have spectral norm at most one") {
    Rng rng(513);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 3;
        const DenseMatrix w = gaussian_matrix(n, n, rng);
        const Vector b = gaussian_vector(n, rng);
        const auto t = scaling::t_aol(w);
        const Vector x0 = gaussian_vector(n, rng);
        const WeightSpec ws{w, b};

        auto lin = [&](const Vector& v) {
            DenseMatrix out = layers::linear_forward(ws, t, column(v));
            return Vector(out.data(), out.data() + out.size());
        };
        auto res = [&](const Vector& v) {
            DenseMatrix out =
                layers::residual_forward(ws, t, ActivationKind::Tanh, column(v));
            return Vector(out.data(), out.data() + out.size());
        };
        const auto gspec = layers::general_from_residual(ws, t);
        auto gen = [&](const Vector& v) {
            DenseMatrix out = layers::general_forward(gspec, ActivationKind::Tanh, column(v));
            return Vector(out.data(), out.data() + out.size());
        };
        CHECK(spectral_norm(fd_jacobian(lin, x0)) <= 1.0 + 1e-6);
        CHECK(spectral_norm(fd_jacobian(res, x0)) <= 1.0 + 1e-6);
        CHECK(spectral_norm(fd_jacobian(gen, x0)) <= 1.0 + 1e-6);
    }
}

TEST_CASE("general form reduction reproduces the residual form bitwise") {
    Rng rng(517);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.index(6);
        const DenseMatrix w = gaussian_matrix(n, n, rng);
        const Vector b = gaussian_vector(n, rng);
        Vector qv(n);
        for (auto& v : qv) v = std::exp(0.4 * rng.normal());
        const auto t = scaling::t_sll(w, QVector(qv));
        const auto gspec = layers::general_from_residual(WeightSpec{w, b}, t);
        const DenseMatrix x = gaussian_matrix(n, 3, rng);
        for (ActivationKind kind :
             {ActivationKind::ReLU, ActivationKind::Tanh, ActivationKind::Sigmoid}) {
            const DenseMatrix r = layers::residual_forward(WeightSpec{w, b}, t, kind, x);
            const DenseMatrix g = layers::general_forward(gspec, kind, x);
            CHECK(max_abs_diff(r, g) == 0.0);
        }
        CHECK(gspec.lmi_margin >= -scaling::psd_tolerance(gspec.lmi_scale));
    }
}

TEST_CASE("block-matrix certificate checks") {
    Rng rng(519);
    // Reduction instances are feasible.
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.index(5);
        const DenseMatrix w = gaussian_matrix(n, n, rng);
        const auto t = scaling::t_aol(w);
        const auto gspec = layers::general_from_residual(WeightSpec{w, Vector(n, 0.0)}, t);
        const double margin = layers::check_lmi(gspec);
        CHECK(margin >= -scaling::psd_tolerance(gspec.lmi_scale));
    }

    // All-zero data: the block matrix is exactly zero, min eigenvalue 0.
    const std::size_t n = 3;
    CHECK(layers::check_lmi(DenseMatrix::identity(n), DenseMatrix(n, n, 0.0),
                            DenseMatrix(n, n, 0.0), Vector(n, 0.0)) ==
          doctest::Approx(0.0).epsilon(1e-12));

    // H = 2I forces I - H^T H = -3I: decisively infeasible.
    const double bad = layers::check_lmi(scale(DenseMatrix::identity(n), 2.0),
                                         DenseMatrix(n, n, 0.0), DenseMatrix(n, n, 0.0),
                                         Vector(n, 1.0));
    CHECK(bad <= -3.0 + 1e-9);
}

TEST_CASE("general layer construction validates its inputs") {
    Rng rng(523);
    const std::size_t n = 3;
    const DenseMatrix w = gaussian_matrix(n, n, rng);
    const auto t = scaling::t_aol(w);
    const auto ok = layers::general_from_residual(WeightSpec{w, Vector(n, 0.0)}, t);

    // Negative lambda is rejected before any eigen work.
    Vector bad_lambda = ok.lambda;
    bad_lambda[0] = -1e-3;
    CHECK_THROWS_AS(
        layers::make_general_layer(ok.h_mat, ok.g_mat, ok.w, ok.b, bad_lambda),
        DomainError);

    // An expansive H fails the certificate.
    CHECK_THROWS_AS(layers::make_general_layer(scale(DenseMatrix::identity(n), 2.0),
                                               ok.g_mat, ok.w, ok.b, ok.lambda),
                    LMIInfeasibleError);

    CHECK_THROWS_AS(layers::make_general_layer(DenseMatrix::identity(4), ok.g_mat, ok.w,
                                               ok.b, ok.lambda),
                    DimensionError);
}

TEST_CASE("zero-matrix general layer with H = 0 stays 1-Lipschitz") {
    // With H = 0, Lambda = 2 T^{-1}, G = -2 W T^{-1} and T doubled from the
    // row-sum choice, the Schur complement stays PSD: a feasible non-residual
    // instance of the general form.
    Rng rng(527);
    const std::size_t n = 4;
    const DenseMatrix w = gaussian_matrix(n, n, rng);
    auto t = scaling::t_aol(w);
    for (double& v : t.diag) v *= 2.0;
    Vector lambda(n);
    DenseMatrix g_mat = layers::col_div(w, t.diag);
    g_mat = scale(g_mat, -2.0);
    for (std::size_t i = 0; i < n; ++i) lambda[i] = 2.0 / t.diag[i];
    const auto spec = layers::make_general_layer(DenseMatrix(n, n, 0.0), g_mat, w,
                                                 Vector(n, 0.0), lambda);
    double worst = 0.0;
    for (int pair = 0; pair < 200; ++pair) {
        const DenseMatrix x = gaussian_matrix(n, 1, rng);
        DenseMatrix y = x;
        for (std::size_t i = 0; i < n; ++i) y(i, 0) += 0.1 * rng.normal();
        const double din = frobenius_norm(subtract(x, y));
        if (din == 0.0) continue;
        const DenseMatrix fx = layers::general_forward(spec, ActivationKind::ReLU, x);
        const DenseMatrix fy = layers::general_forward(spec, ActivationKind::ReLU, y);
        worst = std::max(worst, frobenius_norm(subtract(fx, fy)) / din);
    }
    CHECK(worst <= 1.0 + 1e-7);
}

TEST_CASE("non-residual Gershgorin form matches the linear form under q = ones") {
    Rng rng(529);
    const DenseMatrix w = gaussian_matrix(5, 3, rng);
    const Vector b = gaussian_vector(5, rng);
    const DenseMatrix x = gaussian_matrix(3, 4, rng);
    const QVector ones(Vector(3, 1.0));
    const DenseMatrix got =
        layers::nonresidual_gershgorin_forward(WeightSpec{w, b}, ones, x);
    const DenseMatrix want = layers::linear_forward(WeightSpec{w, b}, scaling::t_aol(w), x);
    CHECK(max_abs_diff(got, want) == 0.0);

    // Orthogonal W with q = ones: T = I, the map is an isometry plus bias.
    DenseMatrix rot(2, 2);
    const double c = std::cos(0.7), s = std::sin(0.7);
    rot(0, 0) = c;
    rot(0, 1) = -s;
    rot(1, 0) = s;
    rot(1, 1) = c;
    const QVector ones2(Vector(2, 1.0));
    const DenseMatrix xa = gaussian_matrix(2, 1, rng);
    const DenseMatrix xb = gaussian_matrix(2, 1, rng);
    const DenseMatrix fa =
        layers::nonresidual_gershgorin_forward(WeightSpec{rot, Vector(2, 0.0)}, ones2, xa);
    const DenseMatrix fb =
        layers::nonresidual_gershgorin_forward(WeightSpec{rot, Vector(2, 0.0)}, ones2, xb);
    const double din = frobenius_norm(subtract(xa, xb));
    const double dout = frobenius_norm(subtract(fa, fb));
    CHECK(std::fabs(dout / din - 1.0) <= 1e-9);
}

TEST_CASE("residual backward: zero upstream gives zero gradients") {
    Rng rng(531);
    const std::size_t n = 4;
    const auto inst = sample_away_from_kinks(n, 3, rng);
    const auto grad = layers::residual_backward(WeightSpec{inst.w, inst.b}, QVector(inst.q),
                                                ActivationKind::ReLU, inst.x,
                                                DenseMatrix(n, 3, 0.0));
    CHECK(frobenius_norm(grad.d_w) == 0.0);
    for (double v : grad.d_b) CHECK(v == 0.0);
    for (double v : grad.d_q) CHECK(v == 0.0);
    CHECK(frobenius_norm(grad.d_x) == 0.0);
}

TEST_CASE("residual backward matches central differences") {
    Rng rng(533);
    const double h = 1e-5;
    for (ActivationKind kind : {ActivationKind::ReLU, ActivationKind::Tanh}) {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t n = 4;
            const auto inst = sample_away_from_kinks(n, 2, rng);
            const auto grad =
                layers::residual_backward(WeightSpec{inst.w, inst.b}, QVector(inst.q), kind,
                                          inst.x, inst.up);
            auto close = [&](double got, double want) {
                CHECK(std::fabs(got - want) <= 1e-5 * std::max(1.0, std::fabs(want)));
            };
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    DenseMatrix wp = inst.w, wm = inst.w;
                    wp(i, j) += h;
                    wm(i, j) -= h;
                    const double fd = (residual_probe(wp, inst.b, inst.q, kind, inst.x, inst.up) -
                                       residual_probe(wm, inst.b, inst.q, kind, inst.x, inst.up)) /
                                      (2 * h);
                    close(grad.d_w(i, j), fd);
                }
            for (std::size_t i = 0; i < n; ++i) {
                Vector bp = inst.b, bm = inst.b;
                bp[i] += h;
                bm[i] -= h;
                close(grad.d_b[i],
                      (residual_probe(inst.w, bp, inst.q, kind, inst.x, inst.up) -
                       residual_probe(inst.w, bm, inst.q, kind, inst.x, inst.up)) /
                          (2 * h));
                Vector qp = inst.q, qm = inst.q;
                qp[i] += h;
                qm[i] -= h;
                close(grad.d_q[i],
                      (residual_probe(inst.w, inst.b, qp, kind, inst.x, inst.up) -
                       residual_probe(inst.w, inst.b, qm, kind, inst.x, inst.up)) /
                          (2 * h));
            }
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < inst.x.cols(); ++c) {
                    DenseMatrix xp = inst.x, xm = inst.x;
                    xp(i, c) += h;
                    xm(i, c) -= h;
                    close(grad.d_x(i, c),
                          (residual_probe(inst.w, inst.b, inst.q, kind, xp, inst.up) -
                           residual_probe(inst.w, inst.b, inst.q, kind, xm, inst.up)) /
                              (2 * h));
                }
        }
    }
}

TEST_CASE("linear backward matches central differences") {
    Rng rng(537);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 4;
        const auto inst = sample_away_from_kinks(n, 2, rng);
        const DenseMatrix up = gaussian_matrix(n, 2, rng);
        const auto grad = layers::linear_backward(WeightSpec{inst.w, inst.b}, QVector(inst.q),
                                                  inst.x, up);
        auto close = [&](double got, double want) {
            CHECK(std::fabs(got - want) <= 1e-5 * std::max(1.0, std::fabs(want)));
        };
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                DenseMatrix wp = inst.w, wm = inst.w;
                wp(i, j) += h;
                wm(i, j) -= h;
                close(grad.d_w(i, j), (linear_probe(wp, inst.b, inst.q, inst.x, up) -
                                       linear_probe(wm, inst.b, inst.q, inst.x, up)) /
                                          (2 * h));
            }
        for (std::size_t i = 0; i < n; ++i) {
            Vector bp = inst.b, bm = inst.b;
            bp[i] += h;
            bm[i] -= h;
            close(grad.d_b[i], (linear_probe(inst.w, bp, inst.q, inst.x, up) -
                                linear_probe(inst.w, bm, inst.q, inst.x, up)) /
                                   (2 * h));
            Vector qp = inst.q, qm = inst.q;
            qp[i] += h;
            qm[i] -= h;
            close(grad.d_q[i], (linear_probe(inst.w, inst.b, qp, inst.x, up) -
                                linear_probe(inst.w, inst.b, qm, inst.x, up)) /
                                   (2 * h));
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < inst.x.cols(); ++c) {
                DenseMatrix xp = inst.x, xm = inst.x;
                xp(i, c) += h;
                xm(i, c) -= h;
                close(grad.d_x(i, c), (linear_probe(inst.w, inst.b, inst.q, xp, up) -
                                       linear_probe(inst.w, inst.b, inst.q, xm, up)) /
                                          (2 * h));
            }
    }
}

TEST_CASE("convolution materialization special cases") {
    // 1x1 kernel k: the matrix is k times the identity over pixels.
    ConvKernel one{1, 1, 1, 1, {2.5}};
    const ConvShape shape3{1, 3, 3};
    const DenseMatrix m1 = layers::materialize_conv_matrix(one, shape3, 0, 1);
    CHECK(max_abs_diff(m1, scale(DenseMatrix::identity(9), 2.5)) == 0.0);

    // 3x3 delta kernel at the center with padding 1: the identity.
    ConvKernel delta{1, 1, 3, 3, Vector(9, 0.0)};
    delta.at(0, 0, 1, 1) = 1.0;
    const DenseMatrix m2 = layers::materialize_conv_matrix(delta, shape3, 1, 1);
    CHECK(max_abs_diff(m2, DenseMatrix::identity(9)) == 0.0);

    // 3x3 averaging kernel on a 4x4 image: each output is a window mean.
    ConvKernel avg{1, 1, 3, 3, Vector(9, 1.0 / 9.0)};
    const ConvShape shape4{1, 4, 4};
    const DenseMatrix m3 = layers::materialize_conv_matrix(avg, shape4, 0, 1);
    Rng rng(541);
    Vector img(16);
    for (auto& v : img) v = rng.normal();
    const Vector got = matvec(m3, img);
    const Vector want = direct_conv(avg, shape4, img, 0, 1);
    REQUIRE(got.size() == 4);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("convolution materialization matches the sliding-window oracle") {
    Rng rng(543);
    for (int trial = 0; trial < 30; ++trial) {
        ConvKernel k;
        k.oc = 1 + rng.index(3);
        k.ic = 1 + rng.index(3);
        k.kh = 1 + rng.index(3);
        k.kw = 1 + rng.index(3);
        k.data = gaussian_vector(k.oc * k.ic * k.kh * k.kw, rng);
        const std::size_t padding = rng.index(2);
        const std::size_t stride = 1 + rng.index(2);
        const ConvShape in{k.ic, k.kh + rng.index(6), k.kw + rng.index(6)};
        const DenseMatrix m = layers::materialize_conv_matrix(k, in, padding, stride);
        Vector img(in.total());
        for (auto& v : img) v = rng.normal();
        const Vector got = matvec(m, img);
        const Vector want = direct_conv(k, in, img, padding, stride);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) <= 1e-12);
    }
}

TEST_CASE("convolution materialization rejects invalid setups") {
    ConvKernel k{1, 1, 3, 3, Vector(9, 1.0)};
    CHECK_THROWS_AS(layers::materialize_conv_matrix(k, ConvShape{1, 70, 70}, 0, 1),
                    ScaleError);  // 4900 pixels exceeds the desk-scale bound
    CHECK_THROWS_AS(layers::materialize_conv_matrix(k, ConvShape{2, 8, 8}, 0, 1),
                    DimensionError);  // channel mismatch
    CHECK_THROWS_AS(layers::materialize_conv_matrix(k, ConvShape{1, 8, 8}, 0, 0),
                    DomainError);  // zero stride
    CHECK_THROWS_AS(layers::materialize_conv_matrix(k, ConvShape{1, 2, 2}, 0, 1),
                    DimensionError);  // kernel larger than padded input
}

TEST_CASE("shared building blocks") {
    DenseMatrix w(2, 2);
    w(0, 0) = 2.0;
    w(0, 1) = 6.0;
    w(1, 0) = -4.0;
    w(1, 1) = 3.0;
    const DenseMatrix d = layers::col_div(w, {2.0, 3.0});
    CHECK(d(0, 0) == 1.0);
    CHECK(d(0, 1) == 2.0);
    CHECK(d(1, 0) == -2.0);
    CHECK(d(1, 1) == 1.0);

    const DenseMatrix z = layers::add_bias_rows(DenseMatrix(2, 2, 1.0), {10.0, 20.0});
    CHECK(z(0, 0) == 11.0);
    CHECK(z(1, 1) == 21.0);

    const Vector t = layers::sll_diag(gram(w), {1.0, 1.0});
    const auto aol = scaling::t_aol(w);
    REQUIRE(t.size() == 2);
    CHECK(t[0] == aol.diag[0]);
    CHECK(t[1] == aol.diag[1]);
}
