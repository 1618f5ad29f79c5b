#include "lipforge/layers.hpp"

#include <cmath>
#include <string>

namespace lipforge::layers {

namespace {

double relu(double v) { return v > 0.0 ? v : 0.0; }

double sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_feasible(const ScalingVector& t, const char* where) {
    if (!t.feasible()) {
        throw FeasibilityError(std::string(where) + ": scaling margin " +
                               std::to_string(t.feasibility_margin) +
                               " is below tolerance; refusing to run an uncertified layer");
    }
    for (double v : t.diag) {
        if (!(v > 0.0)) {
            throw DomainError(std::string(where) + ": scaling diagonal must be positive");
        }
    }
}

DenseMatrix row_div(const DenseMatrix& a, const Vector& t) {
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) / t[i];
    return out;
}

DenseMatrix assemble_lmi(const DenseMatrix& h_mat, const DenseMatrix& g_mat,
                         const DenseMatrix& w, const Vector& lambda) {
    const std::size_t m = w.rows();
    const std::size_t n = w.cols();
    if (h_mat.cols() != m) {
        throw DimensionError("check_lmi: H has " + std::to_string(h_mat.cols()) +
                             " columns, W has " + std::to_string(m) + " rows");
    }
    if (g_mat.rows() != h_mat.rows() || g_mat.cols() != n || lambda.size() != n) {
        throw DimensionError("check_lmi: G/Lambda dimensions do not match H and W");
    }

    const DenseMatrix hth = gram(h_mat);  // H^T H, m x m
    const DenseMatrix gtg = gram(g_mat);  // G^T G, n x n
    const DenseMatrix htg = matmul(transpose(h_mat), g_mat);  // m x n

    DenseMatrix block(m + n, m + n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            block(i, j) = (i == j ? 1.0 : 0.0) - hth(i, j);
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = -htg(i, j) - w(i, j) * lambda[j];
            block(i, m + j) = v;
            block(m + j, i) = v;  // exact mirror keeps the block symmetric
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            block(m + i, m + j) = (i == j ? 2.0 * lambda[i] : 0.0) - gtg(i, j);
        }
    }
    return block;
}

}  // namespace

const char* activation_name(ActivationKind k) {
    switch (k) {
        case ActivationKind::ReLU: return "relu";
        case ActivationKind::Tanh: return "tanh";
        case ActivationKind::Sigmoid: return "sigmoid";
    }
    return "?";
}

ActivationKind activation_from_name(const std::string& name) {
    if (name == "relu") return ActivationKind::ReLU;
    if (name == "tanh") return ActivationKind::Tanh;
    if (name == "sigmoid") return ActivationKind::Sigmoid;
    throw ParseError("unknown activation '" + name + "'");
}

double act(ActivationKind kind, double v) {
    switch (kind) {
        case ActivationKind::ReLU: return relu(v);
        case ActivationKind::Tanh: return std::tanh(v);
        case ActivationKind::Sigmoid: return sigmoid(v);
    }
    return v;
}

Vector act(ActivationKind kind, const Vector& v) {
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = act(kind, v[i]);
    return out;
}

DenseMatrix act(ActivationKind kind, const DenseMatrix& z) {
    DenseMatrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) out.data()[i] = act(kind, z.data()[i]);
    return out;
}

DenseMatrix act_deriv(ActivationKind kind, const DenseMatrix& z) {
    DenseMatrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = z.data()[i];
        switch (kind) {
            case ActivationKind::ReLU:
                out.data()[i] = v > 0.0 ? 1.0 : 0.0;  // ReLU'(0) = 0 by convention
                break;
            case ActivationKind::Tanh: {
                const double t = std::tanh(v);
                out.data()[i] = 1.0 - t * t;
                break;
            }
            case ActivationKind::Sigmoid: {
                const double s = sigmoid(v);
                out.data()[i] = s * (1.0 - s);
                break;
            }
        }
    }
    return out;
}

double slope_qc_residual(ActivationKind kind, const Vector& x1, const Vector& x2,
                         const ScalingVector& t) {
    if (x1.size() != x2.size() || x1.size() != t.diag.size()) {
        throw DimensionError("slope_qc_residual: length mismatch");
    }
    for (double v : t.diag) {
        if (!(v > 0.0)) throw DomainError("slope_qc_residual: T must be positive");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < x1.size(); ++i) {
        const double d = x1[i] - x2[i];
        const double ds = act(kind, x1[i]) - act(kind, x2[i]);
        acc += 2.0 * ds * (ds - d) / t.diag[i];
    }
    return acc;
}

DenseMatrix col_div(const DenseMatrix& w, const Vector& t) {
    if (t.size() != w.cols()) throw DimensionError("col_div: vector/column mismatch");
    DenseMatrix out(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = w(i, j) / t[j];
    return out;
}

DenseMatrix add_bias_rows(const DenseMatrix& z, const Vector& b) {
    if (b.size() != z.rows()) throw DimensionError("add_bias_rows: bias/row mismatch");
    DenseMatrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = z(i, j) + b[i];
    return out;
}

Vector sll_diag(const DenseMatrix& g, const Vector& q) {
    const std::size_t n = g.rows();
    if (q.size() != n) throw DimensionError("sll_diag: q/Gram mismatch");
    Vector t(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += std::fabs(g(i, j)) * (q[j] / q[i]);
        t[i] = acc;
    }
    return t;
}

DenseMatrix linear_forward(const WeightSpec& ws, const ScalingVector& t,
                           const DenseMatrix& x) {
    require_feasible(t, "linear_forward");
    if (t.diag.size() != ws.w.cols()) {
        throw DimensionError("linear_forward: T/W dimension mismatch");
    }
    if (x.rows() != ws.w.cols()) {
        throw DimensionError("linear_forward: input has " + std::to_string(x.rows()) +
                             " rows, W has " + std::to_string(ws.w.cols()) + " columns");
    }
    if (ws.b.size() != ws.w.rows()) {
        throw DimensionError("linear_forward: bias length must equal W rows");
    }
    Vector s(t.diag.size());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::sqrt(t.diag[j]);
    const DenseMatrix v = col_div(ws.w, s);  // W T^{-1/2}
    return add_bias_rows(matmul(v, x), ws.b);
}

DenseMatrix residual_forward(const WeightSpec& ws, const ScalingVector& t,
                             ActivationKind kind, const DenseMatrix& x) {
    require_feasible(t, "residual_forward");
    if (t.diag.size() != ws.w.cols()) {
        throw DimensionError("residual_forward: T/W dimension mismatch");
    }
    if (x.rows() != ws.w.rows()) {
        throw DimensionError("residual_forward: input has " + std::to_string(x.rows()) +
                             " rows, W has " + std::to_string(ws.w.rows()) + " rows");
    }
    if (ws.b.size() != ws.w.cols()) {
        throw DimensionError("residual_forward: bias length must equal W columns");
    }
    const DenseMatrix v = col_div(ws.w, t.diag);  // W T^{-1}
    const DenseMatrix z = add_bias_rows(matmul(transpose(ws.w), x), ws.b);
    const DenseMatrix s = act(kind, z);
    return subtract(x, scale(matmul(v, s), 2.0));
}

DenseMatrix general_forward(const GeneralLayerSpec& spec, ActivationKind kind,
                            const DenseMatrix& x) {
    if (x.rows() != spec.h_mat.cols()) {
        throw DimensionError("general_forward: input/H dimension mismatch");
    }
    const DenseMatrix z = add_bias_rows(matmul(transpose(spec.w), x), spec.b);
    const DenseMatrix s = act(kind, z);
    return add(matmul(spec.h_mat, x), matmul(spec.g_mat, s));
}

double check_lmi(const DenseMatrix& h_mat, const DenseMatrix& g_mat, const DenseMatrix& w,
                 const Vector& lambda) {
    return min_eig(assemble_lmi(h_mat, g_mat, w, lambda));
}

double check_lmi(const GeneralLayerSpec& spec) {
    return check_lmi(spec.h_mat, spec.g_mat, spec.w, spec.lambda);
}

GeneralLayerSpec make_general_layer(DenseMatrix h_mat, DenseMatrix g_mat, DenseMatrix w,
                                    Vector b, Vector lambda) {
    if (b.size() != w.cols()) {
        throw DimensionError("make_general_layer: bias length must equal W columns");
    }
    for (double v : lambda) {
        if (!(v >= 0.0)) throw DomainError("make_general_layer: lambda must be >= 0");
    }
    const DenseMatrix block = assemble_lmi(h_mat, g_mat, w, lambda);
    const double margin = min_eig(block);
    const double scale_norm = std::max(1.0, frobenius_norm(block));
    if (margin < -scaling::psd_tolerance(scale_norm)) {
        throw LMIInfeasibleError("make_general_layer: LMI margin " + std::to_string(margin) +
                                 " is below tolerance; the layer is not certified");
    }
    GeneralLayerSpec spec;
    spec.h_mat = std::move(h_mat);
    spec.g_mat = std::move(g_mat);
    spec.w = std::move(w);
    spec.b = std::move(b);
    spec.lambda = std::move(lambda);
    spec.lmi_margin = margin;
    spec.lmi_scale = scale_norm;
    return spec;
}

GeneralLayerSpec general_from_residual(const WeightSpec& ws, const ScalingVector& t) {
    require_feasible(t, "general_from_residual");
    if (t.diag.size() != ws.w.cols()) {
        throw DimensionError("general_from_residual: T/W dimension mismatch");
    }
    const std::size_t n = ws.w.cols();
    DenseMatrix g_mat = scale(col_div(ws.w, t.diag), -2.0);  // -2 W T^{-1}
    Vector lambda(n);
    for (std::size_t j = 0; j < n; ++j) lambda[j] = 2.0 / t.diag[j];
    return make_general_layer(DenseMatrix::identity(ws.w.rows()), std::move(g_mat), ws.w,
                              ws.b, std::move(lambda));
}

DenseMatrix nonresidual_gershgorin_forward(const WeightSpec& ws, const QVector& q,
                                           const DenseMatrix& x) {
    return linear_forward(ws, scaling::t_sll(ws.w, q), x);
}

LayerGrad residual_backward(const WeightSpec& ws, const QVector& q, ActivationKind kind,
                            const DenseMatrix& x, const DenseMatrix& upstream) {
    const std::size_t m = ws.w.rows();
    const std::size_t n = ws.w.cols();
    if (x.rows() != m || !upstream.same_shape(x)) {
        throw DimensionError("residual_backward: input/upstream shape mismatch");
    }
    if (ws.b.size() != n || q.q.size() != n) {
        throw DimensionError("residual_backward: bias/q length mismatch");
    }

    const DenseMatrix g = gram(ws.w);
    const Vector t = sll_diag(g, q.q);
    for (double v : t) {
        if (!(v > 0.0)) throw DomainError("residual_backward: T has a non-positive entry");
    }

    const DenseMatrix z = add_bias_rows(matmul(transpose(ws.w), x), ws.b);
    const DenseMatrix s = act(kind, z);
    const DenseMatrix sp = act_deriv(kind, z);
    const DenseMatrix r = row_div(s, t);  // T^{-1} sigma(z)

    // y = x - 2 W r: gradient into r.
    const DenseMatrix g_r = scale(matmul(transpose(ws.w), upstream), -2.0);

    // r_ib = s_ib / t_i: split into the s path and the T path.
    Vector g_t(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t bcol = 0; bcol < r.cols(); ++bcol) acc += g_r(i, bcol) * r(i, bcol);
        g_t[i] = -acc / t[i];
    }
    DenseMatrix g_z(n, z.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t bcol = 0; bcol < z.cols(); ++bcol)
            g_z(i, bcol) = sp(i, bcol) * (g_r(i, bcol) / t[i]);

    LayerGrad grad;
    grad.d_b.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t bcol = 0; bcol < z.cols(); ++bcol) grad.d_b[i] += g_z(i, bcol);

    grad.d_x = add(upstream, matmul(ws.w, g_z));

    // T_i = sum_j |G_ij| q_j / q_i: gradient back into the Gram matrix.
    DenseMatrix g_gram(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            g_gram(i, j) = g_t[i] * sign0(g(i, j)) * (q.q[j] / q.q[i]);

    grad.d_w = add(add(scale(matmul(upstream, transpose(r)), -2.0),
                       matmul(x, transpose(g_z))),
                   matmul(ws.w, add(g_gram, transpose(g_gram))));

    grad.d_q.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == k) continue;
            acc += g_t[i] * std::fabs(g(i, k)) / q.q[i];
        }
        acc -= g_t[k] * (t[k] - std::fabs(g(k, k))) / q.q[k];
        grad.d_q[k] = acc;
    }
    return grad;
}

LayerGrad linear_backward(const WeightSpec& ws, const QVector& q, const DenseMatrix& x,
                          const DenseMatrix& upstream) {
    const std::size_t m = ws.w.rows();
    const std::size_t n = ws.w.cols();
    if (x.rows() != n || upstream.rows() != m || upstream.cols() != x.cols()) {
        throw DimensionError("linear_backward: input/upstream shape mismatch");
    }
    if (ws.b.size() != m || q.q.size() != n) {
        throw DimensionError("linear_backward: bias/q length mismatch");
    }

    const DenseMatrix g = gram(ws.w);
    const Vector t = sll_diag(g, q.q);
    Vector s(n);
    for (std::size_t j = 0; j < n; ++j) {
        if (!(t[j] > 0.0)) throw DomainError("linear_backward: T has a non-positive entry");
        s[j] = std::sqrt(t[j]);
    }
    const DenseMatrix v = col_div(ws.w, s);  // W T^{-1/2}

    LayerGrad grad;
    grad.d_b.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t bcol = 0; bcol < upstream.cols(); ++bcol)
            grad.d_b[i] += upstream(i, bcol);

    const DenseMatrix d_v = matmul(upstream, transpose(x));  // m x n
    grad.d_x = matmul(transpose(v), upstream);

    // v_ij = w_ij / s_j: direct weight path plus the path through T.
    Vector g_t(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += d_v(i, j) * ws.w(i, j);
        g_t[j] = -0.5 * acc / (s[j] * s[j] * s[j]);
    }
    DenseMatrix g_gram(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            g_gram(i, j) = g_t[i] * sign0(g(i, j)) * (q.q[j] / q.q[i]);

    grad.d_w = add(col_div(d_v, s), matmul(ws.w, add(g_gram, transpose(g_gram))));

    grad.d_q.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == k) continue;
            acc += g_t[i] * std::fabs(g(i, k)) / q.q[i];
        }
        acc -= g_t[k] * (t[k] - std::fabs(g(k, k))) / q.q[k];
        grad.d_q[k] = acc;
    }
    return grad;
}

DenseMatrix materialize_conv_matrix(const ConvKernel& kernel, const ConvShape& in_shape,
                                    std::size_t padding, std::size_t stride) {
    if (kernel.data.size() != kernel.oc * kernel.ic * kernel.kh * kernel.kw) {
        throw DimensionError("materialize_conv_matrix: kernel storage size mismatch");
    }
    if (kernel.ic != in_shape.c) {
        throw DimensionError("materialize_conv_matrix: kernel expects " +
                             std::to_string(kernel.ic) + " input channels, image has " +
                             std::to_string(in_shape.c));
    }
    if (stride == 0) throw DomainError("materialize_conv_matrix: stride must be >= 1");
    if (in_shape.total() > 4096) {
        throw ScaleError("materialize_conv_matrix: input size " +
                         std::to_string(in_shape.total()) + " exceeds the desk-scale bound 4096");
    }
    const std::size_t padded_h = in_shape.h + 2 * padding;
    const std::size_t padded_w = in_shape.w + 2 * padding;
    if (padded_h < kernel.kh || padded_w < kernel.kw) {
        throw DimensionError("materialize_conv_matrix: kernel larger than padded input");
    }
    const std::size_t out_h = (padded_h - kernel.kh) / stride + 1;
    const std::size_t out_w = (padded_w - kernel.kw) / stride + 1;

    DenseMatrix m(kernel.oc * out_h * out_w, in_shape.total());
    for (std::size_t o = 0; o < kernel.oc; ++o) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const std::size_t row = (o * out_h + oy) * out_w + ox;
                for (std::size_t i = 0; i < kernel.ic; ++i) {
                    for (std::size_t ky = 0; ky < kernel.kh; ++ky) {
                        const long long iy = static_cast<long long>(oy * stride + ky) -
                                             static_cast<long long>(padding);
                        if (iy < 0 || iy >= static_cast<long long>(in_shape.h)) continue;
                        for (std::size_t kx = 0; kx < kernel.kw; ++kx) {
                            const long long ix = static_cast<long long>(ox * stride + kx) -
                                                 static_cast<long long>(padding);
                            if (ix < 0 || ix >= static_cast<long long>(in_shape.w)) continue;
                            const std::size_t col =
                                (i * in_shape.h + static_cast<std::size_t>(iy)) * in_shape.w +
                                static_cast<std::size_t>(ix);
                            m(row, col) = kernel.at(o, i, ky, kx);
                        }
                    }
                }
            }
        }
    }
    return m;
}

}  // namespace lipforge::layers
