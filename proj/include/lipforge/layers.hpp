#pragma once

#include "lipforge/matrix.hpp"
#include "lipforge/scaling.hpp"

namespace lipforge::layers {

using scaling::QVector;
using scaling::ScalingVector;

enum class ActivationKind { ReLU, Tanh, Sigmoid };

const char* activation_name(ActivationKind k);
ActivationKind activation_from_name(const std::string& name);

// Weight matrix plus bias for one layer. The bias length depends on the form
// it is used in (cols for residual/general, rows for linear) and is validated
// by each forward call.
struct WeightSpec {
    DenseMatrix w;
    Vector b;
};

// General layer h(x) = Hx + G sigma(W^T x + b) with its PSD certificate.
// Construct through make_general_layer so the LMI is checked up front.
struct GeneralLayerSpec {
    DenseMatrix h_mat;
    DenseMatrix g_mat;
    DenseMatrix w;
    Vector b;
    Vector lambda;
    double lmi_margin = 0.0;
    double lmi_scale = 1.0;
};

struct LayerGrad {
    DenseMatrix d_w;
    Vector d_b;
    Vector d_q;  // empty when the layer has no q parameter
    DenseMatrix d_x;
};

// Elementwise activation / derivative. Conventions: ReLU'(0) = 0.
double act(ActivationKind kind, double v);
Vector act(ActivationKind kind, const Vector& v);
DenseMatrix act(ActivationKind kind, const DenseMatrix& z);
DenseMatrix act_deriv(ActivationKind kind, const DenseMatrix& z);

// Incremental quadratic constraint for slope-restricted activations:
//   [d; ds]^T [0, -T^{-1}; -T^{-1}, 2 T^{-1}] [d; ds]
//     = 2 sum_i ds_i (ds_i - d_i) / T_i,
// where d = x1 - x2 and ds = sigma(x1) - sigma(x2). Never positive (up to
// rounding) for activations with difference quotients in [0, 1].
double slope_qc_residual(ActivationKind kind, const Vector& x1, const Vector& x2,
                         const ScalingVector& t);

// g(x) = W T^{-1/2} x + b, columns of x are samples. Throws FeasibilityError
// when t's stored margin is below tolerance.
DenseMatrix linear_forward(const WeightSpec& ws, const ScalingVector& t,
                           const DenseMatrix& x);

// h(x) = x - 2 W T^{-1} sigma(W^T x + b).
DenseMatrix residual_forward(const WeightSpec& ws, const ScalingVector& t,
                             ActivationKind kind, const DenseMatrix& x);

// h(x) = H x + G sigma(W^T x + b).
DenseMatrix general_forward(const GeneralLayerSpec& spec, ActivationKind kind,
                            const DenseMatrix& x);

// Assembles the block matrix
//   [ I - H^T H,      -H^T G - W Lambda ]
//   [ (-H^T G - W Lambda)^T, 2 Lambda - G^T G ]
// and returns its smallest eigenvalue.
double check_lmi(const DenseMatrix& h_mat, const DenseMatrix& g_mat, const DenseMatrix& w,
                 const Vector& lambda);
double check_lmi(const GeneralLayerSpec& spec);

// Validates dimensions, lambda >= 0, and the LMI certificate (throws
// LMIInfeasibleError when the block matrix is not PSD within tolerance).
GeneralLayerSpec make_general_layer(DenseMatrix h_mat, DenseMatrix g_mat, DenseMatrix w,
                                    Vector b, Vector lambda);

// The canonical rendering of a residual layer in general form:
// H = I, G = -2 W T^{-1}, Lambda = 2 T^{-1}. Shares the residual forward's
// exact column-division arithmetic, so both forwards agree bitwise.
GeneralLayerSpec general_from_residual(const WeightSpec& ws, const ScalingVector& t);

// Non-residual variant: linear_forward with T = t_sll(w, q).
DenseMatrix nonresidual_gershgorin_forward(const WeightSpec& ws, const QVector& q,
                                           const DenseMatrix& x);

// Reverse-mode gradients of the residual layer with T = t_sll(w, q),
// differentiated through T's dependence on both W and q.
// Conventions: ReLU'(0) = 0 and d|g|/dg = sign(g) with sign(0) = 0.
LayerGrad residual_backward(const WeightSpec& ws, const QVector& q, ActivationKind kind,
                            const DenseMatrix& x, const DenseMatrix& upstream);

// Reverse-mode gradients of the linear layer y = W T^{-1/2} x + b with
// T = t_sll(w, q), likewise differentiated through T.
LayerGrad linear_backward(const WeightSpec& ws, const QVector& q, const DenseMatrix& x,
                          const DenseMatrix& upstream);

// 2-D convolution kernel (out_channels, in_channels, kh, kw), dense storage.
struct ConvKernel {
    std::size_t oc = 0, ic = 0, kh = 0, kw = 0;
    Vector data;  // index (((o*ic + i)*kh + y)*kw + x)

    double at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
        return data[((o * ic + i) * kh + y) * kw + x];
    }
    double& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
        return data[((o * ic + i) * kh + y) * kw + x];
    }
};

struct ConvShape {
    std::size_t c = 0, h = 0, w = 0;
    std::size_t total() const { return c * h * w; }
};

// The exact doubly-block-Toeplitz matrix M (out pixels x in pixels) with
// M * flatten(image) == conv2d(image, kernel) under zero padding and the
// given stride. Desk-scale only: throws ScaleError when the input exceeds
// 4096 values, DimensionError on channel mismatch or non-positive output.
DenseMatrix materialize_conv_matrix(const ConvKernel& kernel, const ConvShape& in_shape,
                                    std::size_t padding, std::size_t stride);

// Internal building blocks shared by forwards/backwards; exposed for reuse
// and for tests that must reproduce the exact arithmetic.
DenseMatrix col_div(const DenseMatrix& w, const Vector& t);        // w_ij / t_j
DenseMatrix add_bias_rows(const DenseMatrix& z, const Vector& b);  // z_ij + b_i
Vector sll_diag(const DenseMatrix& g, const Vector& q);            // T from Gram + q

}  // namespace lipforge::layers
