#pragma once

#include <cstddef>
#include <vector>

#include "lipforge/errors.hpp"

namespace lipforge {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Deliberately minimal: the project only
// needs products, transposes, Gram matrices and norms, all on desk-scale
// operands, so there is no expression-template machinery here.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static DenseMatrix identity(std::size_t n);
    static DenseMatrix diag(const Vector& d);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    bool same_shape(const DenseMatrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// C = A * B. Throws DimensionError on inner-dimension mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// y = A * x.
Vector matvec(const DenseMatrix& a, const Vector& x);

// y = A^T * x without forming the transpose.
Vector matvec_transposed(const DenseMatrix& a, const Vector& x);

DenseMatrix transpose(const DenseMatrix& a);

// W^T W, exploiting symmetry (each entry computed once, mirrored exactly).
DenseMatrix gram(const DenseMatrix& w);

double frobenius_norm(const DenseMatrix& a);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);

// Elementwise helpers used across layers and the trainer.
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scale(const DenseMatrix& a, double s);

// max_ij |A_ij - B_ij| over equally shaped matrices.
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace lipforge
