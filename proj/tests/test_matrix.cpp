#include <doctest.h>

#include <cmath>

#include "lipforge/eigen.hpp"
#include "lipforge/matrix.hpp"
#include "lipforge/rng.hpp"

using namespace lipforge;

namespace {

// Schoolbook triple loop, no skips or reassociation: the independent oracle
// every fast path must match.
DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

}  // namespace

TEST_CASE("dense matrix construction and accessors") {
    DenseMatrix m(2, 3, 1.5);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.size() == 6);
    CHECK(!m.empty());
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(m(i, j) == 1.5);

    m(1, 2) = -4.0;
    CHECK(m(1, 2) == -4.0);
    CHECK(m.row(1)[2] == -4.0);

    DenseMatrix empty;
    CHECK(empty.empty());
    CHECK(empty.rows() == 0);

    CHECK_THROWS_AS(DenseMatrix(2, 2, std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST_CASE("identity and diag factories") {
    const DenseMatrix id = DenseMatrix::identity(3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(id(i, j) == (i == j ? 1.0 : 0.0));

    const DenseMatrix d = DenseMatrix::diag({2.0, -3.0});
    CHECK(d(0, 0) == 2.0);
    CHECK(d(1, 1) == -3.0);
    CHECK(d(0, 1) == 0.0);
}

TEST_CASE("matmul matches the schoolbook oracle") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.index(6);
        const std::size_t k = 1 + rng.index(6);
        const std::size_t n = 1 + rng.index(6);
        DenseMatrix a = gaussian_matrix(m, k, rng);
        DenseMatrix b = gaussian_matrix(k, n, rng);
        // Sprinkle exact zeros so the zero-skip fast path is exercised.
        for (std::size_t i = 0; i < a.size(); ++i)
            if (rng.uniform() < 0.3) a.data()[i] = 0.0;
        const DenseMatrix fast = matmul(a, b);
        const DenseMatrix slow = naive_matmul(a, b);
        CHECK(max_abs_diff(fast, slow) <= 1e-12);
    }
}

TEST_CASE("matmul zero-skip is exact, not approximate") {
    // Skipping zero multiplicands must leave results bitwise unchanged
    // relative to the oracle when the remaining terms accumulate in order.
    DenseMatrix a(2, 3);
    a(0, 0) = 0.0;
    a(0, 1) = 0.1;
    a(0, 2) = 0.2;
    a(1, 0) = 0.3;
    a(1, 1) = 0.0;
    a(1, 2) = 0.7;
    Rng rng(7);
    const DenseMatrix b = gaussian_matrix(3, 4, rng);
    const DenseMatrix fast = matmul(a, b);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(fast(0, j) == 0.1 * b(1, j) + 0.2 * b(2, j));
        CHECK(fast(1, j) == 0.3 * b(0, j) + 0.7 * b(2, j));
    }
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
    const DenseMatrix a(2, 3, 1.0);
    const DenseMatrix b(4, 2, 1.0);
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matvec agrees with matmul on a single column") {
    Rng rng(11);
    const DenseMatrix a = gaussian_matrix(5, 3, rng);
    const Vector x = gaussian_vector(3, rng);
    DenseMatrix xc(3, 1);
    for (std::size_t i = 0; i < 3; ++i) xc(i, 0) = x[i];
    const Vector y = matvec(a, x);
    const DenseMatrix yc = matmul(a, xc);
    REQUIRE(y.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(y[i] == doctest::Approx(yc(i, 0)).epsilon(1e-14));

    const Vector z = matvec_transposed(a, gaussian_vector(5, rng));
    CHECK(z.size() == 3);
    CHECK_THROWS_AS(matvec(a, Vector{1.0}), DimensionError);
    CHECK_THROWS_AS(matvec_transposed(a, Vector{1.0}), DimensionError);
}

TEST_CASE("matvec_transposed equals transpose-then-matvec") {
    Rng rng(12);
    const DenseMatrix a = gaussian_matrix(4, 6, rng);
    const Vector x = gaussian_vector(4, rng);
    const Vector lhs = matvec_transposed(a, x);
    const Vector rhs = matvec(transpose(a), x);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs[i] == doctest::Approx(rhs[i]).epsilon(1e-14));
}

TEST_CASE("transpose is an involution") {
    Rng rng(13);
    const DenseMatrix a = gaussian_matrix(3, 7, rng);
    const DenseMatrix att = transpose(transpose(a));
    CHECK(a.same_shape(att));
    CHECK(max_abs_diff(a, att) == 0.0);
}

TEST_CASE("gram is exactly symmetric and matches W^T W") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 1 + rng.index(8);
        const std::size_t n = 1 + rng.index(8);
        const DenseMatrix w = gaussian_matrix(m, n, rng);
        const DenseMatrix g = gram(w);
        REQUIRE(g.rows() == n);
        REQUIRE(g.cols() == n);
        // Mirrored assignment makes symmetry bitwise, not approximate.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) CHECK(g(i, j) == g(j, i));
        const DenseMatrix ref = naive_matmul(transpose(w), w);
        CHECK(max_abs_diff(g, ref) <= 1e-12);
    }
}

TEST_CASE("gram of random matrices is positive semdefinite") {
    Rng rng(19);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.index(10);
        const std::size_t n = 1 + rng.index(10);
        const DenseMatrix w = gaussian_matrix(m, n, rng);
        CHECK(min_eig(gram(w)) >= -1e-10 * std::max(1.0, frobenius_norm(gram(w))));
    }
}

TEST_CASE("frobenius norm known values") {
    DenseMatrix a(2, 2);
    a(0, 0) = 3.0;
    a(1, 1) = 4.0;
    CHECK(frobenius_norm(a) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(frobenius_norm(DenseMatrix(3, 3)) == 0.0);
}

TEST_CASE("elementwise add, subtract, scale") {
    Rng rng(23);
    const DenseMatrix a = gaussian_matrix(3, 4, rng);
    const DenseMatrix b = gaussian_matrix(3, 4, rng);
    const DenseMatrix s = add(a, b);
    const DenseMatrix d = subtract(a, b);
    const DenseMatrix h = scale(a, 0.5);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(s(i, j) == a(i, j) + b(i, j));
            CHECK(d(i, j) == a(i, j) - b(i, j));
            CHECK(h(i, j) == 0.5 * a(i, j));
        }
    CHECK_THROWS_AS(add(a, DenseMatrix(4, 3, 0.0)), DimensionError);
    CHECK_THROWS_AS(subtract(a, DenseMatrix(2, 4, 0.0)), DimensionError);
}

TEST_CASE("dot, norm2 and max_abs_diff") {
    CHECK(dot({1.0, 2.0, 3.0}, {4.0, -5.0, 6.0}) == doctest::Approx(12.0));
    CHECK(norm2({3.0, 4.0}) == doctest::Approx(5.0));
    CHECK_THROWS_AS(dot(Vector{1.0}, Vector{1.0, 2.0}), DimensionError);

    DenseMatrix a(2, 2, 1.0);
    DenseMatrix b(2, 2, 1.0);
    b(1, 0) = -2.0;
    CHECK(max_abs_diff(a, b) == 3.0);
    CHECK_THROWS_AS(max_abs_diff(a, DenseMatrix(1, 2, 0.0)), DimensionError);
}
