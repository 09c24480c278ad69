#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "cgmarl/numeric.hpp"
#include "test_util.hpp"

using namespace cgmarl;

namespace {

// Independent element-wise oracle for the matrix product.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols, 0.0);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            out.at(i, j) = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    const Matrix i2 = Matrix::identity(2);
    const Matrix b = Matrix::from_rows({{3, 4}, {5, 6}});
    CHECK(matmul(i2, b) == b);

    const Matrix two = Matrix::from_rows({{2}});
    const Matrix three = Matrix::from_rows({{3}});
    CHECK(matmul(two, three).at(0, 0) == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(7);
    const Matrix a = testutil::random_matrix(3, 4, rng);
    const Matrix b = testutil::random_matrix(4, 2, rng);
    const Matrix got = matmul(a, b);
    const Matrix want = matmul_oracle(a, b);
    CHECK(testutil::max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    const Matrix a(2, 3);
    const Matrix b(2, 2);
    try {
        matmul(a, b);
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("2x2") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random 5x5 chains") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = testutil::random_matrix(5, 5, rng);
        const Matrix b = testutil::random_matrix(5, 5, rng);
        const Matrix c = testutil::random_matrix(5, 5, rng);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        for (size_t i = 0; i < left.data.size(); ++i)
            CHECK(testutil::rel_error(left.data[i], right.data[i], 1.0) < 1e-9);
    }
}

TEST_CASE("matmul transposed variants agree with plain matmul") {
    Rng rng(13);
    const Matrix a = testutil::random_matrix(4, 6, rng);
    const Matrix b = testutil::random_matrix(5, 6, rng);
    CHECK(testutil::max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-12);
    const Matrix c = testutil::random_matrix(4, 3, rng);
    CHECK(testutil::max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)) < 1e-12);
}

TEST_CASE("relu forward and backward") {
    const Vector x(std::vector<double>{-1, 0, 2});
    const Vector y = relu(x);
    CHECK(y.data == std::vector<double>{0, 0, 2});

    const Vector x2(std::vector<double>{-1, 2});
    const Vector up(std::vector<double>{5, 7});
    CHECK(relu_backward(x2, up).data == std::vector<double>{0, 7});
}

TEST_CASE("relu gradient matches central finite differences") {
    Matrix x = Matrix::from_rows({{0.3, -0.4, 1.1}});
    auto loss = [&] {
        double s = 0.0;
        for (double v : relu(x).data) s += v;
        return s;
    };
    const Matrix up(1, 3, 1.0);
    const Matrix grad = relu_backward(x, up);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double fd = testutil::central_diff(x, i, loss, 1e-5);
        CHECK(testutil::rel_error(grad.data[i], fd, 1e-6) < 1e-6);
    }
}

TEST_CASE("adam with zero gradient leaves the parameter unchanged") {
    Rng rng(3);
    Matrix param = testutil::random_matrix(3, 3, rng);
    const Matrix before = param;
    AdamState st(3, 3);
    adam_step(param, Matrix(3, 3, 0.0), st);
    CHECK(param == before);
    CHECK(st.t == 1);
}

TEST_CASE("adam first step moves a scalar by roughly lr") {
    Matrix param = Matrix::from_rows({{1.0}});
    AdamHyper hp;
    hp.lr = 0.1;
    AdamState st(1, 1, hp);
    adam_step(param, Matrix::from_rows({{1.0}}), st);
    CHECK(param.at(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(st.t == 1);
}

TEST_CASE("adam optimizes a quadratic") {
    Matrix w = Matrix::from_rows({{0.0}});
    AdamHyper hp;
    hp.lr = 0.1;
    AdamState st(1, 1, hp);
    for (int k = 0; k < 100; ++k) {
        const Matrix grad = Matrix::from_rows({{2.0 * (w.at(0, 0) - 3.0)}});
        adam_step(w, grad, st);
    }
    CHECK(std::abs(w.at(0, 0) - 3.0) < 0.5);
}

TEST_CASE("adam rejects shape mismatch") {
    Matrix param(2, 2);
    AdamState st(2, 2);
    CHECK_THROWS_AS(adam_step(param, Matrix(2, 3), st), std::invalid_argument);
}

TEST_CASE("rng determinism and forked streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

    Rng base(42);
    Rng f1 = base.fork(1);
    Rng f2 = base.fork(2);
    CHECK(f1.next() != f2.next());

    Rng c(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("uniform init stays within fan-in bounds") {
    Rng rng(5);
    const Matrix m = init_uniform(8, 16, 16, rng);
    const double bound = 1.0 / std::sqrt(16.0);
    for (double v : m.data) {
        CHECK(v >= -bound);
        CHECK(v <= bound);
    }
}

TEST_CASE("elu and its derivative are consistent") {
    for (double x : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
        const double h = 1e-6;
        const double fd = (elu(x + h) - elu(x - h)) / (2.0 * h);
        CHECK(testutil::rel_error(elu_grad(x), fd, 1e-6) < 1e-4);
    }
}
