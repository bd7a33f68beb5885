// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

#include "gltr/error.hpp"
#include "gltr/tensor.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace gltr;
using gltr::test::random_matrix;
using gltr::test::sliding_window_conv;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += a(i, k) * b(k, j);
            }
            out(i, j) = s;
        }
    }
    return out;
}

} // namespace

TEST_CASE("matmul: identity, summation, naive oracle, mismatch") {
    std::mt19937_64 rng(1);
    const Matrix x = random_matrix(3, 4, rng);
    CHECK(matmul(Matrix::identity(3), x) == x);

    const std::size_t k = 7;
    const Matrix s = matmul(Matrix(1, k, 1.0), Matrix(k, 1, 1.0));
    CHECK(s.rows() == 1);
    CHECK(s(0, 0) == 7.0);

    const Matrix a = random_matrix(4, 5, rng);
    const Matrix b = random_matrix(5, 2, rng);
    CHECK(matmul(a, b) == naive_matmul(a, b));
    CHECK(matmul_nt(a, b.transposed()) == naive_matmul(a, b));
    CHECK(matmul_tn(a.transposed(), b) == naive_matmul(a, b));

    CHECK_THROWS_AS(matmul(a, a), Error);
    try {
        matmul(a, a);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
}

TEST_CASE("depthwise conv: sliding window oracle over many shapes") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng() % 8;
        const std::size_t T = 1 + rng() % 32;
        const std::size_t r = std::size_t{1} << (rng() % 3);
        const Matrix x = random_matrix(d, T, rng);
        const Matrix taps = random_matrix(d, 3, rng);
        const Matrix got = depthwise_dilated_conv(x, DepthwiseKernel(taps), r);
        CHECK(max_abs_diff(got, sliding_window_conv(x, taps, r)) < 1e-12);
    }
    const Matrix x = random_matrix(4, 8, rng);
    const Matrix taps5 = random_matrix(4, 5, rng);
    CHECK(max_abs_diff(depthwise_dilated_conv(x, DepthwiseKernel(taps5), 2),
                       sliding_window_conv(x, taps5, 2)) < 1e-12);
}

TEST_CASE("depthwise conv: w=3, r=2 covers t-2, t, t+2") {
    Matrix x(1, 9);
    Matrix taps = Matrix::from_rows({{1.0, 10.0, 100.0}});
    x(0, 2) = 1.0;
    x(0, 4) = 2.0;
    x(0, 6) = 3.0;
    x(0, 3) = 1000.0; // odd offsets are skipped at r = 2
    x(0, 5) = 1000.0;
    const Matrix y = depthwise_dilated_conv(x, DepthwiseKernel(taps), 2);
    CHECK(y(0, 4) == 1.0 * 1.0 + 10.0 * 2.0 + 100.0 * 3.0);
}

TEST_CASE("depthwise conv: identity kernel and receptive-field locality") {
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(5, 20, rng);
    for (std::size_t r : {1, 2, 4}) {
        CHECK(depthwise_dilated_conv(x, DepthwiseKernel::identity(5, 3), r) == x);
    }
    for (std::size_t r : {1, 2, 4}) {
        const Matrix taps = random_matrix(5, 3, rng);
        const DepthwiseKernel k(taps);
        const Matrix base = depthwise_dilated_conv(x, k, r);
        for (std::size_t s = 0; s < x.cols(); ++s) {
            Matrix bumped = x;
            for (std::size_t c = 0; c < x.rows(); ++c) {
                bumped(c, s) += 0.75;
            }
            const Matrix y = depthwise_dilated_conv(bumped, k, r);
            for (std::size_t t = 0; t < x.cols(); ++t) {
                const std::size_t dist = s > t ? s - t : t - s;
                bool changed = false;
                for (std::size_t c = 0; c < x.rows(); ++c) {
                    changed = changed || y(c, t) != base(c, t);
                }
                if (dist > r) {
                    CHECK_FALSE(changed);
                }
            }
        }
    }
}

TEST_CASE("depthwise conv: linearity and argument checks") {
    std::mt19937_64 rng(4);
    const Matrix x = random_matrix(3, 10, rng);
    const Matrix y = random_matrix(3, 10, rng);
    const DepthwiseKernel k(random_matrix(3, 3, rng));
    const double a = 0.7;
    const double b = -1.3;
    const Matrix lhs = depthwise_dilated_conv(a * x + b * y, k, 2);
    const Matrix rhs = a * depthwise_dilated_conv(x, k, 2) + b * depthwise_dilated_conv(y, k, 2);
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);

    CHECK_THROWS_AS(DepthwiseKernel(Matrix(3, 2)), Error);
    CHECK_THROWS_AS(depthwise_dilated_conv(x, k, 0), Error);
    CHECK_THROWS_AS(depthwise_dilated_conv(Matrix(4, 10), k, 1), Error);
}

TEST_CASE("depthwise conv: forward tap alignment reads t + r*i for i = 1..w") {
    Matrix x(1, 10);
    for (std::size_t t = 0; t < 10; ++t) {
        x(0, t) = static_cast<double>(t + 1);
    }
    const Matrix taps = Matrix::from_rows({{1.0, 0.0, 0.0}});
    const Matrix y = depthwise_dilated_conv(x, DepthwiseKernel(taps), 2, TapAlignment::Forward);
    CHECK(y(0, 0) == x(0, 2));
    CHECK(y(0, 7) == x(0, 9));
    CHECK(y(0, 8) == 0.0);
}

TEST_CASE("depthwise conv backward matches finite differences") {
    std::mt19937_64 rng(5);
    const Matrix x = random_matrix(3, 9, rng);
    const DepthwiseKernel k(random_matrix(3, 3, rng));
    const Matrix dout = random_matrix(3, 9, rng);
    for (TapAlignment align : {TapAlignment::Centered, TapAlignment::Forward}) {
        Matrix dx(3, 9);
        Matrix dtaps(3, 3);
        depthwise_dilated_conv_backward(x, k, 2, align, dout, dx, dtaps);
        const auto objective = [&](const Matrix& xx, const DepthwiseKernel& kk) {
            const Matrix y = depthwise_dilated_conv(xx, kk, 2, align);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) {
                s += y.values()[i] * dout.values()[i];
            }
            return s;
        };
        // The objective is linear in each argument, so one-sided differences are exact up to rounding.
        for (std::size_t i = 0; i < x.size(); ++i) {
            Matrix xp = x;
            xp.values()[i] += 1.0;
            CHECK(objective(xp, k) - objective(x, k) == doctest::Approx(dx.values()[i]).epsilon(1e-10));
        }
        for (std::size_t i = 0; i < k.taps.size(); ++i) {
            DepthwiseKernel kp = k;
            kp.taps.values()[i] += 1.0;
            CHECK(objective(x, kp) - objective(x, k) == doctest::Approx(dtaps.values()[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("pointwise conv: identity, zero, per-column oracle, linearity") {
    std::mt19937_64 rng(6);
    const Matrix x = random_matrix(4, 7, rng);
    const std::vector<double> zero4(4, 0.0);
    CHECK(pointwise_conv(x, Matrix::identity(4), zero4) == x);
    CHECK(pointwise_conv(x, Matrix(3, 4), std::vector<double>(3, 0.0)) == Matrix(3, 7));

    const Matrix w = random_matrix(3, 4, rng);
    const std::vector<double> bias = {0.5, -1.0, 2.0};
    const Matrix y = pointwise_conv(x, w, bias);
    for (std::size_t t = 0; t < x.cols(); ++t) {
        const Matrix col = matmul(w, x.columns(t, 1));
        for (std::size_t r = 0; r < 3; ++r) {
            CHECK(y(r, t) == col(r, 0) + bias[r]);
        }
    }
    const Matrix x2 = random_matrix(4, 7, rng);
    const std::vector<double> zero3(3, 0.0);
    const Matrix lhs = pointwise_conv(2.0 * x + -3.0 * x2, w, zero3);
    const Matrix rhs = 2.0 * pointwise_conv(x, w, zero3) + -3.0 * pointwise_conv(x2, w, zero3);
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
    CHECK_THROWS_AS(pointwise_conv(x, Matrix(3, 5), zero3), Error);
}

TEST_CASE("relu") {
    std::mt19937_64 rng(7);
    CHECK(relu(random_matrix(3, 4, rng, -2.0, -0.1)) == Matrix(3, 4));
    const Matrix pos = random_matrix(3, 4, rng, 0.0, 2.0);
    CHECK(relu(pos) == pos);
    const Matrix mixed = random_matrix(5, 5, rng);
    const Matrix y = relu(mixed);
    for (std::size_t i = 0; i < mixed.size(); ++i) {
        CHECK(y.values()[i] == (mixed.values()[i] > 0.0 ? mixed.values()[i] : 0.0));
    }
}

TEST_CASE("row softmax: uniform, saturation, extended-precision oracle, shift invariance") {
    const Matrix u = row_softmax(Matrix(2, 5, 3.0));
    for (double v : u.values()) {
        CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
    }
    Matrix spike(1, 4);
    spike(0, 2) = 1000.0;
    const Matrix s = row_softmax(spike);
    CHECK(s(0, 2) == doctest::Approx(1.0));
    CHECK(s(0, 0) < 1e-300);

    std::mt19937_64 rng(8);
    const Matrix x = random_matrix(6, 9, rng, -5.0, 5.0);
    const Matrix y = row_softmax(x);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        long double z = 0.0L;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            z += std::exp(static_cast<long double>(x(r, c)));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const long double expect = std::exp(static_cast<long double>(x(r, c))) / z;
            CHECK(std::abs(static_cast<long double>(y(r, c)) - expect) / expect < 1e-12L);
            CHECK(y(r, c) > 0.0);
            CHECK(y(r, c) < 1.0);
            sum += y(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    Matrix shifted = x;
    for (std::size_t c = 0; c < x.cols(); ++c) {
        shifted(0, c) += 123.0;
    }
    CHECK(max_abs_diff(row_softmax(shifted), y) < 1e-9);
}

TEST_CASE("batch norm: training statistics, inference affine map, two-pass oracle") {
    std::mt19937_64 rng(9);
    const Matrix x = random_matrix(4, 30, rng, -3.0, 5.0);

    BatchNormState train_state(4);
    const Matrix y = batchnorm_temporal(x, train_state);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (double v : y.row(c)) {
            mean += v;
        }
        mean /= 30.0;
        double var = 0.0;
        for (double v : y.row(c)) {
            var += (v - mean) * (v - mean);
        }
        var /= 30.0;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }

    // Two-pass oracle for output and running statistics.
    BatchNormState st(4, 1e-5, 0.1);
    for (std::size_t c = 0; c < 4; ++c) {
        st.gamma[c] = 0.5 + 0.25 * static_cast<double>(c);
        st.beta[c] = -0.3 * static_cast<double>(c);
        st.running_mean[c] = 0.2;
        st.running_var[c] = 1.5;
    }
    const BatchNormState before = st;
    const Matrix out = batchnorm_temporal(x, st);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (double v : x.row(c)) {
            mean += v;
        }
        mean /= 30.0;
        double ss = 0.0;
        for (double v : x.row(c)) {
            ss += (v - mean) * (v - mean);
        }
        const double var = ss / 30.0;
        for (std::size_t t = 0; t < 30; ++t) {
            const double expect = before.gamma[c] * (x(c, t) - mean) / std::sqrt(var + 1e-5) + before.beta[c];
            CHECK(std::abs(out(c, t) - expect) < 1e-10);
        }
        CHECK(st.running_mean[c] == doctest::Approx(0.9 * 0.2 + 0.1 * mean).epsilon(1e-12));
        CHECK(st.running_var[c] == doctest::Approx(0.9 * 1.5 + 0.1 * ss / 29.0).epsilon(1e-12));
        CHECK(st.running_var[c] >= 0.0);
    }

    BatchNormState inf(4);
    inf.mode = Mode::Inference;
    const Matrix z = batchnorm_temporal(x, inf);
    CHECK(max_abs_diff(z, x) < 1e-4);
    CHECK(batchnorm_temporal(x, inf) == z);
    CHECK(inf.running_mean == std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(batchnorm_temporal(Matrix(3, 5), inf), Error);
}

TEST_CASE("batch norm backward matches finite differences in training mode") {
    std::mt19937_64 rng(10);
    const Matrix x = random_matrix(3, 12, rng, -2.0, 2.0);
    const Matrix dout = random_matrix(3, 12, rng);
    BatchNormState st(3);
    st.gamma = {0.7, 1.3, 0.9};
    st.beta = {0.1, -0.2, 0.3};
    BatchNormCache cache;
    batchnorm_forward(x, st, Mode::Training, &cache);
    std::vector<double> dg(3, 0.0);
    std::vector<double> db(3, 0.0);
    const Matrix dx = batchnorm_backward(dout, st, cache, dg, db);
    const auto objective = [&](const Matrix& xx, const BatchNormState& s) {
        const Matrix y = batchnorm_forward(xx, s, Mode::Training);
        double sum = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            sum += y.values()[i] * dout.values()[i];
        }
        return sum;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Matrix xp = x;
        Matrix xm = x;
        xp.values()[i] += h;
        xm.values()[i] -= h;
        CHECK((objective(xp, st) - objective(xm, st)) / (2 * h) == doctest::Approx(dx.values()[i]).epsilon(1e-6));
    }
    for (std::size_t c = 0; c < 3; ++c) {
        BatchNormState sp = st;
        BatchNormState sm = st;
        sp.gamma[c] += h;
        sm.gamma[c] -= h;
        CHECK((objective(x, sp) - objective(x, sm)) / (2 * h) == doctest::Approx(dg[c]).epsilon(1e-6));
    }
}

TEST_CASE("pca: rank-one line, degenerate input, eigen-solver oracle") {
    // Columns on a line through the mean: x_t = m + s_t * u with unit u.
    const std::vector<double> s = {-2.0, -0.5, 0.0, 1.0, 1.5};
    const std::vector<double> u = {0.6, 0.0, 0.8};
    const std::vector<double> m = {1.0, 2.0, 3.0};
    Matrix line(3, s.size());
    for (std::size_t t = 0; t < s.size(); ++t) {
        for (std::size_t c = 0; c < 3; ++c) {
            line(c, t) = m[c] + s[t] * u[c];
        }
    }
    const std::vector<double> p = pca_first_component(line);
    for (std::size_t t = 0; t < s.size(); ++t) {
        CHECK(p[t] == doctest::Approx(s[t]).epsilon(1e-10));
    }

    Matrix same(4, 6);
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t t = 0; t < 6; ++t) {
            same(c, t) = static_cast<double>(c) - 1.5;
        }
    }
    CHECK(pca_first_component(same) == std::vector<double>(6, 0.0));

    std::mt19937_64 rng(11);
    for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{6, 10}, {12, 5}}) {
        const Matrix x = random_matrix(rows, cols, rng);
        Eigen::MatrixXd e(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x(r, c);
            }
        }
        const Eigen::VectorXd mean = e.rowwise().mean();
        const Eigen::MatrixXd centered = e.colwise() - mean;
        const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(cols);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        const double top = solver.eigenvalues().maxCoeff();

        const std::vector<double> proj = pca_first_component(x);
        REQUIRE(proj.size() == cols);
        double var = 0.0;
        for (double v : proj) {
            var += v * v;
        }
        var /= static_cast<double>(cols);
        CHECK(std::abs(var - top) / top < 1e-8);
        CHECK(std::abs(std::accumulate(proj.begin(), proj.end(), 0.0)) < 1e-10);
    }
}

TEST_CASE("symmetric eigen against Eigen") {
    std::mt19937_64 rng(12);
    const Matrix a = random_matrix(5, 5, rng);
    const Matrix sym = a + a.transposed();
    const SymmetricEigen mine = symmetric_eigen(sym);
    Eigen::MatrixXd e(5, 5);
    for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
            e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sym(r, c);
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(mine.values[k] == doctest::Approx(solver.eigenvalues()(static_cast<Eigen::Index>(4 - k))).epsilon(1e-10));
    }
    for (std::size_t k = 1; k < 5; ++k) {
        CHECK(mine.values[k - 1] >= mine.values[k]);
    }
}

TEST_CASE("matrix helpers") {
    const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(a.transposed()(2, 1) == 6.0);
    CHECK(a.columns(1, 2) == Matrix::from_rows({{2, 3}, {5, 6}}));
    const Matrix blocks[] = {a.columns(0, 1), a.columns(1, 2)};
    CHECK(hconcat(blocks) == a);
    CHECK(a.column(1) == std::vector<double>{2, 5});
    Matrix bad = a;
    bad(0, 0) = std::nan("");
    CHECK_FALSE(all_finite(bad));
    CHECK(all_finite(a));
    CHECK_THROWS_AS(Matrix(0, 3), Error);
}
