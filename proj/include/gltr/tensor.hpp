// SPDX-License-Identifier: Apache-2.0
//
// Dense 2-D kernels used by every other module. Matrices are row-major
// 64-bit reals; a frame-feature sequence is a channels x frames matrix whose
// columns are the per-frame vectors.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace gltr {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::vector<double> column(std::size_t c) const;
    // Copy of columns [first, first + count).
    Matrix columns(std::size_t first, std::size_t count) const;
    void set_columns(std::size_t first, const Matrix& block);
    Matrix transposed() const;

    void fill(double value);
    Matrix& operator+=(const Matrix& other);
    Matrix& operator*=(double scale);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator*(double scale, Matrix m);

// Horizontal concatenation; all blocks must share the row count.
Matrix hconcat(std::span<const Matrix> blocks);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T and a^T * b without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// How tap i of a width-w kernel maps to a frame offset. Centered taps cover
// offsets -(w-1)/2 .. (w-1)/2; Forward taps cover offsets 1 .. w, which is the
// literal indexing of the sum over i = 1..w.
enum class TapAlignment { Centered, Forward };

struct DepthwiseKernel {
    Matrix taps; // channels x width

    DepthwiseKernel() = default;
    explicit DepthwiseKernel(Matrix taps);
    DepthwiseKernel(std::size_t channels, std::size_t width);

    std::size_t channels() const noexcept { return taps.rows(); }
    std::size_t width() const noexcept { return taps.cols(); }

    static DepthwiseKernel identity(std::size_t channels, std::size_t width);
};

// Frame offset of tap `tap` (before multiplying by the dilation).
long tap_offset(std::size_t tap, std::size_t width, TapAlignment alignment) noexcept;

// out[c,t] = sum_i x[c, t + r * offset(i)] * taps[c,i]; frames outside
// [0, T) read as zero, so the output keeps the input shape.
Matrix depthwise_dilated_conv(const Matrix& x, const DepthwiseKernel& kernel, std::size_t dilation,
                              TapAlignment alignment = TapAlignment::Centered);

// Accumulates the input gradient into `dx` and the tap gradient into `dtaps`.
void depthwise_dilated_conv_backward(const Matrix& x, const DepthwiseKernel& kernel,
                                     std::size_t dilation, TapAlignment alignment,
                                     const Matrix& dout, Matrix& dx, Matrix& dtaps);

// Each output column t is weights * x[:,t] + bias.
Matrix pointwise_conv(const Matrix& x, const Matrix& weights, std::span<const double> bias);

Matrix relu(const Matrix& x);
Matrix row_softmax(const Matrix& x);
// Gradient of a row softmax given its output and the upstream gradient.
Matrix row_softmax_backward(const Matrix& softmax_out, const Matrix& dout);

enum class Mode { Training, Inference };

struct BatchNormState {
    std::size_t channels = 0;
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double eps = 1e-5;
    double momentum = 0.1;
    Mode mode = Mode::Training;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels, double eps = 1e-5, double momentum = 0.1);
};

// Intermediates of one batch-norm forward pass, enough to run backward and to
// fold the batch statistics into the running estimates afterwards.
struct BatchNormCache {
    Mode mode = Mode::Inference;
    Matrix normalized;               // x_hat
    std::vector<double> inv_std;     // per channel
    std::vector<double> batch_mean;  // training mode only
    std::vector<double> batch_var;   // biased, training mode only
    std::size_t count = 0;
};

// Statistics run over every column of `x` (the batch x time axis when clips
// are laid side by side). Does not touch the running estimates.
Matrix batchnorm_forward(const Matrix& x, const BatchNormState& state, Mode mode,
                         BatchNormCache* cache = nullptr);
void batchnorm_update_running(BatchNormState& state, const BatchNormCache& cache);
Matrix batchnorm_backward(const Matrix& dy, const BatchNormState& state, const BatchNormCache& cache,
                          std::span<double> dgamma, std::span<double> dbeta);

// Forward in `state.mode`; in training mode the running estimates are updated.
Matrix batchnorm_temporal(const Matrix& x, BatchNormState& state);

// Projection of each column onto the first principal component of the
// mean-centered column set. The component is oriented so its first nonzero
// coordinate is positive. Zero-variance input yields a zero vector.
std::vector<double> pca_first_component(const Matrix& x);

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues are returned in descending order; column k of `vectors` is the
// unit eigenvector of `values[k]`.
struct SymmetricEigen {
    std::vector<double> values;
    Matrix vectors;
};
SymmetricEigen symmetric_eigen(const Matrix& symmetric);

} // namespace gltr
