// SPDX-License-Identifier: Apache-2.0
#include "gltr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gltr/error.hpp"

namespace gltr {

namespace {

std::string shape(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    require(rows > 0 && cols > 0, ErrorCode::InvalidArgument, "matrix dimensions must be positive");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(rows > 0 && cols > 0, ErrorCode::InvalidArgument, "matrix dimensions must be positive");
    require(data_.size() == rows * cols, ErrorCode::DimensionMismatch,
            "matrix data length does not equal rows*cols");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    require(rows.size() > 0, ErrorCode::InvalidArgument, "from_rows needs at least one row");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        require(r.size() == cols, ErrorCode::DimensionMismatch, "ragged rows in from_rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
}

std::vector<double> Matrix::column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        out[r] = (*this)(r, c);
    }
    return out;
}

Matrix Matrix::columns(std::size_t first, std::size_t count) const {
    require(first + count <= cols_, ErrorCode::DimensionMismatch, "column range out of bounds");
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first), count,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(r * count));
    }
    return out;
}

void Matrix::set_columns(std::size_t first, const Matrix& block) {
    require(block.rows_ == rows_ && first + block.cols_ <= cols_, ErrorCode::DimensionMismatch,
            "column block does not fit");
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(block.data_.begin() + static_cast<std::ptrdiff_t>(r * block.cols_), block.cols_,
                    data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first));
    }
}

Matrix Matrix::transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            out(c, r) = (*this)(r, c);
        }
    }
    return out;
}

void Matrix::fill(double value) {
    std::fill(data_.begin(), data_.end(), value);
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require(rows_ == other.rows_ && cols_ == other.cols_, ErrorCode::DimensionMismatch,
            "matrix add " + shape(*this) + " vs " + shape(other));
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double scale) {
    for (double& v : data_) {
        v *= scale;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) {
    a += b;
    return a;
}

Matrix operator*(double scale, Matrix m) {
    m *= scale;
    return m;
}

Matrix hconcat(std::span<const Matrix> blocks) {
    require(!blocks.empty(), ErrorCode::InvalidArgument, "hconcat of nothing");
    std::size_t cols = 0;
    for (const Matrix& b : blocks) {
        require(b.rows() == blocks.front().rows(), ErrorCode::DimensionMismatch,
                "hconcat row mismatch");
        cols += b.cols();
    }
    Matrix out(blocks.front().rows(), cols);
    std::size_t at = 0;
    for (const Matrix& b : blocks) {
        out.set_columns(at, b);
        at += b.cols();
    }
    return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::DimensionMismatch,
            "max_abs_diff shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    }
    return worst;
}

bool all_finite(const Matrix& m) {
    return std::all_of(m.values().begin(), m.values().end(),
                       [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), ErrorCode::DimensionMismatch,
            "matmul " + shape(a) + " by " + shape(b));
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), ErrorCode::DimensionMismatch,
            "matmul_nt " + shape(a) + " by " + shape(b) + "^T");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto a_row = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto b_row = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a_row[k] * b_row[k];
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), ErrorCode::DimensionMismatch,
            "matmul_tn " + shape(a) + "^T by " + shape(b));
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const auto a_row = a.row(k);
        const auto b_row = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a_row[i];
            auto out_row = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aki * b_row[j];
            }
        }
    }
    return out;
}

DepthwiseKernel::DepthwiseKernel(Matrix t) : taps(std::move(t)) {
    require(taps.cols() % 2 == 1, ErrorCode::InvalidArgument, "kernel width must be odd");
}

DepthwiseKernel::DepthwiseKernel(std::size_t channels, std::size_t width)
    : DepthwiseKernel(Matrix(channels, width)) {}

DepthwiseKernel DepthwiseKernel::identity(std::size_t channels, std::size_t width) {
    DepthwiseKernel k(channels, width);
    for (std::size_t c = 0; c < channels; ++c) {
        k.taps(c, (width - 1) / 2) = 1.0;
    }
    return k;
}

long tap_offset(std::size_t tap, std::size_t width, TapAlignment alignment) noexcept {
    const long i = static_cast<long>(tap);
    if (alignment == TapAlignment::Forward) {
        return i + 1;
    }
    return i - static_cast<long>((width - 1) / 2);
}

namespace {

void check_conv_args(const Matrix& x, const DepthwiseKernel& kernel, std::size_t dilation) {
    require(x.rows() == kernel.channels(), ErrorCode::DimensionMismatch,
            "depthwise conv: input has " + std::to_string(x.rows()) + " channels, kernel has " +
                std::to_string(kernel.channels()));
    require(kernel.width() % 2 == 1, ErrorCode::InvalidArgument, "kernel width must be odd");
    require(dilation >= 1, ErrorCode::InvalidArgument, "dilation must be >= 1");
}

} // namespace

Matrix depthwise_dilated_conv(const Matrix& x, const DepthwiseKernel& kernel, std::size_t dilation,
                              TapAlignment alignment) {
    check_conv_args(x, kernel, dilation);
    const long frames = static_cast<long>(x.cols());
    const long r = static_cast<long>(dilation);
    Matrix out(x.rows(), x.cols());
    for (std::size_t c = 0; c < x.rows(); ++c) {
        const auto in = x.row(c);
        auto dst = out.row(c);
        for (std::size_t i = 0; i < kernel.width(); ++i) {
            const double w = kernel.taps(c, i);
            const long shift = r * tap_offset(i, kernel.width(), alignment);
            const long lo = std::max(0L, -shift);
            const long hi = std::min(frames, frames - shift);
            for (long t = lo; t < hi; ++t) {
                dst[static_cast<std::size_t>(t)] += in[static_cast<std::size_t>(t + shift)] * w;
            }
        }
    }
    return out;
}

void depthwise_dilated_conv_backward(const Matrix& x, const DepthwiseKernel& kernel,
                                     std::size_t dilation, TapAlignment alignment,
                                     const Matrix& dout, Matrix& dx, Matrix& dtaps) {
    check_conv_args(x, kernel, dilation);
    require(dout.rows() == x.rows() && dout.cols() == x.cols() && dx.rows() == x.rows() &&
                dx.cols() == x.cols() && dtaps.rows() == kernel.channels() &&
                dtaps.cols() == kernel.width(),
            ErrorCode::DimensionMismatch, "depthwise conv backward shape mismatch");
    const long frames = static_cast<long>(x.cols());
    const long r = static_cast<long>(dilation);
    for (std::size_t c = 0; c < x.rows(); ++c) {
        const auto in = x.row(c);
        const auto g = dout.row(c);
        auto gin = dx.row(c);
        for (std::size_t i = 0; i < kernel.width(); ++i) {
            const double w = kernel.taps(c, i);
            const long shift = r * tap_offset(i, kernel.width(), alignment);
            const long lo = std::max(0L, -shift);
            const long hi = std::min(frames, frames - shift);
            double acc = 0.0;
            for (long t = lo; t < hi; ++t) {
                const auto src = static_cast<std::size_t>(t + shift);
                acc += g[static_cast<std::size_t>(t)] * in[src];
                gin[src] += g[static_cast<std::size_t>(t)] * w;
            }
            dtaps(c, i) += acc;
        }
    }
}

Matrix pointwise_conv(const Matrix& x, const Matrix& weights, std::span<const double> bias) {
    require(weights.cols() == x.rows(), ErrorCode::DimensionMismatch,
            "pointwise conv: weights " + shape(weights) + " vs input " + shape(x));
    require(bias.size() == weights.rows(), ErrorCode::DimensionMismatch,
            "pointwise conv: bias length does not match output channels");
    Matrix out = matmul(weights, x);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (double& v : out.row(r)) {
            v += bias[r];
        }
    }
    return out;
}

Matrix relu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

Matrix row_softmax(const Matrix& x) {
    Matrix out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double peak = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double& v : row) {
            v = std::exp(v - peak);
            total += v;
        }
        for (double& v : row) {
            v /= total;
        }
    }
    return out;
}

Matrix row_softmax_backward(const Matrix& softmax_out, const Matrix& dout) {
    require(softmax_out.rows() == dout.rows() && softmax_out.cols() == dout.cols(),
            ErrorCode::DimensionMismatch, "softmax backward shape mismatch");
    Matrix din(dout.rows(), dout.cols());
    for (std::size_t r = 0; r < dout.rows(); ++r) {
        const auto p = softmax_out.row(r);
        const auto g = dout.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            dot += p[c] * g[c];
        }
        auto d = din.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) {
            d[c] = p[c] * (g[c] - dot);
        }
    }
    return din;
}

BatchNormState::BatchNormState(std::size_t n, double e, double m)
    : channels(n), gamma(n, 1.0), beta(n, 0.0), running_mean(n, 0.0), running_var(n, 1.0), eps(e),
      momentum(m) {
    require(n > 0, ErrorCode::InvalidArgument, "batch norm needs at least one channel");
    require(e > 0.0, ErrorCode::InvalidArgument, "batch norm eps must be positive");
    require(m > 0.0 && m < 1.0, ErrorCode::InvalidArgument, "batch norm momentum must be in (0,1)");
}

Matrix batchnorm_forward(const Matrix& x, const BatchNormState& state, Mode mode,
                         BatchNormCache* cache) {
    require(x.rows() == state.channels, ErrorCode::DimensionMismatch,
            "batch norm: input has " + std::to_string(x.rows()) + " channels, state has " +
                std::to_string(state.channels));
    const std::size_t n = x.cols();
    BatchNormCache local;
    BatchNormCache& c = cache != nullptr ? *cache : local;
    c.mode = mode;
    c.count = n;
    c.inv_std.assign(x.rows(), 0.0);
    c.normalized = Matrix(x.rows(), n);
    if (mode == Mode::Training) {
        c.batch_mean.assign(x.rows(), 0.0);
        c.batch_var.assign(x.rows(), 0.0);
    } else {
        c.batch_mean.clear();
        c.batch_var.clear();
    }

    Matrix out(x.rows(), n);
    for (std::size_t ch = 0; ch < x.rows(); ++ch) {
        const auto in = x.row(ch);
        double mean = state.running_mean[ch];
        double var = state.running_var[ch];
        if (mode == Mode::Training) {
            mean = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(n);
            var = 0.0;
            for (double v : in) {
                var += (v - mean) * (v - mean);
            }
            var /= static_cast<double>(n);
            c.batch_mean[ch] = mean;
            c.batch_var[ch] = var;
        }
        const double inv_std = 1.0 / std::sqrt(var + state.eps);
        c.inv_std[ch] = inv_std;
        auto xhat = c.normalized.row(ch);
        auto dst = out.row(ch);
        for (std::size_t t = 0; t < n; ++t) {
            xhat[t] = (in[t] - mean) * inv_std;
            dst[t] = state.gamma[ch] * xhat[t] + state.beta[ch];
        }
    }
    return out;
}

void batchnorm_update_running(BatchNormState& state, const BatchNormCache& cache) {
    if (cache.mode != Mode::Training) {
        return;
    }
    const double n = static_cast<double>(cache.count);
    // Running variance tracks the unbiased estimate.
    const double unbias = cache.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t ch = 0; ch < state.channels; ++ch) {
        state.running_mean[ch] =
            (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * cache.batch_mean[ch];
        state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] +
                                state.momentum * cache.batch_var[ch] * unbias;
    }
}

Matrix batchnorm_backward(const Matrix& dy, const BatchNormState& state, const BatchNormCache& cache,
                          std::span<double> dgamma, std::span<double> dbeta) {
    require(dy.rows() == state.channels && dy.cols() == cache.count &&
                dgamma.size() == state.channels && dbeta.size() == state.channels,
            ErrorCode::DimensionMismatch, "batch norm backward shape mismatch");
    const std::size_t n = cache.count;
    Matrix dx(dy.rows(), n);
    for (std::size_t ch = 0; ch < state.channels; ++ch) {
        const auto g = dy.row(ch);
        const auto xhat = cache.normalized.row(ch);
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            sum_g += g[t];
            sum_gx += g[t] * xhat[t];
        }
        dgamma[ch] += sum_gx;
        dbeta[ch] += sum_g;
        const double scale = state.gamma[ch] * cache.inv_std[ch];
        auto dst = dx.row(ch);
        if (cache.mode == Mode::Training) {
            const double mean_g = sum_g / static_cast<double>(n);
            const double mean_gx = sum_gx / static_cast<double>(n);
            for (std::size_t t = 0; t < n; ++t) {
                dst[t] = scale * (g[t] - mean_g - xhat[t] * mean_gx);
            }
        } else {
            for (std::size_t t = 0; t < n; ++t) {
                dst[t] = scale * g[t];
            }
        }
    }
    return dx;
}

Matrix batchnorm_temporal(const Matrix& x, BatchNormState& state) {
    BatchNormCache cache;
    Matrix out = batchnorm_forward(x, state, state.mode, &cache);
    batchnorm_update_running(state, cache);
    return out;
}

SymmetricEigen symmetric_eigen(const Matrix& symmetric) {
    require(symmetric.rows() == symmetric.cols(), ErrorCode::DimensionMismatch,
            "symmetric_eigen needs a square matrix");
    const std::size_t n = symmetric.rows();
    Matrix a = symmetric;
    Matrix v = Matrix::identity(n);

    auto off_diagonal = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                s += a(i, j) * a(i, j);
            }
        }
        return s;
    };
    double scale = 0.0;
    for (double x : a.values()) {
        scale += x * x;
    }

    for (int sweep = 0; sweep < 100 && off_diagonal() > 1e-30 * scale; ++sweep) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    SymmetricEigen result{std::vector<double>(n), Matrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        result.values[k] = a(order[k], order[k]);
        for (std::size_t r = 0; r < n; ++r) {
            result.vectors(r, k) = v(r, order[k]);
        }
    }
    return result;
}

std::vector<double> pca_first_component(const Matrix& x) {
    require(x.cols() >= 2, ErrorCode::InvalidArgument, "PCA needs at least two columns");
    const std::size_t dims = x.rows();
    const std::size_t frames = x.cols();

    Matrix centered = x;
    for (std::size_t r = 0; r < dims; ++r) {
        auto row = centered.row(r);
        const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(frames);
        for (double& v : row) {
            v -= mean;
        }
    }

    // Spread below rounding level of the data counts as zero variance.
    double input_scale = 0.0;
    double spread = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        input_scale = std::max(input_scale, std::abs(x.values()[i]));
        spread = std::max(spread, std::abs(centered.values()[i]));
    }
    if (spread <= 1e-13 * input_scale || spread == 0.0) {
        return std::vector<double>(frames, 0.0);
    }

    // Work in whichever of the feature or frame space is smaller.
    std::vector<double> direction(dims, 0.0);
    if (dims <= frames) {
        const SymmetricEigen eig = symmetric_eigen(matmul_nt(centered, centered));
        if (!(eig.values[0] > 0.0)) {
            return std::vector<double>(frames, 0.0);
        }
        direction = eig.vectors.column(0);
    } else {
        const SymmetricEigen eig = symmetric_eigen(matmul_tn(centered, centered));
        if (!(eig.values[0] > 0.0)) {
            return std::vector<double>(frames, 0.0);
        }
        const std::vector<double> v = eig.vectors.column(0);
        double norm = 0.0;
        for (std::size_t r = 0; r < dims; ++r) {
            double acc = 0.0;
            for (std::size_t t = 0; t < frames; ++t) {
                acc += centered(r, t) * v[t];
            }
            direction[r] = acc;
            norm += acc * acc;
        }
        norm = std::sqrt(norm);
        for (double& d : direction) {
            d /= norm;
        }
    }

    // Relative threshold so rounding noise does not decide the sign.
    double largest = 0.0;
    for (double d : direction) {
        largest = std::max(largest, std::abs(d));
    }
    for (double d : direction) {
        if (std::abs(d) > 1e-12 * largest) {
            if (d < 0.0) {
                for (double& e : direction) {
                    e = -e;
                }
            }
            break;
        }
    }

    std::vector<double> projection(frames, 0.0);
    for (std::size_t r = 0; r < dims; ++r) {
        const auto row = centered.row(r);
        for (std::size_t t = 0; t < frames; ++t) {
            projection[t] += direction[r] * row[t];
        }
    }
    return projection;
}

} // namespace gltr
