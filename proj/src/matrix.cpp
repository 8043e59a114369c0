#include "difformer/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "difformer/error.hpp"
#include "difformer/kernels.hpp"

namespace difformer {

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                         " and " + b.shape_string());
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) shape_error(op, a, b);
}

void require_finite(const char* op, const Matrix& m) {
    if (!all_finite(m)) throw DomainError(std::string(op) + ": produced a non-finite entry");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows * cols) {
        throw DimensionError("Matrix: " + std::to_string(values_.size()) +
                             " values do not fill a " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " matrix");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(values));
}

Matrix Matrix::random_normal(std::size_t rows, std::size_t cols, std::uint64_t seed,
                             double stddev) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.values_) v = dist(rng);
    return m;
}

Matrix Matrix::random_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed,
                              double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.values_) v = dist(rng);
    return m;
}

void Matrix::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double CsrMatrix::at(std::size_t i, std::size_t j) const {
    for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
        if (col_idx[p] == j) return values[p];
    }
    return 0.0;
}

Matrix CsrMatrix::to_dense() const {
    Matrix d(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) d(i, col_idx[p]) += values[p];
    }
    return d;
}

CsrMatrix CsrMatrix::transpose() const {
    CsrMatrix t;
    t.rows = cols;
    t.cols = rows;
    t.row_ptr.assign(cols + 1, 0);
    for (std::size_t c : col_idx) ++t.row_ptr[c + 1];
    for (std::size_t i = 0; i < cols; ++i) t.row_ptr[i + 1] += t.row_ptr[i];
    t.col_idx.resize(nnz());
    t.values.resize(nnz());
    std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
            const std::size_t dst = cursor[col_idx[p]]++;
            t.col_idx[dst] = i;
            t.values[dst] = values[p];
        }
    }
    return t;
}

std::vector<double> CsrMatrix::row_sums() const {
    std::vector<double> s(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) s[i] += values[p];
    }
    return s;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    Matrix c(a.rows(), b.cols());
    if (a.rows() && b.cols() && a.cols()) {
        kernels::gemm(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(),
                      c.data(), c.cols());
    }
    require_finite("matmul", c);
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    }
    return t;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
    return matmul(a, transpose(b));
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
    // Sum of row outer products: streams both operands once, no transposed copy.
    Matrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* brow = b.row(i).data();
        for (std::size_t t = 0; t < a.cols(); ++t) kernels::axpy(a(i, t), brow, c.row(t).data(), b.cols());
    }
    return c;
}

Matrix spmm(const CsrMatrix& a, const Matrix& b) {
    if (a.cols != b.rows()) {
        throw DimensionError("spmm: incompatible shapes " + std::to_string(a.rows) + "x" +
                             std::to_string(a.cols) + " and " + b.shape_string());
    }
    Matrix c(a.rows, b.cols());
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* crow = c.row(i).data();
        for (std::size_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
            kernels::axpy(a.values[p], b.row(a.col_idx[p]).data(), crow, b.cols());
        }
    }
    return c;
}

Matrix add(const Matrix& a, const Matrix& b) { return axpby(1.0, a, 1.0, b); }

Matrix sub(const Matrix& a, const Matrix& b) { return axpby(1.0, a, -1.0, b); }

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
    return c;
}

Matrix axpby(double alpha, const Matrix& a, double beta, const Matrix& b) {
    require_same_shape("axpby", a, b);
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape("hadamard", a, b);
    Matrix c(a.rows(), a.cols());
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
    return c;
}

Matrix add_row_vector(const Matrix& a, std::span<const double> row) {
    if (row.size() != a.cols()) {
        throw DimensionError("add_row_vector: row of length " + std::to_string(row.size()) +
                             " for a " + a.shape_string() + " matrix");
    }
    Matrix c = a;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        auto r = c.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
    }
    return c;
}

std::vector<double> row_sums(const Matrix& a) {
    std::vector<double> s(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (double v : a.row(i)) s[i] += v;
    }
    return s;
}

std::vector<double> col_sums(const Matrix& a) {
    std::vector<double> s(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        kernels::axpy(1.0, a.row(i).data(), s.data(), a.cols());
    }
    return s;
}

double frobenius_sq(const Matrix& a) { return kernels::dot(a.data(), a.data(), a.size()); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape("max_abs_diff", a, b);
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double max_rel_diff(const Matrix& a, const Matrix& b, double floor) {
    require_same_shape("max_rel_diff", a, b);
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        const double y = b.data()[i];
        const double denom = std::max({std::abs(x), std::abs(y), floor});
        m = std::max(m, std::abs(x - y) / denom);
    }
    return m;
}

bool all_finite(const Matrix& a) noexcept {
    return std::all_of(a.values().begin(), a.values().end(),
                       [](double v) { return std::isfinite(v); });
}

Matrix rowwise_l2_normalize(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        const double norm = std::sqrt(kernels::dot(r.data(), r.data(), r.size()));
        if (!(norm > kNormGuard)) {
            throw DegenerateRowError(i, "rowwise_l2_normalize: row " + std::to_string(i) +
                                            " has norm " + std::to_string(norm));
        }
        auto o = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) o[j] = r[j] / norm;
    }
    return out;
}

Matrix layer_norm_rows(const Matrix& m, std::span<const double> gain,
                       std::span<const double> bias, double eps) {
    if (gain.size() != m.cols() || bias.size() != m.cols()) {
        throw DimensionError("layer_norm_rows: gain/bias length " + std::to_string(gain.size()) +
                             "/" + std::to_string(bias.size()) + " for a " + m.shape_string() +
                             " matrix");
    }
    if (m.cols() < 2) throw DimensionError("layer_norm_rows: needs at least 2 columns");
    const double inv_n = 1.0 / static_cast<double>(m.cols());
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean *= inv_n;
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var *= inv_n;
        const double denom = std::sqrt(var) + eps;
        auto o = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) o[j] = (r[j] - mean) / denom * gain[j] + bias[j];
    }
    return out;
}

Matrix relu(const Matrix& m) {
    Matrix out = m;
    for (double& v : std::span(out.data(), out.size())) v = v > 0.0 ? v : 0.0;
    return out;
}

Matrix sigmoid(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    kernels::sigmoid(m.data(), out.data(), m.size());
    return out;
}

Matrix log_softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        auto o = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) o[j] = r[j] - lse;
    }
    return out;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ParameterError("dropout: probability must satisfy 0 <= p < 1, got " +
                             std::to_string(p));
    }
    Matrix mask(rows, cols, 1.0);
    if (p == 0.0) return mask;
    std::mt19937_64 rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& v : std::span(mask.data(), mask.size())) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = u < p ? 0.0 : keep_scale;
    }
    return mask;
}

Matrix dropout(const Matrix& m, double p, std::uint64_t seed, Mode mode) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ParameterError("dropout: probability must satisfy 0 <= p < 1, got " +
                             std::to_string(p));
    }
    if (mode == Mode::eval || p == 0.0) return m;
    return hadamard(m, dropout_mask(m.rows(), m.cols(), p, seed));
}

}  // namespace difformer
