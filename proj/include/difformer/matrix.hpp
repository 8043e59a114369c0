#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace difformer {

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Throws DimensionError unless values.size() == rows * cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    /// Entries drawn i.i.d. from N(0, stddev^2) with a seeded mt19937_64.
    static Matrix random_normal(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                double stddev = 1.0);
    static Matrix random_uniform(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                 double lo, double hi);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return values_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) noexcept { return {values_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {values_.data() + i * cols_, cols_};
    }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    const std::vector<double>& values() const noexcept { return values_; }

    void fill(double v);
    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_string() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

/// Compressed sparse row matrix (used for the normalized adjacency).
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::size_t> col_idx;
    std::vector<double> values;

    std::size_t nnz() const noexcept { return values.size(); }
    /// Returns A(i, j) by scanning row i; 0 when absent.
    double at(std::size_t i, std::size_t j) const;
    Matrix to_dense() const;
    CsrMatrix transpose() const;
    std::vector<double> row_sums() const;
};

// ---------------------------------------------------------------------------
// Dense operations. Shape mismatches throw DimensionError naming both shapes.

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// Sparse-dense product a * b.
Matrix spmm(const CsrMatrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
/// alpha * a + beta * b
Matrix axpby(double alpha, const Matrix& a, double beta, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
/// Adds a 1 x cols row vector to every row.
Matrix add_row_vector(const Matrix& a, std::span<const double> row);

std::vector<double> row_sums(const Matrix& a);
std::vector<double> col_sums(const Matrix& a);
double frobenius_sq(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
/// max_ij |a - b| / max(|a|, |b|, floor)
double max_rel_diff(const Matrix& a, const Matrix& b, double floor = 1e-300);
bool all_finite(const Matrix& a) noexcept;

/// Rows with norm at or below this are rejected by rowwise_l2_normalize.
inline constexpr double kNormGuard = 1e-12;
/// Added to the row standard deviation inside layer_norm_rows.
inline constexpr double kLayerNormEps = 1e-5;

/// Divides each row by its L2 norm; DegenerateRowError on rows with norm <= kNormGuard.
Matrix rowwise_l2_normalize(const Matrix& m);

/// Per row: (x - mean) / (std + eps) * gain + bias, std the population deviation.
Matrix layer_norm_rows(const Matrix& m, std::span<const double> gain,
                       std::span<const double> bias, double eps = kLayerNormEps);

Matrix relu(const Matrix& m);
Matrix sigmoid(const Matrix& m);
Matrix log_softmax_rows(const Matrix& m);

enum class Mode { train, eval };

/// Keep-mask for dropout: entries are 0 with probability p, else 1 / (1 - p).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed);
/// Identity in eval mode; ParameterError unless 0 <= p < 1.
Matrix dropout(const Matrix& m, double p, std::uint64_t seed, Mode mode);

}  // namespace difformer
