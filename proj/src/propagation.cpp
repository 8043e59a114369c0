#include "difformer/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "difformer/error.hpp"
#include "difformer/kernels.hpp"

namespace difformer {

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shapes " + a.shape_string() + " and " +
                             b.shape_string() + " differ");
    }
}

}  // namespace

Matrix euler_step(const Matrix& z, const Matrix& s, double tau) {
    if (s.rows() != z.rows() || s.cols() != z.rows()) {
        throw DimensionError("euler_step: S " + s.shape_string() + " vs Z " + z.shape_string());
    }
    Matrix out = matmul(s, z);
    const auto rs = row_sums(s);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double keep = 1.0 - tau * rs[i];
        auto o = out.row(i);
        const auto zi = z.row(i);
        for (std::size_t t = 0; t < z.cols(); ++t) o[t] = keep * zi[t] + tau * o[t];
    }
    return out;
}

Matrix propagate_simple_linear(const Matrix& qh, const Matrix& kh, const Matrix& v,
                               SimpleVariant variant) {
    require_same(qh, kh, "propagate_simple_linear(Q, K)");
    if (v.rows() != qh.rows()) {
        throw DimensionError("propagate_simple_linear: V " + v.shape_string() + " vs Q " +
                             qh.shape_string());
    }
    const std::size_t n = qh.rows();
    const std::size_t m = qh.cols();
    const std::size_t d = v.cols();
    const auto n_real = static_cast<double>(n);

    const Matrix kv = matmul_tn(kh, v);  // m x d summary
    const auto ksum = col_sums(kh);
    const auto vsum = col_sums(v);

    Matrix out(n, d);
    kernels::gemm(n, d, m, qh.data(), m, kv.data(), d, out.data(), d);
    for (std::size_t i = 0; i < n; ++i) {
        const double den = n_real + kernels::dot(qh.row(i).data(), ksum.data(), m);
        if (!(den > 0.0)) {
            throw NormalizationError(i, "propagate_simple_linear: denominator " + std::to_string(den) +
                                            " at row " + std::to_string(i));
        }
        const double inv = 1.0 / den;
        auto o = out.row(i);
        const auto vi = v.row(i);
        for (std::size_t t = 0; t < d; ++t) {
            const double base = variant == SimpleVariant::eq9 ? vsum[t] : n_real * vi[t];
            o[t] = (o[t] + base) * inv;
        }
    }
    return out;
}

Matrix propagate_advanced(const Matrix& q, const Matrix& k, const Matrix& v) {
    require_same(q, k, "propagate_advanced(Q, K)");
    if (v.rows() != k.rows()) {
        throw DimensionError("propagate_advanced: V " + v.shape_string() + " vs K " + k.shape_string());
    }
    const std::size_t n = q.rows();
    const std::size_t m = q.cols();
    const std::size_t d = v.cols();
    const Matrix kt = transpose(k);  // m x n, so a tile of logits is one gemm

    Matrix out(n, d);
    std::vector<double> rsum(n, 0.0);
    std::vector<double> tile(kAdvancedRowBlock * kAdvancedColBlock);
    for (std::size_t i0 = 0; i0 < n; i0 += kAdvancedRowBlock) {
        const std::size_t bi = std::min(kAdvancedRowBlock, n - i0);
        for (std::size_t j0 = 0; j0 < n; j0 += kAdvancedColBlock) {
            const std::size_t bj = std::min(kAdvancedColBlock, n - j0);
            std::fill(tile.begin(), tile.begin() + static_cast<std::ptrdiff_t>(bi * bj), 0.0);
            kernels::gemm(bi, bj, m, q.data() + i0 * m, m, kt.data() + j0, n, tile.data(), bj);
            kernels::sigmoid(tile.data(), tile.data(), bi * bj);
            for (std::size_t r = 0; r < bi; ++r) {
                const double* row = tile.data() + r * bj;
                double s = 0.0;
                for (std::size_t c = 0; c < bj; ++c) s += row[c];
                rsum[i0 + r] += s;
            }
            kernels::gemm(bi, d, bj, tile.data(), bj, v.data() + j0 * d, d, out.data() + i0 * d, d);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double inv = 1.0 / rsum[i];
        for (double& x : out.row(i)) x *= inv;
    }
    return out;
}

Matrix mix_graph_prior(const Matrix& s_v, const CsrMatrix& a, const Matrix& z, const Matrix& v,
                       double tau, std::optional<std::span<const double>> s_row_sums) {
    require_same(s_v, v, "mix_graph_prior(SV, V)");
    require_same(z, v, "mix_graph_prior(Z, V)");
    if (a.rows != z.rows() || a.cols != z.rows()) {
        throw DimensionError("mix_graph_prior: adjacency " + std::to_string(a.rows) + "x" +
                             std::to_string(a.cols) + " vs Z " + z.shape_string());
    }
    if (s_row_sums && s_row_sums->size() != z.rows()) {
        throw DimensionError("mix_graph_prior: row-sum vector length does not match N");
    }
    const Matrix av = spmm(a, v);
    const auto ars = a.row_sums();
    const double half = 0.5 * tau;
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double srs = s_row_sums ? (*s_row_sums)[i] : 1.0;
        const double keep = 1.0 - half * (srs + ars[i]);
        for (std::size_t t = 0; t < z.cols(); ++t) {
            out(i, t) = keep * z(i, t) + half * (s_v(i, t) + av(i, t));
        }
    }
    return out;
}

}  // namespace difformer
