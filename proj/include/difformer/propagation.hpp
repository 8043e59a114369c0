#pragma once

#include <optional>
#include <span>
#include <vector>

#include "difformer/matrix.hpp"

namespace difformer {

/// Numerator of the linear-attention rearrangement. eq9 adds sum_j V_j (the
/// constant part of omega = 1 + q.k); alg2 adds N * V_i instead.
enum class SimpleVariant { eq9, alg2 };

/// z_i' = (1 - tau * sum_j S_ij) z_i + tau * sum_j S_ij z_j
Matrix euler_step(const Matrix& z, const Matrix& s, double tau);

/// Linear-cost all-pair propagation for omega_ij = 1 + qh_i . kh_j with
/// row-normalized qh, kh. Only the d x d summary kh^T V and the column sums
/// of kh and V are formed. NormalizationError if a denominator is <= 0.
Matrix propagate_simple_linear(const Matrix& qh, const Matrix& kh, const Matrix& v,
                               SimpleVariant variant = SimpleVariant::eq9);

/// row_normalize(sigmoid(Q K^T)) V, streamed over row/column tiles so that no
/// N x N buffer is allocated.
Matrix propagate_advanced(const Matrix& q, const Matrix& k, const Matrix& v);

/// Tile sizes used by propagate_advanced (rows of Q, rows of K per tile).
inline constexpr std::size_t kAdvancedRowBlock = 64;
inline constexpr std::size_t kAdvancedColBlock = 256;

/// Averaged latent/graph update:
///   z_i' = (1 - tau/2 * sum_j (S_ij + A_ij)) z_i + tau/2 * ((S V)_i + (A V)_i)
/// `s_v` is the latent propagation S V; `s_row_sums` the row sums of S
/// (all ones when S is row-stochastic, the default).
Matrix mix_graph_prior(const Matrix& s_v, const CsrMatrix& a, const Matrix& z, const Matrix& v,
                       double tau, std::optional<std::span<const double>> s_row_sums = std::nullopt);

}  // namespace difformer
