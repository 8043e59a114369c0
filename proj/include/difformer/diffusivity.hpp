#pragma once

#include <string>

#include "difformer/graph.hpp"
#include "difformer/matrix.hpp"

namespace difformer {

enum class KernelKind {
    simple_linear,     // omega = 1 + <z_i/|z_i|, z_j/|z_j|>
    advanced_sigmoid,  // omega = sigmoid(<z_i, z_j>)
    identity,
    constant,
    full_attention,    // exp(<q, k> / sqrt(d))
    gaussian,          // exp(-|z_i - z_j|^2 / (2 bw^2))
    gcn_adjacency,
    gat_masked,
};

KernelKind parse_kernel(const std::string& name);
std::string kernel_name(KernelKind kind);

/// Matched penalty delta(u) and its derivative f(u), u a squared distance.
struct PenaltyPair {
    KernelKind kind;
    double (*delta)(double u);
    double (*f)(double u);
    double u_min;
    double u_max;  // +inf for the advanced kernel

    bool in_domain(double u) const noexcept { return u >= u_min && u <= u_max; }
};

/// UnsupportedError unless kind is simple_linear or advanced_sigmoid.
PenaltyPair penalty(KernelKind kind);

/// Dense N x N affinity matrix. `bandwidth` applies to the gaussian kernel;
/// 0 selects the median pairwise distance. gcn_adjacency and gat_masked need
/// a graph and go through table1_diffusivity instead (UnsupportedError here).
Matrix omega_pairwise(KernelKind kind, const Matrix& z, double bandwidth = 0.0);

/// Median of the pairwise Euclidean distances over unordered pairs; 1 when
/// fewer than two rows or when the median is zero.
double median_pairwise_distance(const Matrix& z);

/// S_ij = Omega_ij / sum_l Omega_il; NormalizationError on a non-positive row sum.
Matrix row_normalize(const Matrix& omega);

enum class Table1Model { mlp, gcn, gat };

/// Diffusivity of the MLP / GCN / GAT special cases. MLP takes N from
/// whichever of g, z is given; GCN needs g; GAT needs both and normalizes
/// f(|z_i - z_j|^2) over observed neighbors only (isolated nodes get zero rows).
Matrix table1_diffusivity(Table1Model model, const SparseGraph* g, const Matrix* z,
                          KernelKind f_kind = KernelKind::advanced_sigmoid);

}  // namespace difformer
