#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difformer/diffusivity.hpp"
#include "difformer/graph.hpp"
#include "difformer/matrix.hpp"
#include "json.hpp"

namespace difformer {

/// Pairwise sums run over all ordered pairs (i, j), self-pairs included.
struct EnergyConfig {
    double lambda = 1.0;
    KernelKind kernel = KernelKind::simple_linear;
    /// Graph-augmented form: |Z - Zk|^2 + lambda/2 sum delta + lambda/2 sum_{(i,j) in E} |z_i - z_j|^2,
    /// the edge sum taken over both orientations of every undirected edge.
    bool graph_term = false;

    void validate() const;
};

/// Regularized energy E(Z, k; delta) with Zk the previous state.
/// ParameterError when graph_term is set without a graph; DomainError when a
/// squared distance leaves the penalty's valid interval.
double energy(const Matrix& z, const Matrix& zk, const EnergyConfig& cfg,
              const SparseGraph* g = nullptr);

/// Omega*_ij = f(|z_i - z_j|^2) on the raw rows.
Matrix optimal_weights(const Matrix& z, KernelKind kind);

/// Concave conjugate delta~(w) = min_u [w u - delta(u)].
/// simple: -(w - 2)^2 on [0, 2]. advanced: golden-section search over
/// u in [0, 64] on [f(64), f(0)]. DomainError outside those ranges.
double concave_conjugate(KernelKind kind, double w);
/// Range of weights accepted by concave_conjugate.
std::pair<double, double> conjugate_domain(KernelKind kind);

/// E~ = |Z - Zk|^2 + lambda sum_ij [w_ij |z_i - z_j|^2 - delta~(w_ij)] (plus the
/// halved weights and edge term under graph_term). Equals energy() at Omega*.
double variational_bound(const Matrix& z, const Matrix& zk, const Matrix& omega,
                         const EnergyConfig& cfg, const SparseGraph* g = nullptr);

/// Preconditioned gradient step on the bound at Z = Zk with Omega = Omega*(Zk):
/// Z = Zk - tau (4 lambda D)^-1 grad, D the row sums of Omega.
Matrix unfolding_step(const Matrix& zk, double tau, KernelKind kind);

enum class ChainKind {
    plain,       // Z <- euler_step(Z, row_normalize(Omega*(Z)), tau)
    layer_norm,  // plain step followed by a row LayerNorm with gain 1/sqrt(d)
    graph,       // averaged latent/graph update on a random graph, graph energy
};
std::string chain_name(ChainKind c);

struct DescentOptions {
    KernelKind kernel = KernelKind::simple_linear;
    ChainKind chain = ChainKind::plain;
    std::size_t n = 32;
    std::size_t d = 8;
    std::size_t depth = 8;
    std::vector<std::uint64_t> seeds;
    std::vector<double> taus{0.1};
    double lambda = 1.0;
    double tolerance = 1e-10;
    double edge_probability = 0.2;  // graph chain only
};

struct ChainRecord {
    std::uint64_t seed = 0;
    double tau = 0.0;
    std::vector<double> after;   // E(Z^(k+1), k) for k = 1..K-1
    std::vector<double> before;  // E(Z^(k), k-1)
    std::vector<bool> descends;
    bool all_descend = true;
};

struct EnergyReport {
    KernelKind kernel = KernelKind::simple_linear;
    ChainKind chain = ChainKind::plain;
    double lambda = 1.0;
    double tolerance = 1e-10;
    std::size_t n = 0, d = 0, depth = 0;
    std::vector<double> taus;
    std::vector<ChainRecord> records;
    /// Fraction of seeds descending at every layer, per entry of `taus`.
    std::vector<double> descent_rate;
    /// Largest grid tau at which every seed descends at every layer.
    std::optional<double> largest_descending_tau;

    bool descends_at(double tau) const;
    nlohmann::json to_json() const;
};

/// Runs the chain for every (seed, tau) and records per-layer verdicts.
EnergyReport verify_descent(const DescentOptions& opts);

/// Initial states for the audit: N x d Gaussian rows scaled to unit norm.
Matrix audit_initial_state(std::size_t n, std::size_t d, std::uint64_t seed);

}  // namespace difformer
