#include "difformer/diffusivity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "difformer/error.hpp"

namespace difformer {

KernelKind parse_kernel(const std::string& name) {
    if (name == "simple" || name == "simple_linear") return KernelKind::simple_linear;
    if (name == "advanced" || name == "advanced_sigmoid") return KernelKind::advanced_sigmoid;
    if (name == "identity") return KernelKind::identity;
    if (name == "constant") return KernelKind::constant;
    if (name == "full_attention" || name == "full") return KernelKind::full_attention;
    if (name == "gaussian" || name == "kernel") return KernelKind::gaussian;
    if (name == "gcn") return KernelKind::gcn_adjacency;
    if (name == "gat") return KernelKind::gat_masked;
    throw ParameterError("unknown kernel '" + name + "'");
}

std::string kernel_name(KernelKind kind) {
    switch (kind) {
        case KernelKind::simple_linear: return "simple";
        case KernelKind::advanced_sigmoid: return "advanced";
        case KernelKind::identity: return "identity";
        case KernelKind::constant: return "constant";
        case KernelKind::full_attention: return "full_attention";
        case KernelKind::gaussian: return "gaussian";
        case KernelKind::gcn_adjacency: return "gcn";
        case KernelKind::gat_masked: return "gat";
    }
    return "unknown";
}

namespace {

double simple_delta(double u) { return 2.0 * u - 0.25 * u * u; }
double simple_f(double u) { return 2.0 - 0.5 * u; }

// log(e^x + 1) without overflow
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double advanced_delta(double u) { return u - 2.0 * softplus(0.5 * u - 1.0); }
double advanced_f(double u) { return 1.0 / (1.0 + std::exp(0.5 * u - 1.0)); }

}  // namespace

PenaltyPair penalty(KernelKind kind) {
    switch (kind) {
        case KernelKind::simple_linear:
            return {kind, simple_delta, simple_f, 0.0, 4.0};
        case KernelKind::advanced_sigmoid:
            return {kind, advanced_delta, advanced_f, 0.0, std::numeric_limits<double>::infinity()};
        default:
            throw UnsupportedError("kernel '" + kernel_name(kind) + "' has no associated penalty");
    }
}

double median_pairwise_distance(const Matrix& z) {
    const std::size_t n = z.rows();
    if (n < 2) return 1.0;
    std::vector<double> d;
    d.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < z.cols(); ++t) {
                const double diff = z(i, t) - z(j, t);
                s += diff * diff;
            }
            d.push_back(std::sqrt(s));
        }
    }
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (d.size() % 2 == 0) {
        med = 0.5 * (med + *std::max_element(d.begin(), mid));
    }
    return med > 0.0 ? med : 1.0;
}

Matrix omega_pairwise(KernelKind kind, const Matrix& z, double bandwidth) {
    const std::size_t n = z.rows();
    switch (kind) {
        case KernelKind::simple_linear: {
            const Matrix zh = rowwise_l2_normalize(z);
            Matrix om = matmul_nt(zh, zh);
            for (double* p = om.data(); p != om.data() + om.size(); ++p) *p += 1.0;
            return om;
        }
        case KernelKind::advanced_sigmoid:
            return sigmoid(matmul_nt(z, z));
        case KernelKind::identity:
            return Matrix::identity(n);
        case KernelKind::constant:
            return Matrix(n, n, 1.0);
        case KernelKind::full_attention: {
            Matrix om = matmul_nt(z, z);
            const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(z.cols(), 1)));
            for (double* p = om.data(); p != om.data() + om.size(); ++p) *p = std::exp(*p * s);
            return om;
        }
        case KernelKind::gaussian: {
            if (bandwidth < 0.0 || !std::isfinite(bandwidth)) {
                throw ParameterError("gaussian bandwidth must be positive");
            }
            const double bw = bandwidth == 0.0 ? median_pairwise_distance(z) : bandwidth;
            const double inv = 1.0 / (2.0 * bw * bw);
            Matrix om(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t t = 0; t < z.cols(); ++t) {
                        const double diff = z(i, t) - z(j, t);
                        s += diff * diff;
                    }
                    om(i, j) = std::exp(-s * inv);
                }
            }
            return om;
        }
        case KernelKind::gcn_adjacency:
        case KernelKind::gat_masked:
            break;
    }
    throw UnsupportedError("omega_pairwise: kernel '" + kernel_name(kind) +
                           "' needs a graph; use table1_diffusivity");
}

Matrix row_normalize(const Matrix& omega) {
    Matrix s = omega;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto r = s.row(i);
        double total = 0.0;
        for (double v : r) total += v;
        if (!(total > 0.0) || !std::isfinite(total)) {
            throw NormalizationError(i, "row_normalize: row " + std::to_string(i) + " sums to " +
                                            std::to_string(total));
        }
        const double inv = 1.0 / total;
        for (double& v : r) v *= inv;
    }
    return s;
}

Matrix table1_diffusivity(Table1Model model, const SparseGraph* g, const Matrix* z,
                          KernelKind f_kind) {
    switch (model) {
        case Table1Model::mlp: {
            if (!g && !z) throw ParameterError("table1_diffusivity(mlp): need a graph or states for N");
            return Matrix::identity(g ? g->n() : z->rows());
        }
        case Table1Model::gcn: {
            if (!g) throw ParameterError("table1_diffusivity(gcn): graph required");
            return normalized_adjacency(*g).to_dense();
        }
        case Table1Model::gat: {
            if (!g || !z) throw ParameterError("table1_diffusivity(gat): graph and states required");
            if (z->rows() != g->n()) {
                throw DimensionError("table1_diffusivity(gat): states " + z->shape_string() +
                                     " vs graph of " + std::to_string(g->n()) + " nodes");
            }
            const PenaltyPair pp = penalty(f_kind);
            const auto adj = g->adjacency_lists();
            Matrix s(g->n(), g->n());
            for (std::size_t i = 0; i < g->n(); ++i) {
                if (adj[i].empty()) continue;
                double total = 0.0;
                for (std::size_t j : adj[i]) {
                    double u = 0.0;
                    for (std::size_t t = 0; t < z->cols(); ++t) {
                        const double diff = (*z)(i, t) - (*z)(j, t);
                        u += diff * diff;
                    }
                    if (!pp.in_domain(u)) {
                        throw DomainError("table1_diffusivity(gat): squared distance " +
                                          std::to_string(u) + " outside the penalty domain");
                    }
                    s(i, j) = pp.f(u);
                    total += s(i, j);
                }
                if (!(total > 0.0)) {
                    throw NormalizationError(i, "table1_diffusivity(gat): zero neighbor weight at row " +
                                                    std::to_string(i));
                }
                for (std::size_t j : adj[i]) s(i, j) /= total;
            }
            return s;
        }
    }
    throw ParameterError("table1_diffusivity: unknown model");
}

}  // namespace difformer
