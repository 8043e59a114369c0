#include "difformer/energy.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "difformer/error.hpp"
#include "difformer/propagation.hpp"
#include "difformer/seed.hpp"

namespace difformer {

namespace {

// Rounding slack on the upper end of the simple kernel's [0, 4] interval.
constexpr double kDomainSlack = 1e-9;

double checked_u(const PenaltyPair& pp, double u) {
    if (u > pp.u_max) {
        if (u <= pp.u_max + kDomainSlack) return pp.u_max;
        throw DomainError("squared distance " + std::to_string(u) + " outside the valid interval of the " +
                          kernel_name(pp.kind) + " penalty");
    }
    return u;
}

Matrix squared_distances(const Matrix& z) {
    const std::size_t n = z.rows();
    Matrix d2(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < z.cols(); ++t) {
                const double diff = z(i, t) - z(j, t);
                s += diff * diff;
            }
            d2(i, j) = d2(j, i) = s;
        }
    }
    return d2;
}

double edge_sum(const Matrix& d2, const SparseGraph& g) {
    double s = 0.0;
    for (const auto& [a, b] : g.edges()) s += 2.0 * d2(a, b);
    return s;
}

void check_graph(const EnergyConfig& cfg, const SparseGraph* g, std::size_t n) {
    if (!cfg.graph_term) return;
    if (!g) throw ParameterError("energy: graph term requested without a graph");
    if (g->n() != n) throw DimensionError("energy: graph size does not match the number of rows");
}

}  // namespace

void EnergyConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("energy: lambda must be >= 0");
    penalty(kernel);
}

double energy(const Matrix& z, const Matrix& zk, const EnergyConfig& cfg, const SparseGraph* g) {
    cfg.validate();
    if (!z.same_shape(zk)) {
        throw DimensionError("energy: Z " + z.shape_string() + " vs Zk " + zk.shape_string());
    }
    check_graph(cfg, g, z.rows());
    const PenaltyPair pp = penalty(cfg.kernel);
    const Matrix d2 = squared_distances(z);
    double pair = 0.0;
    for (std::size_t i = 0; i < d2.size(); ++i) pair += pp.delta(checked_u(pp, d2.data()[i]));
    const double local = frobenius_sq(sub(z, zk));
    if (!cfg.graph_term) return local + cfg.lambda * pair;
    return local + 0.5 * cfg.lambda * pair + 0.5 * cfg.lambda * edge_sum(d2, *g);
}

Matrix optimal_weights(const Matrix& z, KernelKind kind) {
    const PenaltyPair pp = penalty(kind);
    Matrix w = squared_distances(z);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = pp.f(checked_u(pp, w.data()[i]));
    return w;
}

std::pair<double, double> conjugate_domain(KernelKind kind) {
    const PenaltyPair pp = penalty(kind);
    if (kind == KernelKind::simple_linear) return {pp.f(4.0), pp.f(0.0)};
    return {pp.f(64.0), pp.f(0.0)};
}

double concave_conjugate(KernelKind kind, double w) {
    const auto [lo, hi] = conjugate_domain(kind);
    if (!(w >= lo && w <= hi)) {
        throw DomainError("concave conjugate of the " + kernel_name(kind) + " penalty: weight " +
                          std::to_string(w) + " outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
    }
    if (kind == KernelKind::simple_linear) return -(w - 2.0) * (w - 2.0);

    // w u - delta(u) is convex in u; golden-section search for its minimum.
    const PenaltyPair pp = penalty(kind);
    auto obj = [&](double u) { return w * u - pp.delta(u); };
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = 0.0, b = 64.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = obj(c), fd = obj(d);
    while (b - a > 1e-10) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = obj(d);
        }
    }
    return std::min({obj(a), obj(b), obj(0.5 * (a + b))});
}

double variational_bound(const Matrix& z, const Matrix& zk, const Matrix& omega,
                         const EnergyConfig& cfg, const SparseGraph* g) {
    cfg.validate();
    if (!z.same_shape(zk)) {
        throw DimensionError("variational_bound: Z " + z.shape_string() + " vs Zk " + zk.shape_string());
    }
    if (omega.rows() != z.rows() || omega.cols() != z.rows()) {
        throw DimensionError("variational_bound: Omega " + omega.shape_string() + " for " +
                             std::to_string(z.rows()) + " rows");
    }
    check_graph(cfg, g, z.rows());
    const Matrix d2 = squared_distances(z);
    double pair = 0.0;
    for (std::size_t i = 0; i < d2.size(); ++i) {
        const double w = omega.data()[i];
        pair += w * d2.data()[i] - concave_conjugate(cfg.kernel, w);
    }
    const double local = frobenius_sq(sub(z, zk));
    if (!cfg.graph_term) return local + cfg.lambda * pair;
    return local + 0.5 * cfg.lambda * pair + 0.5 * cfg.lambda * edge_sum(d2, *g);
}

Matrix unfolding_step(const Matrix& zk, double tau, KernelKind kind) {
    const Matrix omega = optimal_weights(zk, kind);
    const auto deg = row_sums(omega);
    for (std::size_t i = 0; i < deg.size(); ++i) {
        if (!(deg[i] > 0.0)) {
            throw NormalizationError(i, "unfolding_step: zero weight sum at row " + std::to_string(i));
        }
    }
    // Gradient of the bound at Z = Zk: 2 (Z - Zk) + 4 lambda (D - Omega) Z, the
    // first term vanishing; lambda cancels against the preconditioner.
    const double lambda = 1.0;
    const Matrix oz = matmul(omega, zk);
    Matrix out(zk.rows(), zk.cols());
    for (std::size_t i = 0; i < zk.rows(); ++i) {
        const double pre = 1.0 / (4.0 * lambda * deg[i]);
        for (std::size_t t = 0; t < zk.cols(); ++t) {
            const double grad = 4.0 * lambda * (deg[i] * zk(i, t) - oz(i, t));
            out(i, t) = zk(i, t) - tau * pre * grad;
        }
    }
    return out;
}

std::string chain_name(ChainKind c) {
    switch (c) {
        case ChainKind::plain: return "plain";
        case ChainKind::layer_norm: return "layer_norm";
        case ChainKind::graph: return "graph";
    }
    return "unknown";
}

Matrix audit_initial_state(std::size_t n, std::size_t d, std::uint64_t seed) {
    return rowwise_l2_normalize(Matrix::random_normal(n, d, seed));
}

bool EnergyReport::descends_at(double tau) const {
    bool any = false;
    for (const auto& r : records) {
        if (r.tau != tau) continue;
        any = true;
        if (!r.all_descend) return false;
    }
    return any;
}

nlohmann::json EnergyReport::to_json() const {
    nlohmann::json j;
    j["kernel"] = kernel_name(kernel);
    j["chain"] = chain_name(chain);
    j["lambda"] = lambda;
    j["tolerance"] = tolerance;
    j["n"] = n;
    j["d"] = d;
    j["depth"] = depth;
    j["taus"] = taus;
    j["descent_rate"] = descent_rate;
    j["largest_descending_tau"] =
        largest_descending_tau ? nlohmann::json(*largest_descending_tau) : nlohmann::json(nullptr);
    auto& recs = j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        recs.push_back({{"seed", r.seed},
                        {"tau", r.tau},
                        {"energy_after", r.after},
                        {"energy_before", r.before},
                        {"descends", r.descends},
                        {"all_descend", r.all_descend}});
    }
    return j;
}

EnergyReport verify_descent(const DescentOptions& opts) {
    if (opts.depth < 2) throw ParameterError("verify_descent: depth must be at least 2");
    if (opts.seeds.empty() || opts.taus.empty()) throw ParameterError("verify_descent: need seeds and taus");
    for (double tau : opts.taus) {
        if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("verify_descent: tau must lie in (0, 1)");
    }
    penalty(opts.kernel);

    EnergyReport rep;
    rep.kernel = opts.kernel;
    rep.chain = opts.chain;
    rep.lambda = opts.lambda;
    rep.tolerance = opts.tolerance;
    rep.n = opts.n;
    rep.d = opts.d;
    rep.depth = opts.depth;
    rep.taus = opts.taus;

    EnergyConfig ecfg;
    ecfg.lambda = opts.lambda;
    ecfg.kernel = opts.kernel;
    ecfg.graph_term = opts.chain == ChainKind::graph;

    for (double tau : opts.taus) {
        std::size_t ok = 0;
        for (std::uint64_t seed : opts.seeds) {
            std::optional<SparseGraph> g;
            std::shared_ptr<const CsrMatrix> a;
            if (opts.chain == ChainKind::graph) {
                std::mt19937_64 rng(derive_seed(seed, {7}));
                std::uniform_real_distribution<double> u(0.0, 1.0);
                std::vector<SparseGraph::Edge> edges;
                for (std::size_t i = 0; i < opts.n; ++i) {
                    for (std::size_t j = i + 1; j < opts.n; ++j) {
                        if (u(rng) < opts.edge_probability) edges.emplace_back(i, j);
                    }
                }
                g = SparseGraph(opts.n, edges);
                a = std::make_shared<const CsrMatrix>(normalized_adjacency(*g));
            }
            const double ln_gain = 1.0 / std::sqrt(static_cast<double>(opts.d));
            const std::vector<double> gain(opts.d, ln_gain), bias(opts.d, 0.0);

            std::vector<Matrix> states{audit_initial_state(opts.n, opts.d, seed)};
            for (std::size_t k = 0; k < opts.depth; ++k) {
                const Matrix& z = states.back();
                const Matrix s = row_normalize(optimal_weights(z, opts.kernel));
                Matrix next;
                if (opts.chain == ChainKind::graph) {
                    next = mix_graph_prior(matmul(s, z), *a, z, z, tau);
                } else {
                    next = euler_step(z, s, tau);
                    if (opts.chain == ChainKind::layer_norm) next = layer_norm_rows(next, gain, bias);
                }
                states.push_back(std::move(next));
            }

            ChainRecord rec;
            rec.seed = seed;
            rec.tau = tau;
            const SparseGraph* gp = g ? &*g : nullptr;
            for (std::size_t k = 1; k < opts.depth; ++k) {
                const double after = energy(states[k + 1], states[k], ecfg, gp);
                const double before = energy(states[k], states[k - 1], ecfg, gp);
                const bool down = after <= before + opts.tolerance;
                rec.after.push_back(after);
                rec.before.push_back(before);
                rec.descends.push_back(down);
                rec.all_descend = rec.all_descend && down;
            }
            ok += rec.all_descend ? 1 : 0;
            rep.records.push_back(std::move(rec));
        }
        const double rate = static_cast<double>(ok) / static_cast<double>(opts.seeds.size());
        rep.descent_rate.push_back(rate);
        if (rate == 1.0 && (!rep.largest_descending_tau || tau > *rep.largest_descending_tau)) {
            rep.largest_descending_tau = tau;
        }
    }
    return rep;
}

}  // namespace difformer
