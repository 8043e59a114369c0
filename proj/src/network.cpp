#include "difformer/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "difformer/error.hpp"
#include "difformer/seed.hpp"

namespace difformer {

void NetworkConfig::validate() const {
    if (input_dim == 0) throw ConfigError("network: input_dim must be positive");
    if (hidden < 2) throw ConfigError("network: hidden must be at least 2 (layer norm)");
    if (num_classes == 0) throw ConfigError("network: num_classes must be positive");
    if (heads == 0) throw ConfigError("network: heads must be at least 1");
    if (!(tau > 0.0 && tau < 1.0)) {
        throw ConfigError("network: tau must lie in (0, 1), got " + std::to_string(tau));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("network: dropout must lie in [0, 1)");
    if (bandwidth < 0.0) throw ConfigError("network: bandwidth must be non-negative");
    if (kernel == KernelKind::gat_masked) {
        throw ConfigError("network: the gat diffusivity is available through table1_diffusivity only");
    }
}

bool NetworkConfig::uses_qk() const noexcept {
    return kernel == KernelKind::simple_linear || kernel == KernelKind::advanced_sigmoid ||
           kernel == KernelKind::full_attention || kernel == KernelKind::gaussian;
}

std::string layer_param(std::size_t layer, std::size_t head, const char* what) {
    return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + "." + what;
}

std::string layer_norm_param(std::size_t layer, const char* what) {
    return "layer" + std::to_string(layer) + ".ln." + what;
}

namespace {

struct ParamShape {
    std::string name;
    std::size_t rows;
    std::size_t cols;
    enum { weight, ones, zeros } init;
    std::size_t fan_in;
};

std::vector<ParamShape> parameter_layout(const NetworkConfig& cfg) {
    const std::size_t D = cfg.input_dim, d = cfg.hidden, C = cfg.num_classes;
    std::vector<ParamShape> out{
        {"input.W", D, d, ParamShape::weight, D},
        {"input.b", 1, d, ParamShape::weight, D},
        {"input.ln.gain", 1, d, ParamShape::ones, 0},
        {"input.ln.bias", 1, d, ParamShape::zeros, 0},
    };
    for (std::size_t k = 0; k < cfg.depth; ++k) {
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            if (cfg.uses_qk()) {
                out.push_back({layer_param(k, h, "Wq"), d, d, ParamShape::weight, d});
                out.push_back({layer_param(k, h, "Wk"), d, d, ParamShape::weight, d});
            }
            if (cfg.use_weight) out.push_back({layer_param(k, h, "Wv"), d, d, ParamShape::weight, d});
        }
        out.push_back({layer_norm_param(k, "gain"), 1, d, ParamShape::ones, 0});
        out.push_back({layer_norm_param(k, "bias"), 1, d, ParamShape::zeros, 0});
    }
    out.push_back({"output.W", d, C, ParamShape::weight, d});
    out.push_back({"output.b", 1, C, ParamShape::weight, d});
    return out;
}

}  // namespace

ParamStore init_parameters(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore store;
    std::mt19937_64 rng(seed);
    for (const auto& p : parameter_layout(cfg)) {
        Matrix m(p.rows, p.cols);
        if (p.init == ParamShape::ones) {
            m.fill(1.0);
        } else if (p.init == ParamShape::weight) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
        }
        store.add(p.name, std::move(m));
    }
    return store;
}

void check_parameters(const ParamStore& params, const NetworkConfig& cfg) {
    cfg.validate();
    for (const auto& p : parameter_layout(cfg)) {
        if (!params.contains(p.name)) throw ConfigError("network: missing parameter '" + p.name + "'");
        const Matrix& v = params.value(p.name);
        if (v.rows() != p.rows || v.cols() != p.cols) {
            throw ConfigError("network: parameter '" + p.name + "' has shape " + v.shape_string() +
                              ", expected " + std::to_string(p.rows) + "x" + std::to_string(p.cols));
        }
    }
}

namespace ad {

namespace {

void same_rows(const Tape& t, Var q, Var k, Var v, const char* what) {
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    const Matrix& vv = t.value(v);
    if (!qv.same_shape(kv) || vv.rows() != kv.rows()) {
        throw DimensionError(std::string(what) + ": Q " + qv.shape_string() + ", K " +
                             kv.shape_string() + ", V " + vv.shape_string());
    }
}

// Shared tail of the row-normalized kernels: given the affinities W (n x n),
// their row sums r and upstream G, returns dW and accumulates dV.
Matrix normalized_affinity_backward(Tape& tp, Var v, const Matrix& w, const std::vector<double>& r,
                                    const Matrix& g) {
    Matrix s = w;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        for (double& x : s.row(i)) x /= r[i];
    }
    if (tp.needs_grad(v)) tp.accumulate(v, matmul_tn(s, g));
    Matrix dw = matmul_nt(g, tp.value(v));  // dS
    for (std::size_t i = 0; i < dw.rows(); ++i) {
        auto row = dw.row(i);
        const auto srow = s.row(i);
        double c = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) c += row[j] * srow[j];
        for (double& x : row) x = (x - c) / r[i];
    }
    return dw;
}

Matrix squared_distances(const Matrix& q, const Matrix& k) {
    Matrix d2(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < k.rows(); ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < q.cols(); ++t) {
                const double diff = q(i, t) - k(j, t);
                s += diff * diff;
            }
            d2(i, j) = s;
        }
    }
    return d2;
}

}  // namespace

Var linear_attention(Var qh, Var kh, Var v, SimpleVariant variant) {
    Tape& t = tape_of(qh);
    t.check(kh);
    t.check(v);
    same_rows(t, qh, kh, v, "linear_attention");
    Matrix p = propagate_simple_linear(t.value(qh), t.value(kh), t.value(v), variant);
    return t.record(p, {qh, kh, v}, [qh, kh, v, variant, p](Tape& tp, const Matrix& g) {
        const Matrix& q = tp.value(qh);
        const Matrix& k = tp.value(kh);
        const Matrix& vv = tp.value(v);
        const std::size_t n = q.rows();
        const auto n_real = static_cast<double>(n);
        const Matrix m = matmul_tn(k, vv);
        const auto ksum = col_sums(k);

        Matrix dnum(n, g.cols());
        std::vector<double> dden(n);
        for (std::size_t i = 0; i < n; ++i) {
            double den = n_real;
            for (std::size_t t2 = 0; t2 < q.cols(); ++t2) den += q(i, t2) * ksum[t2];
            double gp = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) {
                dnum(i, c) = g(i, c) / den;
                gp += g(i, c) * p(i, c);
            }
            dden[i] = -gp / den;
        }

        if (tp.needs_grad(qh)) {
            Matrix dq = matmul_nt(dnum, m);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t t2 = 0; t2 < q.cols(); ++t2) dq(i, t2) += dden[i] * ksum[t2];
            }
            tp.accumulate(qh, dq);
        }
        const Matrix dm = matmul_tn(q, dnum);
        if (tp.needs_grad(kh)) {
            Matrix dk = matmul_nt(vv, dm);
            std::vector<double> dksum(q.cols(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t t2 = 0; t2 < q.cols(); ++t2) dksum[t2] += dden[i] * q(i, t2);
            }
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t t2 = 0; t2 < q.cols(); ++t2) dk(j, t2) += dksum[t2];
            }
            tp.accumulate(kh, dk);
        }
        if (tp.needs_grad(v)) {
            Matrix dv = matmul(k, dm);
            if (variant == SimpleVariant::eq9) {
                const auto s = col_sums(dnum);
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t c = 0; c < dv.cols(); ++c) dv(j, c) += s[c];
                }
            } else {
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t c = 0; c < dv.cols(); ++c) dv(j, c) += n_real * dnum(j, c);
                }
            }
            tp.accumulate(v, dv);
        }
    });
}

Var sigmoid_attention(Var q, Var k, Var v) {
    Tape& t = tape_of(q);
    t.check(k);
    t.check(v);
    same_rows(t, q, k, v, "sigmoid_attention");
    Matrix p = propagate_advanced(t.value(q), t.value(k), t.value(v));
    return t.record(std::move(p), {q, k, v}, [q, k, v](Tape& tp, const Matrix& g) {
        const Matrix a = sigmoid(matmul_nt(tp.value(q), tp.value(k)));
        const auto r = row_sums(a);
        Matrix dl = normalized_affinity_backward(tp, v, a, r, g);
        for (std::size_t i = 0; i < dl.size(); ++i) {
            const double s = a.data()[i];
            dl.data()[i] *= s * (1.0 - s);
        }
        if (tp.needs_grad(q)) tp.accumulate(q, matmul(dl, tp.value(k)));
        if (tp.needs_grad(k)) tp.accumulate(k, matmul_tn(dl, tp.value(q)));
    });
}

Var softmax_attention(Var q, Var k, Var v) {
    Tape& t = tape_of(q);
    t.check(k);
    t.check(v);
    same_rows(t, q, k, v, "softmax_attention");
    const double sc = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(t.value(q).cols(), 1)));
    // Stabilized exp(l - max_row): identical normalized weights.
    auto weights = [sc](const Matrix& qv, const Matrix& kv, std::vector<double>& r) {
        Matrix w = scale(matmul_nt(qv, kv), sc);
        r.assign(w.rows(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            auto row = w.row(i);
            const double mx = *std::max_element(row.begin(), row.end());
            for (double& x : row) {
                x = std::exp(x - mx);
                r[i] += x;
            }
        }
        return w;
    };
    std::vector<double> r;
    Matrix w = weights(t.value(q), t.value(k), r);
    Matrix s = w;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        for (double& x : s.row(i)) x /= r[i];
    }
    return t.record(matmul(s, t.value(v)), {q, k, v}, [q, k, v, sc, weights](Tape& tp, const Matrix& g) {
        std::vector<double> r2;
        const Matrix w2 = weights(tp.value(q), tp.value(k), r2);
        Matrix dl = normalized_affinity_backward(tp, v, w2, r2, g);
        for (std::size_t i = 0; i < dl.size(); ++i) dl.data()[i] *= w2.data()[i] * sc;
        if (tp.needs_grad(q)) tp.accumulate(q, matmul(dl, tp.value(k)));
        if (tp.needs_grad(k)) tp.accumulate(k, matmul_tn(dl, tp.value(q)));
    });
}

Var gaussian_attention(Var q, Var k, Var v, double bandwidth) {
    Tape& t = tape_of(q);
    t.check(k);
    t.check(v);
    same_rows(t, q, k, v, "gaussian_attention");
    const Matrix d2 = squared_distances(t.value(q), t.value(k));
    double bw = bandwidth;
    if (bw == 0.0) {
        std::vector<double> dist;
        dist.reserve(d2.size());
        for (std::size_t i = 0; i < d2.rows(); ++i) {
            for (std::size_t j = 0; j < d2.cols(); ++j) {
                if (i != j) dist.push_back(std::sqrt(d2(i, j)));
            }
        }
        if (!dist.empty()) {
            auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
            std::nth_element(dist.begin(), mid, dist.end());
            bw = *mid;
        }
        if (!(bw > 0.0)) bw = 1.0;
    }
    const double c = 1.0 / (2.0 * bw * bw);
    Matrix w(d2.rows(), d2.cols());
    std::vector<double> r(d2.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            w(i, j) = std::exp(-c * d2(i, j));
            r[i] += w(i, j);
        }
    }
    Matrix s = w;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        if (!(r[i] > 0.0)) {
            throw NormalizationError(i, "gaussian_attention: all affinities underflow at row " +
                                            std::to_string(i));
        }
        for (double& x : s.row(i)) x /= r[i];
    }
    return t.record(matmul(s, t.value(v)), {q, k, v}, [q, k, v, w, r, c](Tape& tp, const Matrix& g) {
        Matrix de = normalized_affinity_backward(tp, v, w, r, g);
        for (std::size_t i = 0; i < de.size(); ++i) de.data()[i] *= w.data()[i];
        const Matrix& qv = tp.value(q);
        const Matrix& kv = tp.value(k);
        if (tp.needs_grad(q)) {
            Matrix dq = matmul(de, kv);  // sum_j dE_ij k_j
            const auto rs = row_sums(de);
            for (std::size_t i = 0; i < dq.rows(); ++i) {
                for (std::size_t t2 = 0; t2 < dq.cols(); ++t2) {
                    dq(i, t2) = -2.0 * c * (rs[i] * qv(i, t2) - dq(i, t2));
                }
            }
            tp.accumulate(q, dq);
        }
        if (tp.needs_grad(k)) {
            Matrix dk = matmul_tn(de, qv);  // sum_i dE_ij q_i
            const auto cs = col_sums(de);
            for (std::size_t j = 0; j < dk.rows(); ++j) {
                for (std::size_t t2 = 0; t2 < dk.cols(); ++t2) {
                    dk(j, t2) = 2.0 * c * (dk(j, t2) - cs[j] * kv(j, t2));
                }
            }
            tp.accumulate(k, dk);
        }
    });
}

Var mean_attention(Var v) {
    Tape& t = tape_of(v);
    const Matrix& vv = t.value(v);
    const std::size_t n = vv.rows();
    auto mean = col_sums(vv);
    for (double& x : mean) x /= static_cast<double>(n);
    Matrix p(n, vv.cols());
    for (std::size_t i = 0; i < n; ++i) std::copy(mean.begin(), mean.end(), p.row(i).begin());
    return t.record(std::move(p), {v}, [v, n](Tape& tp, const Matrix& g) {
        auto s = col_sums(g);
        for (double& x : s) x /= static_cast<double>(n);
        Matrix dv(n, g.cols());
        for (std::size_t i = 0; i < n; ++i) std::copy(s.begin(), s.end(), dv.row(i).begin());
        tp.accumulate(v, dv);
    });
}

}  // namespace ad

namespace {

void check_adjacency(const NetworkConfig& cfg, const AdjacencyPtr& adjacency, std::size_t n) {
    const bool needs = cfg.use_graph || cfg.kernel == KernelKind::gcn_adjacency;
    if (!needs) return;
    if (!adjacency) throw ConfigError("network: configuration uses the input graph but none was given");
    if (adjacency->rows != n || adjacency->cols != n) {
        throw ConfigError("network: adjacency is " + std::to_string(adjacency->rows) + "x" +
                          std::to_string(adjacency->cols) + " for " + std::to_string(n) + " instances");
    }
}

}  // namespace

ad::Var difformer_layer(ad::Var z, ParamStore& params, std::size_t layer, const NetworkConfig& cfg,
                        const AdjacencyPtr& adjacency) {
    ad::Tape& t = ad::tape_of(z);
    check_adjacency(cfg, adjacency, t.value(z).rows());
    std::vector<ad::Var> heads;
    heads.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const ad::Var v = cfg.use_weight ? ad::matmul(z, t.parameter(params, layer_param(layer, h, "Wv")))
                                         : z;
        ad::Var q, k;
        if (cfg.uses_qk()) {
            q = ad::matmul(z, t.parameter(params, layer_param(layer, h, "Wq")));
            k = ad::matmul(z, t.parameter(params, layer_param(layer, h, "Wk")));
        }
        ad::Var p;
        switch (cfg.kernel) {
            case KernelKind::simple_linear:
                // Dropout can zero a whole row; its query/key then contribute omega = 1.
                p = ad::linear_attention(ad::l2_normalize_rows(q, true), ad::l2_normalize_rows(k, true), v,
                                         cfg.variant);
                break;
            case KernelKind::advanced_sigmoid: p = ad::sigmoid_attention(q, k, v); break;
            case KernelKind::full_attention: p = ad::softmax_attention(q, k, v); break;
            case KernelKind::gaussian: p = ad::gaussian_attention(q, k, v, cfg.bandwidth); break;
            case KernelKind::identity: p = v; break;
            case KernelKind::constant: p = ad::mean_attention(v); break;
            case KernelKind::gcn_adjacency: p = ad::spmm(adjacency, v); break;
            case KernelKind::gat_masked:
                throw ConfigError("network: gat diffusivity is not a network kernel");
        }
        if (cfg.use_graph) p = ad::add(p, ad::spmm(adjacency, v));
        heads.push_back(p);
    }
    const ad::Var pbar = ad::mean_of(heads);
    const ad::Var mixed = ad::add(z, ad::scale(ad::sub(pbar, z), cfg.tau));
    ad::Var out = ad::layer_norm_rows(mixed, t.parameter(params, layer_norm_param(layer, "gain")),
                                      t.parameter(params, layer_norm_param(layer, "bias")));
    if (cfg.use_activation) out = ad::relu(out);
    return out;
}

TapedForward forward(ad::Tape& tape, const Matrix& x, ParamStore& params, const NetworkConfig& cfg,
                     const AdjacencyPtr& adjacency, Mode mode, std::uint64_t dropout_seed) {
    check_parameters(params, cfg);
    if (x.cols() != cfg.input_dim) {
        throw ConfigError("network: features have " + std::to_string(x.cols()) +
                          " columns, configuration expects " + std::to_string(cfg.input_dim));
    }
    check_adjacency(cfg, adjacency, x.rows());

    TapedForward out;
    ad::Var h = ad::matmul(tape.constant(x), tape.parameter(params, "input.W"));
    h = ad::add_row(h, tape.parameter(params, "input.b"));
    h = ad::layer_norm_rows(h, tape.parameter(params, "input.ln.gain"),
                            tape.parameter(params, "input.ln.bias"));
    h = ad::relu(h);
    h = ad::dropout(h, cfg.dropout, derive_seed(dropout_seed, {0}), mode);
    out.states.push_back(h);
    for (std::size_t k = 0; k < cfg.depth; ++k) {
        h = difformer_layer(h, params, k, cfg, adjacency);
        out.states.push_back(h);
    }
    h = ad::dropout(h, cfg.dropout, derive_seed(dropout_seed, {1}), mode);
    out.logits = ad::add_row(ad::matmul(h, tape.parameter(params, "output.W")),
                             tape.parameter(params, "output.b"));
    return out;
}

ForwardResult forward(const Matrix& x, ParamStore& params, const NetworkConfig& cfg,
                      const AdjacencyPtr& adjacency) {
    ad::Tape tape;
    const TapedForward f = forward(tape, x, params, cfg, adjacency, Mode::eval);
    ForwardResult r;
    r.logits = tape.value(f.logits);
    for (ad::Var s : f.states) r.states.push_back(tape.value(s));
    return r;
}

Matrix difformer_layer(const Matrix& z, ParamStore& params, std::size_t layer,
                       const NetworkConfig& cfg, const AdjacencyPtr& adjacency) {
    ad::Tape tape;
    return tape.value(difformer_layer(tape.constant(z), params, layer, cfg, adjacency));
}

}  // namespace difformer
