#include "difformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "difformer/error.hpp"
#include "difformer/kernels.hpp"

namespace difformer {

void ParamStore::add(const std::string& name, Matrix init) {
    if (contains(name)) throw ParameterError("ParamStore: duplicate parameter '" + name + "'");
    Matrix grad(init.rows(), init.cols());
    entries_.emplace(name, Entry{std::move(init), std::move(grad)});
}

Matrix& ParamStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParameterError("ParamStore: no parameter '" + name + "'");
    return it->second.value;
}

const Matrix& ParamStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParameterError("ParamStore: no parameter '" + name + "'");
    return it->second.value;
}

Matrix& ParamStore::grad(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParameterError("ParamStore: no parameter '" + name + "'");
    return it->second.grad;
}

const Matrix& ParamStore::grad(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParameterError("ParamStore: no parameter '" + name + "'");
    return it->second.grad;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) {
        if (!e.grad.same_shape(e.value)) e.grad = Matrix(e.value.rows(), e.value.cols());
        e.grad.fill(0.0);
    }
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
}

namespace ad {

void Tape::check(Var v) const {
    if (v.tape_ != this || v.index_ >= nodes_.size()) {
        throw ConsistencyError("autodiff: operand does not belong to this tape");
    }
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(ParamStore& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) {
        if (nodes_[it->second].store != &store) {
            throw ConsistencyError("autodiff: parameter '" + name +
                                   "' already bound to a different store");
        }
        return Var(this, it->second);
    }
    Node n;
    n.value = store.value(name);
    n.needs_grad = true;
    n.param = name;
    n.store = &store;
    nodes_.push_back(std::move(n));
    param_nodes_[name] = nodes_.size() - 1;
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> inputs, Adjoint adjoint) {
    Node n;
    n.value = std::move(value);
    for (Var v : inputs) {
        check(v);
        n.inputs.push_back(v.index_);
        n.needs_grad = n.needs_grad || nodes_[v.index_].needs_grad;
    }
    if (n.needs_grad) n.adjoint = std::move(adjoint);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::value(Var v) const {
    check(v);
    return nodes_[v.index_].value;
}

Matrix Tape::grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.index_];
    if (n.grad.empty() && !n.value.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

bool Tape::needs_grad(Var v) const {
    check(v);
    return nodes_[v.index_].needs_grad;
}

Matrix& Tape::grad_buffer(Var v) {
    check(v);
    Node& n = nodes_[v.index_];
    if (!n.grad.same_shape(n.value) || n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
    check(v);
    if (!nodes_[v.index_].needs_grad) return;
    Matrix& buf = grad_buffer(v);
    if (!buf.same_shape(g)) {
        throw DimensionError("autodiff: adjoint of shape " + g.shape_string() +
                             " for node of shape " + buf.shape_string());
    }
    kernels::axpy(1.0, g.data(), buf.data(), g.size());
}

void Tape::backward(Var loss, ParamStore& store) {
    check(loss);
    const Matrix& lv = nodes_[loss.index_].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw DimensionError("backward: loss must be 1x1, got " + lv.shape_string());
    }
    for (const auto& [name, idx] : param_nodes_) {
        const Node& n = nodes_[idx];
        if (n.store != &store || !store.contains(name) ||
            !store.value(name).same_shape(n.value)) {
            throw ConsistencyError("backward: parameter '" + name +
                                   "' on the tape is not present in the store");
        }
    }
    store.zero_grad();
    for (Node& n : nodes_) n.grad = Matrix();
    visits_.assign(nodes_.size(), 0);

    grad_buffer(loss)(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        ++visits_[i];
        if (!n.param.empty()) {
            Matrix& g = store.grad(n.param);
            kernels::axpy(1.0, n.grad.data(), g.data(), g.size());
            continue;
        }
        if (n.adjoint) {
            const Matrix out_grad = n.grad;
            n.adjoint(*this, out_grad);
        }
    }
}

// ---------------------------------------------------------------------------

Tape& tape_of(Var v) {
    if (v.tape() == nullptr) throw ConsistencyError("autodiff: operand is not attached to a tape");
    return *v.tape();
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a);
    t.check(b);
    return t.record(difformer::matmul(t.value(a), t.value(b)), {a, b},
                    [a, b](Tape& tp, const Matrix& g) {
                        if (tp.needs_grad(a)) tp.accumulate(a, matmul_nt(g, tp.value(b)));
                        if (tp.needs_grad(b)) tp.accumulate(b, matmul_tn(tp.value(a), g));
                    });
}

Var axpby(double alpha, Var a, double beta, Var b) {
    Tape& t = tape_of(a);
    t.check(b);
    return t.record(difformer::axpby(alpha, t.value(a), beta, t.value(b)), {a, b},
                    [a, b, alpha, beta](Tape& tp, const Matrix& g) {
                        if (tp.needs_grad(a)) tp.accumulate(a, difformer::scale(g, alpha));
                        if (tp.needs_grad(b)) tp.accumulate(b, difformer::scale(g, beta));
                    });
}

Var add(Var a, Var b) { return axpby(1.0, a, 1.0, b); }

Var sub(Var a, Var b) { return axpby(1.0, a, -1.0, b); }

Var scale(Var a, double s) {
    Tape& t = tape_of(a);
    return t.record(difformer::scale(t.value(a), s), {a},
                    [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, difformer::scale(g, s)); });
}

Var add_row(Var a, Var bias) {
    Tape& t = tape_of(a);
    t.check(bias);
    const Matrix& bv = t.value(bias);
    if (bv.rows() != 1) throw DimensionError("add_row: bias must be 1 x cols, got " + bv.shape_string());
    return t.record(add_row_vector(t.value(a), bv.row(0)), {a, bias},
                    [a, bias](Tape& tp, const Matrix& g) {
                        tp.accumulate(a, g);
                        if (tp.needs_grad(bias)) {
                            const auto cs = col_sums(g);
                            tp.accumulate(bias, Matrix(1, cs.size(), cs));
                        }
                    });
}

Var mean_of(const std::vector<Var>& xs) {
    if (xs.empty()) throw ParameterError("mean_of: no operands");
    Tape& t = tape_of(xs.front());
    Matrix acc = t.value(xs.front());
    for (std::size_t i = 1; i < xs.size(); ++i) {
        t.check(xs[i]);
        const Matrix& v = t.value(xs[i]);
        if (!v.same_shape(acc)) throw DimensionError("mean_of: operand shapes differ");
        kernels::axpy(1.0, v.data(), acc.data(), acc.size());
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    if (xs.size() > 1) acc = difformer::scale(acc, inv);
    return t.record(std::move(acc), xs, [xs, inv](Tape& tp, const Matrix& g) {
        const Matrix gs = xs.size() > 1 ? difformer::scale(g, inv) : g;
        for (Var x : xs) tp.accumulate(x, gs);
    });
}

Var relu(Var a) {
    Tape& t = tape_of(a);
    return t.record(difformer::relu(t.value(a)), {a}, [a](Tape& tp, const Matrix& g) {
        const Matrix& x = tp.value(a);
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
        tp.accumulate(a, d);
    });
}

Var sigmoid(Var a) {
    Tape& t = tape_of(a);
    Matrix y = difformer::sigmoid(t.value(a));
    return t.record(y, {a}, [a, y](Tape& tp, const Matrix& g) {
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = y.data()[i];
            d.data()[i] = g.data()[i] * s * (1.0 - s);
        }
        tp.accumulate(a, d);
    });
}

Var log_softmax_rows(Var a) {
    Tape& t = tape_of(a);
    Matrix y = difformer::log_softmax_rows(t.value(a));
    return t.record(y, {a}, [a, y](Tape& tp, const Matrix& g) {
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double gs = 0.0;
            for (double v : g.row(i)) gs += v;
            for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = g(i, j) - std::exp(y(i, j)) * gs;
        }
        tp.accumulate(a, d);
    });
}

Var dropout(Var a, double p, std::uint64_t seed, Mode mode) {
    Tape& t = tape_of(a);
    const Matrix& x = t.value(a);
    if (!(p >= 0.0 && p < 1.0)) {
        throw ParameterError("dropout: probability must satisfy 0 <= p < 1, got " +
                             std::to_string(p));
    }
    if (mode == Mode::eval || p == 0.0) return a;
    Matrix mask = dropout_mask(x.rows(), x.cols(), p, seed);
    return t.record(hadamard(x, mask), {a},
                    [a, mask](Tape& tp, const Matrix& g) { tp.accumulate(a, hadamard(g, mask)); });
}

Var l2_normalize_rows(Var a, bool zero_degenerate) {
    Tape& t = tape_of(a);
    const Matrix& x = t.value(a);
    if (!zero_degenerate) (void)rowwise_l2_normalize(x);  // throws on a degenerate row
    Matrix y(x.rows(), x.cols());
    std::vector<double> norms(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = x.row(i);
        norms[i] = std::sqrt(kernels::dot(r.data(), r.data(), r.size()));
        if (!(norms[i] > kNormGuard)) {
            norms[i] = std::numeric_limits<double>::infinity();  // zero row, zero gradient
            continue;
        }
        for (std::size_t j = 0; j < r.size(); ++j) y(i, j) = r[j] / norms[i];
    }
    return t.record(y, {a}, [a, y, norms](Tape& tp, const Matrix& g) {
        // d x = (g - y (y . g)) / |x|
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double yg = kernels::dot(y.row(i).data(), g.row(i).data(), g.cols());
            for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = (g(i, j) - y(i, j) * yg) / norms[i];
        }
        tp.accumulate(a, d);
    });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    Tape& t = tape_of(x);
    t.check(gain);
    t.check(bias);
    const Matrix& xv = t.value(x);
    const Matrix& gv = t.value(gain);
    const Matrix& bv = t.value(bias);
    if (gv.rows() != 1 || bv.rows() != 1) {
        throw DimensionError("layer_norm_rows: gain/bias must be 1 x cols");
    }
    Matrix y = difformer::layer_norm_rows(xv, gv.row(0), bv.row(0), eps);

    const std::size_t n = xv.cols();
    Matrix xhat(xv.rows(), n);
    std::vector<double> sigma(xv.rows());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        const auto r = xv.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        sigma[i] = std::sqrt(var / static_cast<double>(n));
        for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (r[j] - mean) / (sigma[i] + eps);
    }

    return t.record(std::move(y), {x, gain, bias},
                    [x, gain, bias, xhat, sigma, eps](Tape& tp, const Matrix& g) {
        const Matrix& gv2 = tp.value(gain);
        const std::size_t rows = g.rows();
        const std::size_t n2 = g.cols();
        const double inv_n = 1.0 / static_cast<double>(n2);
        if (tp.needs_grad(gain) || tp.needs_grad(bias)) {
            Matrix dg(1, n2), db(1, n2);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < n2; ++j) {
                    dg(0, j) += g(i, j) * xhat(i, j);
                    db(0, j) += g(i, j);
                }
            }
            tp.accumulate(gain, dg);
            tp.accumulate(bias, db);
        }
        if (!tp.needs_grad(x)) return;
        Matrix dx(rows, n2);
        std::vector<double> dxh(n2);
        for (std::size_t i = 0; i < rows; ++i) {
            const double s = sigma[i] + eps;
            double mean_dxh = 0.0;
            double dot_c = 0.0;  // sum_j dxh_j * c_j, with c_j = xhat_j * s
            for (std::size_t j = 0; j < n2; ++j) {
                dxh[j] = g(i, j) * gv2(0, j);
                mean_dxh += dxh[j];
                dot_c += dxh[j] * xhat(i, j) * s;
            }
            mean_dxh *= inv_n;
            for (std::size_t j = 0; j < n2; ++j) {
                double v = (dxh[j] - mean_dxh) / s;
                if (sigma[i] > 0.0) {
                    const double c = xhat(i, j) * s;
                    v -= c * dot_c * inv_n / (sigma[i] * s * s);
                }
                dx(i, j) = v;
            }
        }
        tp.accumulate(x, dx);
    });
}

Var spmm(std::shared_ptr<const CsrMatrix> a, Var v) {
    Tape& t = tape_of(v);
    Matrix out = difformer::spmm(*a, t.value(v));
    auto at = std::make_shared<const CsrMatrix>(a->transpose());
    return t.record(std::move(out), {v}, [v, at](Tape& tp, const Matrix& g) {
        tp.accumulate(v, difformer::spmm(*at, g));
    });
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    const Matrix& x = t.value(a);
    double s = 0.0;
    for (double v : x.values()) s += v;
    const std::size_t r = x.rows(), c = x.cols();
    return t.record(Matrix(1, 1, s), {a}, [a, r, c](Tape& tp, const Matrix& g) {
        tp.accumulate(a, Matrix(r, c, g(0, 0)));
    });
}

Var nll_mean(Var logp, const std::vector<std::size_t>& rows, const std::vector<int>& labels) {
    Tape& t = tape_of(logp);
    const Matrix& lp = t.value(logp);
    if (rows.empty()) throw ParameterError("nll_mean: empty index set");
    if (labels.size() != lp.rows()) {
        throw DimensionError("nll_mean: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(lp.rows()) + " rows");
    }
    double s = 0.0;
    for (std::size_t r : rows) {
        if (r >= lp.rows()) throw ValidationError("nll_mean: index " + std::to_string(r) + " out of range");
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= lp.cols()) {
            throw ValidationError("nll_mean: index " + std::to_string(r) + " has no valid label");
        }
        s -= lp(r, static_cast<std::size_t>(y));
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    return t.record(Matrix(1, 1, s * inv), {logp},
                    [logp, rows, labels, inv, shape_r = lp.rows(), shape_c = lp.cols()](
                        Tape& tp, const Matrix& g) {
                        Matrix d(shape_r, shape_c);
                        for (std::size_t r : rows) d(r, static_cast<std::size_t>(labels[r])) -= g(0, 0) * inv;
                        tp.accumulate(logp, d);
                    });
}

}  // namespace ad
}  // namespace difformer
