#pragma once

// Minimal reverse-mode differentiation over a recorded tape of matrix
// operations. Nodes are appended in evaluation order, so replaying the
// adjoints from the back visits every node after all of its consumers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "difformer/matrix.hpp"

namespace difformer {

/// Named trainable matrices with same-shaped gradient buffers.
class ParamStore {
public:
    struct Entry {
        Matrix value;
        Matrix grad;
    };

    /// Throws ParameterError when the name already exists.
    void add(const std::string& name, Matrix init);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    void erase(const std::string& name) { entries_.erase(name); }

    Matrix& value(const std::string& name);
    const Matrix& value(const std::string& name) const;
    Matrix& grad(const std::string& name);
    const Matrix& grad(const std::string& name) const;

    void zero_grad();
    std::vector<std::string> names() const;
    std::size_t parameter_count() const;

    std::map<std::string, Entry>& entries() noexcept { return entries_; }
    const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, Entry> entries_;
};

namespace ad {

class Tape;

/// Handle to a node on a specific tape.
class Var {
public:
    Var() = default;
    std::size_t index() const noexcept { return index_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

class Tape {
public:
    /// Propagates the output adjoint of one node into its inputs.
    using Adjoint = std::function<void(Tape& tape, const Matrix& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    /// Leaf bound to a ParamStore entry; one leaf per name per tape.
    Var parameter(ParamStore& store, const std::string& name);

    /// Appends an operation node. `adjoint` may be empty for nodes with no
    /// differentiable inputs.
    Var record(Matrix value, std::vector<Var> inputs, Adjoint adjoint);

    const Matrix& value(Var v) const;
    /// Adjoint of v after backward(); zero matrix if v was never reached.
    Matrix grad(Var v) const;
    bool needs_grad(Var v) const;

    /// Adds g into v's adjoint buffer (allocated on first use).
    void accumulate(Var v, const Matrix& g);
    /// Mutable adjoint buffer for v, allocated zero on first use.
    Matrix& grad_buffer(Var v);

    /// Zeroes the store's gradients, seeds d(loss)=1 and replays adjoints in
    /// reverse; parameter-leaf adjoints land in the store.
    void backward(Var loss, ParamStore& store);

    std::size_t size() const noexcept { return nodes_.size(); }
    /// Number of times each node's adjoint ran during the last backward().
    const std::vector<std::size_t>& visit_counts() const noexcept { return visits_; }

    /// Throws ConsistencyError unless v belongs to this tape.
    void check(Var v) const;

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> inputs;
        Adjoint adjoint;
        bool needs_grad = false;
        std::string param;  // non-empty for parameter leaves
        ParamStore* store = nullptr;
    };

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> param_nodes_;
    std::vector<std::size_t> visits_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. All operands must live on the same tape.

/// Tape owning v; ConsistencyError for a default-constructed Var.
Tape& tape_of(Var v);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// alpha * a + beta * b
Var axpby(double alpha, Var a, double beta, Var b);
/// Adds a 1 x cols bias row to every row of a.
Var add_row(Var a, Var bias);
/// Average of equally shaped operands.
Var mean_of(const std::vector<Var>& xs);

Var relu(Var a);
Var sigmoid(Var a);
Var log_softmax_rows(Var a);
Var dropout(Var a, double p, std::uint64_t seed, Mode mode);
/// With `zero_degenerate`, rows of norm <= kNormGuard map to zero (zero
/// gradient) instead of throwing.
Var l2_normalize_rows(Var a, bool zero_degenerate = false);
/// gain and bias are 1 x cols.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = kLayerNormEps);
/// a * v with a constant sparse a.
Var spmm(std::shared_ptr<const CsrMatrix> a, Var v);

/// Sum of all entries, 1 x 1.
Var sum(Var a);
/// Mean over `rows` of -logp(row, label), 1 x 1.
Var nll_mean(Var logp, const std::vector<std::size_t>& rows, const std::vector<int>& labels);

}  // namespace ad
}  // namespace difformer
