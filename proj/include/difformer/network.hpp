#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "difformer/autodiff.hpp"
#include "difformer/diffusivity.hpp"
#include "difformer/matrix.hpp"
#include "difformer/propagation.hpp"

namespace difformer {

struct NetworkConfig {
    std::size_t input_dim = 0;    // D
    std::size_t hidden = 64;      // d
    std::size_t num_classes = 0;  // C
    std::size_t depth = 4;        // K
    std::size_t heads = 1;        // H
    double tau = 0.5;
    KernelKind kernel = KernelKind::simple_linear;
    SimpleVariant variant = SimpleVariant::eq9;
    bool use_graph = false;
    bool use_weight = true;       // V = Z Wv, else V = Z
    bool use_activation = false;  // ReLU after each layer's LayerNorm
    double dropout = 0.0;         // after the input layer and before the output layer
    double bandwidth = 0.0;       // gaussian kernel; 0 = median heuristic

    /// ConfigError on inconsistent settings.
    void validate() const;
    /// Whether the kernel uses query/key projections.
    bool uses_qk() const noexcept;
};

/// Parameter names: "input.W", "input.b", "input.ln.gain", "input.ln.bias",
/// "layer<k>.head<h>.Wq|Wk|Wv", "layer<k>.ln.gain|bias", "output.W", "output.b".
std::string layer_param(std::size_t layer, std::size_t head, const char* what);
std::string layer_norm_param(std::size_t layer, const char* what);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) (biases likewise); LayerNorm
/// gains 1 and biases 0. Deterministic in `seed`.
ParamStore init_parameters(const NetworkConfig& cfg, std::uint64_t seed);

/// ConfigError unless every parameter the configuration needs exists with
/// the right shape.
void check_parameters(const ParamStore& params, const NetworkConfig& cfg);

using AdjacencyPtr = std::shared_ptr<const CsrMatrix>;

namespace ad {

// Attention primitives with hand-written adjoints. Each returns the N x dv
// propagated values P for one head.

/// Linear-cost kernel on row-normalized qh, kh.
Var linear_attention(Var qh, Var kh, Var v, SimpleVariant variant);
/// row_normalize(sigmoid(Q K^T)) V.
Var sigmoid_attention(Var q, Var k, Var v);
/// softmax(Q K^T / sqrt(d)) V.
Var softmax_attention(Var q, Var k, Var v);
/// row_normalize(exp(-|q_i - k_j|^2 / (2 bw^2))) V, bw treated as a constant.
Var gaussian_attention(Var q, Var k, Var v, double bandwidth);
/// Every row is the column mean of V.
Var mean_attention(Var v);

}  // namespace ad

/// One propagation layer on the tape: per-head Q/K/V, kernel propagation,
/// optional graph term A~ V added to each head, head average, residual
/// Z + tau (P - Z), LayerNorm, optional ReLU.
ad::Var difformer_layer(ad::Var z, ParamStore& params, std::size_t layer, const NetworkConfig& cfg,
                        const AdjacencyPtr& adjacency);

struct TapedForward {
    ad::Var logits;
    std::vector<ad::Var> states;  // Z^(0) .. Z^(K)
};

/// Input layer ReLU(LayerNorm(X W_I + b_I)), K layers, output affine map.
/// Dropout streams derive from `dropout_seed`.
TapedForward forward(ad::Tape& tape, const Matrix& x, ParamStore& params, const NetworkConfig& cfg,
                     const AdjacencyPtr& adjacency, Mode mode, std::uint64_t dropout_seed = 0);

struct ForwardResult {
    Matrix logits;
    std::vector<Matrix> states;
};

/// Evaluation-mode forward pass without gradients.
ForwardResult forward(const Matrix& x, ParamStore& params, const NetworkConfig& cfg,
                      const AdjacencyPtr& adjacency = nullptr);

/// Single layer outside a network, for tests and audits.
Matrix difformer_layer(const Matrix& z, ParamStore& params, std::size_t layer,
                       const NetworkConfig& cfg, const AdjacencyPtr& adjacency = nullptr);

}  // namespace difformer
