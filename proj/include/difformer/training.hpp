#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "difformer/autodiff.hpp"
#include "difformer/graph.hpp"
#include "difformer/network.hpp"
#include "json.hpp"

namespace difformer {

struct TrainConfig {
    double lr = 0.01;
    double weight_decay = 5e-4;
    std::size_t epochs = 1000;
    std::size_t patience = 200;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    NetworkConfig net;

    /// ConfigError on out-of-range values. lr = 0 is accepted (frozen weights).
    void validate() const;
};

/// Mean over `idx` of -log_softmax(logits)[i][label_i], on the tape.
/// ValidationError when an index is unlabeled.
ad::Var cross_entropy(ad::Var logits, const std::vector<int>& labels,
                      const std::vector<std::size_t>& idx);

/// Fraction of idx whose argmax (ties to the lower class) equals the label.
/// ParameterError on empty idx.
double evaluate(const Matrix& logits, const std::vector<int>& labels,
                const std::vector<std::size_t>& idx);

struct AdamHyper {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // added to the gradient
};

struct AdamState {
    std::size_t step = 0;
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;
};

/// Bias-corrected Adam update of every parameter from its gradient buffer.
void adam_step(ParamStore& params, AdamState& state, const AdamHyper& hyper);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double valid_acc = 0.0;
    double test_acc = 0.0;
    double seconds = 0.0;  // wall time; excluded from reproducibility comparisons
};

struct Metrics {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_valid_acc = 0.0;
    double test_acc = 0.0;  // at best_epoch
    double wall_seconds = 0.0;

    /// Deterministic fields only; `timing` carries the wall-clock values.
    nlohmann::json epoch_json(const EpochRecord& r) const;
    nlohmann::json summary_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains with early stopping on validation accuracy. Mini-batch mode
/// propagates and computes the loss within each batch only. The trained
/// parameters are left in `params_out` when given.
Metrics train(const Dataset& ds, const TrainConfig& cfg, ParamStore* params_out = nullptr,
              const EpochCallback& on_epoch = nullptr);

/// Logits for every instance in evaluation mode (batched the same way as
/// training when cfg.batch_size > 0).
Matrix predict(const Dataset& ds, const TrainConfig& cfg, ParamStore& params);

}  // namespace difformer
