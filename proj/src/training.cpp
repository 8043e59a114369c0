#include "difformer/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

#include "difformer/error.hpp"
#include "difformer/seed.hpp"

namespace difformer {

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a finite value >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (patience == 0) throw ConfigError("train: patience must be at least 1");
    net.validate();
}

ad::Var cross_entropy(ad::Var logits, const std::vector<int>& labels,
                      const std::vector<std::size_t>& idx) {
    for (std::size_t i : idx) {
        if (i >= labels.size()) throw ValidationError("cross_entropy: index " + std::to_string(i) + " out of range");
        if (labels[i] == kUnlabeled) {
            throw ValidationError("cross_entropy: training index " + std::to_string(i) + " is unlabeled");
        }
    }
    return ad::nll_mean(ad::log_softmax_rows(logits), idx, labels);
}

double evaluate(const Matrix& logits, const std::vector<int>& labels,
                const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ParameterError("evaluate: empty index set");
    std::size_t hit = 0;
    for (std::size_t i : idx) {
        if (i >= logits.rows() || i >= labels.size()) {
            throw ValidationError("evaluate: index " + std::to_string(i) + " out of range");
        }
        if (labels[i] == kUnlabeled) throw ValidationError("evaluate: index " + std::to_string(i) + " is unlabeled");
        const auto row = logits.row(i);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        hit += best == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
}

void adam_step(ParamStore& params, AdamState& state, const AdamHyper& hyper) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    for (auto& [name, e] : params.entries()) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (!m.same_shape(e.value)) {
            m = Matrix(e.value.rows(), e.value.cols());
            v = Matrix(e.value.rows(), e.value.cols());
        }
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double g = e.grad.data()[i] + hyper.weight_decay * e.value.data()[i];
            double& mi = m.data()[i];
            double& vi = v.data()[i];
            mi = hyper.beta1 * mi + (1.0 - hyper.beta1) * g;
            vi = hyper.beta2 * vi + (1.0 - hyper.beta2) * g * g;
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            e.value.data()[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

nlohmann::json Metrics::epoch_json(const EpochRecord& r) const {
    return {{"epoch", r.epoch},
            {"train_loss", r.train_loss},
            {"train_acc", r.train_acc},
            {"valid_acc", r.valid_acc},
            {"test_acc", r.test_acc},
            {"timing", {{"seconds", r.seconds}}}};
}

nlohmann::json Metrics::summary_json() const {
    return {{"epochs_run", epochs.size()},
            {"best_epoch", best_epoch},
            {"best_valid_acc", best_valid_acc},
            {"test_acc", test_acc},
            {"final_train_loss", epochs.empty() ? 0.0 : epochs.back().train_loss},
            {"timing", {{"wall_seconds", wall_seconds}}}};
}

namespace {

// Everything a forward pass over one subset of instances needs.
struct Batch {
    std::vector<std::size_t> nodes;  // sorted global indices
    Matrix x;
    std::vector<int> labels;
    std::vector<std::size_t> train_rows;  // positions within the batch
    AdjacencyPtr adjacency;
};

Batch make_batch(const Dataset& ds, std::vector<std::size_t> nodes, const std::vector<char>& is_train,
                 bool need_graph) {
    std::sort(nodes.begin(), nodes.end());
    Batch b;
    b.x = Matrix(nodes.size(), ds.dim());
    b.labels.resize(nodes.size());
    for (std::size_t r = 0; r < nodes.size(); ++r) {
        const auto src = ds.features.row(nodes[r]);
        std::copy(src.begin(), src.end(), b.x.row(r).begin());
        b.labels[r] = ds.labels[nodes[r]];
        if (is_train[nodes[r]]) b.train_rows.push_back(r);
    }
    if (need_graph) {
        b.adjacency = std::make_shared<const CsrMatrix>(
            normalized_adjacency(induced_subgraph(*ds.graph, nodes)));
    }
    b.nodes = std::move(nodes);
    return b;
}

std::vector<std::vector<std::size_t>> batches_for(std::size_t n, std::size_t batch_size,
                                                  std::uint64_t seed) {
    if (batch_size == 0 || batch_size >= n) {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        return {all};
    }
    return partition_minibatches(n, batch_size, seed);
}

NetworkConfig resolved_network(const Dataset& ds, const TrainConfig& cfg) {
    NetworkConfig net = cfg.net;
    if (net.input_dim == 0) net.input_dim = ds.dim();
    if (net.num_classes == 0) net.num_classes = ds.num_classes;
    if (net.input_dim != ds.dim()) {
        throw ConfigError("train: input_dim " + std::to_string(net.input_dim) + " but the features have " +
                          std::to_string(ds.dim()) + " columns");
    }
    if (net.num_classes != ds.num_classes) {
        throw ConfigError("train: num_classes " + std::to_string(net.num_classes) +
                          " but the dataset has " + std::to_string(ds.num_classes));
    }
    const bool need_graph = net.use_graph || net.kernel == KernelKind::gcn_adjacency;
    if (need_graph && !ds.graph) throw ConfigError("train: configuration uses the input graph but the dataset has none");
    return net;
}

}  // namespace

Matrix predict(const Dataset& ds, const TrainConfig& cfg, ParamStore& params) {
    const NetworkConfig net = resolved_network(ds, cfg);
    const bool need_graph = net.use_graph || net.kernel == KernelKind::gcn_adjacency;
    const std::vector<char> none(ds.n(), 0);
    Matrix logits(ds.n(), net.num_classes);
    for (auto& nodes : batches_for(ds.n(), cfg.batch_size, derive_seed(cfg.seed, {0xE5A1}))) {
        const Batch b = make_batch(ds, std::move(nodes), none, need_graph);
        const ForwardResult f = forward(b.x, params, net, b.adjacency);
        for (std::size_t r = 0; r < b.nodes.size(); ++r) {
            const auto src = f.logits.row(r);
            std::copy(src.begin(), src.end(), logits.row(b.nodes[r]).begin());
        }
    }
    return logits;
}

Metrics train(const Dataset& ds, const TrainConfig& cfg, ParamStore* params_out,
              const EpochCallback& on_epoch) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();

    ds.validate();
    TrainConfig run = cfg;
    run.net = resolved_network(ds, cfg);
    run.validate();
    const NetworkConfig& net = run.net;
    if (ds.splits.train.empty()) throw ConfigError("train: empty training split");
    if (ds.splits.valid.empty()) throw ConfigError("train: empty validation split (needed for early stopping)");
    if (cfg.batch_size > ds.n()) {
        throw ConfigError("train: batch_size " + std::to_string(cfg.batch_size) + " exceeds N = " +
                          std::to_string(ds.n()));
    }
    const bool need_graph = net.use_graph || net.kernel == KernelKind::gcn_adjacency;

    std::vector<char> is_train(ds.n(), 0);
    for (std::size_t i : ds.splits.train) is_train[i] = 1;

    ParamStore params = init_parameters(net, derive_seed(cfg.seed, {1}));
    AdamState adam;
    const AdamHyper hyper{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

    // Full-batch training reuses one batch object across epochs; batch_size = N
    // still goes through the partitioning path.
    std::optional<Batch> full;
    if (cfg.batch_size == 0) {
        std::vector<std::size_t> all(ds.n());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        full = make_batch(ds, all, is_train, need_graph);
    }

    Metrics metrics;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    ParamStore best_params;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t_epoch = clock::now();
        double loss_sum = 0.0;
        std::size_t loss_count = 0;

        std::vector<Batch> owned;
        std::vector<const Batch*> batches;
        if (full) {
            batches.push_back(&*full);
        } else {
            for (auto& nodes : partition_minibatches(ds.n(), cfg.batch_size, derive_seed(cfg.seed, {2, epoch}))) {
                owned.push_back(make_batch(ds, std::move(nodes), is_train, need_graph));
            }
            for (const auto& b : owned) batches.push_back(&b);
        }

        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& b = *batches[bi];
            if (b.train_rows.empty()) continue;
            ad::Tape tape;
            const TapedForward f = forward(tape, b.x, params, net, b.adjacency, Mode::train,
                                           derive_seed(cfg.seed, {3, epoch, bi}));
            const ad::Var loss = cross_entropy(f.logits, b.labels, b.train_rows);
            tape.backward(loss, params);
            adam_step(params, adam, hyper);
            loss_sum += tape.value(loss)(0, 0) * static_cast<double>(b.train_rows.size());
            loss_count += b.train_rows.size();
        }

        const Matrix logits = predict(ds, run, params);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        rec.train_acc = evaluate(logits, ds.labels, ds.splits.train);
        rec.valid_acc = evaluate(logits, ds.labels, ds.splits.valid);
        rec.test_acc = ds.splits.test.empty() ? 0.0 : evaluate(logits, ds.labels, ds.splits.test);
        rec.seconds = std::chrono::duration<double>(clock::now() - t_epoch).count();
        metrics.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.valid_acc > best) {
            best = rec.valid_acc;
            metrics.best_epoch = epoch;
            metrics.best_valid_acc = rec.valid_acc;
            metrics.test_acc = rec.test_acc;
            if (params_out) best_params = params;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    if (params_out) *params_out = std::move(best_params);
    metrics.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    return metrics;
}

}  // namespace difformer
