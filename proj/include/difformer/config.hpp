#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difformer/graph.hpp"
#include "difformer/training.hpp"
#include "json.hpp"

namespace difformer {

inline constexpr const char* kVersion = "1.0.0";

/// Where the instances come from and how they are split.
struct DataConfig {
    std::string features;  // empty: synthetic data
    std::string labels;
    std::string edges;
    std::string splits;
    std::string split = "auto";  // auto | file | planetoid | stratified
    std::uint64_t split_seed = 0;  // also seeds the synthetic generator
    std::size_t per_class = 20;
    std::size_t n_valid = 500;
    std::size_t n_test = 1000;
    double train_frac = 0.1;
    double valid_frac = 0.1;
    std::size_t knn_k = 0;  // > 0 builds a kNN graph when no edge file is given
    std::string knn_metric = "cosine";
    SyntheticSpec synthetic;
};

/// Every setting of every subcommand, as one flat key space.
struct RunConfig {
    TrainConfig train;
    DataConfig data;
    std::size_t runs = 1;  // train: seeds seed, seed+1, ...

    // verify
    std::size_t verify_seeds = 20;
    std::vector<double> tau_grid{0.1, 0.3, 0.5, 0.7, 0.9};
    std::size_t verify_n = 32;
    std::size_t verify_d = 8;
    std::size_t verify_depth = 8;
    double lambda = 1.0;

    // bench
    std::vector<std::size_t> bench_n{1000, 2000, 4000, 8000, 16000, 32000};
    std::size_t bench_d = 64;
    std::string bench_kernel = "both";  // simple | advanced | both
    std::size_t warmup = 3;
    std::size_t repetitions = 5;

    // ablate / sweep
    std::vector<std::string> ablate_kernels{"identity", "constant", "full_attention", "gaussian",
                                            "simple", "advanced"};
    std::vector<std::size_t> sweep_depths{1, 2, 4, 8};
    std::vector<double> sweep_taus{0.1, 0.25, 0.5, 0.75, 0.9};
};

/// Flat JSON with every key set.
nlohmann::json to_json(const RunConfig& cfg);
/// Applies the keys present in `j` on top of `base`. ConfigError on unknown
/// keys or wrong value types.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);

/// Reads a configuration file. A file carrying a "manifest" object (any
/// emitted summary or report) yields that manifest's configuration, so a
/// previous run can be replayed from its output.
nlohmann::json read_config_file(const std::string& path);

struct DatasetFingerprint {
    std::size_t n = 0, d = 0, c = 0, e = 0;
    std::uint64_t hash = 0;
    nlohmann::json to_json() const;
};
DatasetFingerprint fingerprint_of(const Dataset& ds);

struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::optional<DatasetFingerprint> dataset;
    std::string version = kVersion;
    nlohmann::json to_json() const;
};

/// Loads or synthesizes the dataset described by `cfg` and assigns splits.
Dataset prepare_dataset(const DataConfig& cfg);

}  // namespace difformer
