#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "difformer/matrix.hpp"

namespace difformer {

/// Undirected simple graph over n instances. Edges are stored once as (i, j)
/// with i < j, sorted; self-loops and duplicates are dropped on construction.
class SparseGraph {
public:
    using Edge = std::pair<std::size_t, std::size_t>;

    SparseGraph() = default;
    /// ValidationError on any index outside [0, n).
    SparseGraph(std::size_t n, std::span<const Edge> edges);

    std::size_t n() const noexcept { return n_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<std::size_t>& degrees() const noexcept { return degrees_; }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    bool has_edge(std::size_t i, std::size_t j) const;
    /// Sorted neighbor lists.
    std::vector<std::vector<std::size_t>> adjacency_lists() const;

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::size_t> degrees_;
};

/// A~ with A~_ij = 1 / sqrt(d_i d_j) on edges, zero elsewhere (isolated nodes
/// give empty rows). Symmetric, zero diagonal.
CsrMatrix normalized_adjacency(const SparseGraph& g);

/// Subgraph induced by `nodes`, relabelled to positions within `nodes`.
SparseGraph induced_subgraph(const SparseGraph& g, std::span<const std::size_t> nodes);

struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
    std::vector<std::size_t> test;
};

inline constexpr int kUnlabeled = -1;

struct Dataset {
    Matrix features;                  // N x D
    std::vector<int> labels;          // class in [0, C) or kUnlabeled
    std::size_t num_classes = 0;
    Splits splits;
    std::optional<SparseGraph> graph;
    std::size_t edge_lines = 0;       // raw edge records read (|E| as reported by the source)

    std::size_t n() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }
    /// Throws ValidationError when splits overlap, leave [0, N), or a train
    /// index is unlabeled, or labels/graph disagree with N.
    void validate() const;
};

/// 64-bit FNV-1a over features, labels, edges and splits.
std::uint64_t fingerprint(const Dataset& ds);

// File formats -------------------------------------------------------------
//   features: CSV, one row per instance, optional first line "N,D"
//   labels:   CSV lines "index,class"; absent indices are unlabeled
//   edges:    whitespace separated "i j" per line, 0-based
//   splits:   lines "train: i,i,...", "valid: ...", "test: ..."

Matrix read_features(const std::string& path);
std::vector<int> read_labels(const std::string& path, std::size_t n);
/// Returns the edge list and the number of edge records read.
std::pair<std::vector<SparseGraph::Edge>, std::size_t> read_edges(const std::string& path,
                                                                  std::size_t n);
Splits read_splits(const std::string& path, std::size_t n);

void write_features(const std::string& path, const Matrix& x, bool header = true);
void write_labels(const std::string& path, const std::vector<int>& labels);
void write_edges(const std::string& path, const SparseGraph& g);
void write_splits(const std::string& path, const Splits& s);

/// Loads and validates a dataset. Without a split file the splits are empty
/// and the caller chooses a protocol (see planetoid_split / stratified_split).
Dataset load_dataset(const std::string& feature_path, const std::string& label_path,
                     const std::optional<std::string>& edge_path = std::nullopt,
                     const std::optional<std::string>& split_path = std::nullopt);

/// `per_class` labeled instances per class for training, then `n_valid` and
/// `n_test` drawn from the rest.
Splits planetoid_split(const std::vector<int>& labels, std::size_t num_classes,
                       std::size_t per_class, std::size_t n_valid, std::size_t n_test,
                       std::uint64_t seed);
/// Per-class random split with the given train/valid fractions, remainder test.
Splits stratified_split(const std::vector<int>& labels, std::size_t num_classes,
                        double train_frac, double valid_frac, std::uint64_t seed);

enum class Metric { cosine, euclidean };
Metric parse_metric(const std::string& name);

/// Symmetrized (union) k-nearest-neighbor graph; ties go to the lower index.
SparseGraph build_knn_graph(const Matrix& x, std::size_t k, Metric metric = Metric::cosine);

struct SyntheticSpec {
    std::size_t n_per_class = 50;
    std::size_t num_classes = 2;
    std::size_t dim = 8;
    double separation = 2.0;
    double noise = 1.0;
    double p_intra = 0.1;
    double p_inter = 0.01;

    void validate() const;
};

/// Gaussian class means (separation times a random unit direction) plus
/// isotropic noise, planted-partition graph, stratified 10/10/80 split.
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Random permutation of [0, n) chunked into ceil(n / batch) lists.
std::vector<std::vector<std::size_t>> partition_minibatches(std::size_t n, std::size_t batch,
                                                            std::uint64_t seed);

}  // namespace difformer
