#include "difformer/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "difformer/error.hpp"

namespace difformer {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

bool parse_double(const std::string& s, double& v) {
    if (s.empty()) return false;
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(v);
}

bool parse_index(const std::string& s, long long& v) {
    if (s.empty()) return false;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out.precision(17);
    return out;
}

bool skippable(const std::string& line) { return line.empty() || line[0] == '#'; }

}  // namespace

// SparseGraph ---------------------------------------------------------------

SparseGraph::SparseGraph(std::size_t n, std::span<const Edge> edges) : n_(n), degrees_(n, 0) {
    std::set<Edge> uniq;
    for (const auto& [a, b] : edges) {
        if (a >= n || b >= n) {
            throw ValidationError("edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                  ") outside [0, " + std::to_string(n) + ")");
        }
        if (a == b) continue;
        uniq.insert({std::min(a, b), std::max(a, b)});
    }
    edges_.assign(uniq.begin(), uniq.end());
    for (const auto& [a, b] : edges_) {
        ++degrees_[a];
        ++degrees_[b];
    }
}

bool SparseGraph::has_edge(std::size_t i, std::size_t j) const {
    const Edge e{std::min(i, j), std::max(i, j)};
    return std::binary_search(edges_.begin(), edges_.end(), e);
}

std::vector<std::vector<std::size_t>> SparseGraph::adjacency_lists() const {
    std::vector<std::vector<std::size_t>> adj(n_);
    for (const auto& [a, b] : edges_) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& l : adj) std::sort(l.begin(), l.end());
    return adj;
}

CsrMatrix normalized_adjacency(const SparseGraph& g) {
    const auto adj = g.adjacency_lists();
    const auto& deg = g.degrees();
    CsrMatrix a;
    a.rows = a.cols = g.n();
    a.row_ptr.assign(g.n() + 1, 0);
    for (std::size_t i = 0; i < g.n(); ++i) {
        for (std::size_t j : adj[i]) {
            a.col_idx.push_back(j);
            a.values.push_back(1.0 / std::sqrt(static_cast<double>(deg[i]) * static_cast<double>(deg[j])));
        }
        a.row_ptr[i + 1] = a.col_idx.size();
    }
    return a;
}

SparseGraph induced_subgraph(const SparseGraph& g, std::span<const std::size_t> nodes) {
    std::vector<std::size_t> pos(g.n(), static_cast<std::size_t>(-1));
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k] >= g.n()) throw ValidationError("induced_subgraph: node out of range");
        pos[nodes[k]] = k;
    }
    std::vector<SparseGraph::Edge> sub;
    for (const auto& [a, b] : g.edges()) {
        if (pos[a] != static_cast<std::size_t>(-1) && pos[b] != static_cast<std::size_t>(-1)) {
            sub.emplace_back(pos[a], pos[b]);
        }
    }
    return SparseGraph(nodes.size(), sub);
}

// Dataset -------------------------------------------------------------------

void Dataset::validate() const {
    const std::size_t N = n();
    if (labels.size() != N) {
        throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(N) + " instances");
    }
    for (int y : labels) {
        if (y != kUnlabeled && (y < 0 || static_cast<std::size_t>(y) >= num_classes)) {
            throw ValidationError("dataset: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
        }
    }
    std::vector<char> seen(N, 0);
    auto check = [&](const std::vector<std::size_t>& idx, const char* name) {
        for (std::size_t i : idx) {
            if (i >= N) {
                throw ValidationError(std::string("dataset: ") + name + " index " +
                                      std::to_string(i) + " outside [0, " + std::to_string(N) + ")");
            }
            if (seen[i]) {
                throw ValidationError(std::string("dataset: index ") + std::to_string(i) +
                                      " appears in more than one split (" + name + ")");
            }
            seen[i] = 1;
        }
    };
    check(splits.train, "train");
    check(splits.valid, "valid");
    check(splits.test, "test");
    for (std::size_t i : splits.train) {
        if (labels[i] == kUnlabeled) {
            throw ValidationError("dataset: train index " + std::to_string(i) + " is unlabeled");
        }
    }
    if (graph && graph->n() != N) {
        throw ValidationError("dataset: graph has " + std::to_string(graph->n()) + " nodes for " +
                              std::to_string(N) + " instances");
    }
}

std::uint64_t fingerprint(const Dataset& ds) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    const std::uint64_t dims[2] = {ds.features.rows(), ds.features.cols()};
    mix(dims, sizeof(dims));
    mix(ds.features.data(), ds.features.size() * sizeof(double));
    mix(ds.labels.data(), ds.labels.size() * sizeof(int));
    if (ds.graph) {
        for (const auto& [a, b] : ds.graph->edges()) {
            const std::uint64_t e[2] = {a, b};
            mix(e, sizeof(e));
        }
    }
    for (const auto* part : {&ds.splits.train, &ds.splits.valid, &ds.splits.test}) {
        const std::uint64_t len = part->size();
        mix(&len, sizeof(len));
        for (std::size_t i : *part) {
            const std::uint64_t v = i;
            mix(&v, sizeof(v));
        }
    }
    return h;
}

// Readers -------------------------------------------------------------------

Matrix read_features(const std::string& path) {
    auto in = open_input(path);
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_no;
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        line = trim(line);
        if (skippable(line)) continue;
        rows.push_back(split(line, ','));
        line_no.push_back(ln);
    }

    std::optional<std::pair<long long, long long>> header;
    if (!rows.empty() && rows[0].size() == 2) {
        long long hn = 0, hd = 0;
        if (parse_index(rows[0][0], hn) && parse_index(rows[0][1], hd) && hn >= 0 && hd > 0 &&
            static_cast<std::size_t>(hn) == rows.size() - 1 &&
            (rows.size() == 1 || rows[1].size() == static_cast<std::size_t>(hd))) {
            header = std::make_pair(hn, hd);
        }
    }
    const std::size_t first = header ? 1 : 0;
    const std::size_t n = rows.size() - first;
    const std::size_t d = header ? static_cast<std::size_t>(header->second)
                                 : (n == 0 ? 0 : rows[first].size());
    Matrix x(n, d);
    for (std::size_t r = first; r < rows.size(); ++r) {
        if (rows[r].size() != d) {
            throw ParseError(path, line_no[r],
                             "expected " + std::to_string(d) + " fields, found " +
                                 std::to_string(rows[r].size()));
        }
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            if (!parse_double(rows[r][j], v)) {
                throw ParseError(path, line_no[r], "not a finite real: '" + rows[r][j] + "'");
            }
            x(r - first, j) = v;
        }
    }
    return x;
}

std::vector<int> read_labels(const std::string& path, std::size_t n) {
    auto in = open_input(path);
    std::vector<int> labels(n, kUnlabeled);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        line = trim(line);
        if (skippable(line)) continue;
        const auto f = split(line, ',');
        long long idx = 0, cls = 0;
        if (f.size() != 2 || !parse_index(f[0], idx) || !parse_index(f[1], cls)) {
            throw ParseError(path, ln, "expected 'index,class'");
        }
        if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
            throw ValidationError(path + ":" + std::to_string(ln) + ": index " +
                                  std::to_string(idx) + " outside [0, " + std::to_string(n) + ")");
        }
        if (cls < 0) throw ValidationError(path + ":" + std::to_string(ln) + ": negative class");
        labels[static_cast<std::size_t>(idx)] = static_cast<int>(cls);
    }
    return labels;
}

std::pair<std::vector<SparseGraph::Edge>, std::size_t> read_edges(const std::string& path,
                                                                  std::size_t n) {
    auto in = open_input(path);
    std::vector<SparseGraph::Edge> edges;
    std::size_t records = 0;
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        line = trim(line);
        if (skippable(line)) continue;
        std::istringstream ls(line);
        std::string a, b, extra;
        if (!(ls >> a >> b) || (ls >> extra)) throw ParseError(path, ln, "expected 'i j'");
        long long i = 0, j = 0;
        if (!parse_index(a, i) || !parse_index(b, j)) throw ParseError(path, ln, "expected integer indices");
        if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= n || static_cast<std::size_t>(j) >= n) {
            throw ValidationError(path + ":" + std::to_string(ln) + ": edge (" + a + ", " + b +
                                  ") outside [0, " + std::to_string(n) + ")");
        }
        edges.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        ++records;
    }
    return {std::move(edges), records};
}

Splits read_splits(const std::string& path, std::size_t n) {
    auto in = open_input(path);
    Splits s;
    bool got[3] = {false, false, false};
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        line = trim(line);
        if (skippable(line)) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) throw ParseError(path, ln, "expected '<split>: i,i,...'");
        const std::string key = trim(line.substr(0, colon));
        std::vector<std::size_t>* dst = nullptr;
        int slot = 0;
        if (key == "train") { dst = &s.train; slot = 0; }
        else if (key == "valid") { dst = &s.valid; slot = 1; }
        else if (key == "test") { dst = &s.test; slot = 2; }
        else throw ParseError(path, ln, "unknown split '" + key + "'");
        if (got[slot]) throw ParseError(path, ln, "split '" + key + "' given twice");
        got[slot] = true;
        const std::string body = trim(line.substr(colon + 1));
        if (body.empty()) continue;
        for (const auto& tok : split(body, ',')) {
            long long v = 0;
            if (!parse_index(tok, v)) throw ParseError(path, ln, "bad index '" + tok + "'");
            if (v < 0 || static_cast<std::size_t>(v) >= n) {
                throw ValidationError(path + ":" + std::to_string(ln) + ": index " + tok +
                                      " outside [0, " + std::to_string(n) + ")");
            }
            dst->push_back(static_cast<std::size_t>(v));
        }
    }
    if (!got[0] || !got[1] || !got[2]) throw ParseError(path, ln, "expected train, valid and test lines");
    return s;
}

void write_features(const std::string& path, const Matrix& x, bool header) {
    auto out = open_output(path);
    if (header) out << x.rows() << ',' << x.cols() << '\n';
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? "," : "") << x(i, j);
        out << '\n';
    }
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
    auto out = open_output(path);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kUnlabeled) out << i << ',' << labels[i] << '\n';
    }
}

void write_edges(const std::string& path, const SparseGraph& g) {
    auto out = open_output(path);
    for (const auto& [a, b] : g.edges()) out << a << ' ' << b << '\n';
}

void write_splits(const std::string& path, const Splits& s) {
    auto out = open_output(path);
    auto put = [&out](const char* name, const std::vector<std::size_t>& v) {
        out << name << ':';
        for (std::size_t k = 0; k < v.size(); ++k) out << (k ? "," : " ") << v[k];
        out << '\n';
    };
    put("train", s.train);
    put("valid", s.valid);
    put("test", s.test);
}

Dataset load_dataset(const std::string& feature_path, const std::string& label_path,
                     const std::optional<std::string>& edge_path,
                     const std::optional<std::string>& split_path) {
    Dataset ds;
    ds.features = read_features(feature_path);
    const std::size_t n = ds.features.rows();
    ds.labels = read_labels(label_path, n);
    int max_label = -1;
    for (int y : ds.labels) max_label = std::max(max_label, y);
    ds.num_classes = static_cast<std::size_t>(max_label + 1);
    if (edge_path) {
        auto [edges, records] = read_edges(*edge_path, n);
        ds.graph = SparseGraph(n, edges);
        ds.edge_lines = records;
    }
    if (split_path) ds.splits = read_splits(*split_path, n);
    ds.validate();
    return ds;
}

// Splits --------------------------------------------------------------------

Splits planetoid_split(const std::vector<int>& labels, std::size_t num_classes,
                       std::size_t per_class, std::size_t n_valid, std::size_t n_test,
                       std::uint64_t seed) {
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    Splits s;
    std::vector<std::size_t> taken(num_classes, 0);
    std::vector<std::size_t> rest;
    for (std::size_t i : order) {
        const int y = labels[i];
        if (y != kUnlabeled && taken[static_cast<std::size_t>(y)] < per_class) {
            ++taken[static_cast<std::size_t>(y)];
            s.train.push_back(i);
        } else if (y != kUnlabeled) {
            rest.push_back(i);
        }
    }
    if (n_valid + n_test > rest.size()) {
        throw ParameterError("planetoid_split: not enough labeled instances for valid/test");
    }
    s.valid.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_valid));
    s.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_valid),
                  rest.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
    for (auto* v : {&s.train, &s.valid, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

Splits stratified_split(const std::vector<int>& labels, std::size_t num_classes,
                        double train_frac, double valid_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || valid_frac < 0.0 || train_frac + valid_frac > 1.0) {
        throw ParameterError("stratified_split: invalid fractions");
    }
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != kUnlabeled) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    std::mt19937_64 rng(seed);
    Splits s;
    for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const auto m = static_cast<double>(members.size());
        std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * m));
        std::size_t n_valid = static_cast<std::size_t>(std::llround(valid_frac * m));
        if (n_train == 0 && !members.empty()) n_train = 1;
        n_valid = std::min(n_valid, members.size() - n_train);
        for (std::size_t k = 0; k < members.size(); ++k) {
            (k < n_train ? s.train : k < n_train + n_valid ? s.valid : s.test).push_back(members[k]);
        }
    }
    for (auto* v : {&s.train, &s.valid, &s.test}) std::sort(v->begin(), v->end());
    return s;
}

// kNN -----------------------------------------------------------------------

Metric parse_metric(const std::string& name) {
    if (name == "cosine") return Metric::cosine;
    if (name == "euclidean") return Metric::euclidean;
    throw ParameterError("unknown metric '" + name + "' (expected cosine or euclidean)");
}

SparseGraph build_knn_graph(const Matrix& x, std::size_t k, Metric metric) {
    const std::size_t n = x.rows();
    if (k == 0 || k >= n) {
        throw ParameterError("build_knn_graph: k must satisfy 1 <= k < N (k=" + std::to_string(k) +
                             ", N=" + std::to_string(n) + ")");
    }
    const Matrix pts = metric == Metric::cosine ? rowwise_l2_normalize(x) : x;
    std::vector<SparseGraph::Edge> edges;
    edges.reserve(n * k);
    std::vector<std::pair<double, std::size_t>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dist = 0.0;
            if (metric == Metric::cosine) {
                double dot = 0.0;
                for (std::size_t t = 0; t < pts.cols(); ++t) dot += pts(i, t) * pts(j, t);
                dist = 1.0 - dot;
            } else {
                for (std::size_t t = 0; t < pts.cols(); ++t) {
                    const double diff = pts(i, t) - pts(j, t);
                    dist += diff * diff;
                }
            }
            cand[c++] = {dist, j};
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t t = 0; t < k; ++t) edges.emplace_back(i, cand[t].second);
    }
    return SparseGraph(n, edges);
}

// Synthetic data ------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (n_per_class == 0 || num_classes == 0 || dim == 0) {
        throw ParameterError("synthetic: n_per_class, num_classes and dim must be positive");
    }
    if (!(p_intra >= 0.0 && p_intra <= 1.0) || !(p_inter >= 0.0 && p_inter <= 1.0)) {
        throw ParameterError("synthetic: edge probabilities must lie in [0, 1]");
    }
    if (noise < 0.0 || separation < 0.0) throw ParameterError("synthetic: negative scale");
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Matrix means(spec.num_classes, spec.dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        double norm = 0.0;
        for (std::size_t j = 0; j < spec.dim; ++j) {
            means(c, j) = gauss(rng);
            norm += means(c, j) * means(c, j);
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < spec.dim; ++j) means(c, j) *= spec.separation / norm;
    }

    const std::size_t n = spec.n_per_class * spec.num_classes;
    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.features = Matrix(n, spec.dim);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i / spec.n_per_class;
        ds.labels[i] = static_cast<int>(c);
        for (std::size_t j = 0; j < spec.dim; ++j) {
            ds.features(i, j) = means(c, j) + spec.noise * gauss(rng);
        }
    }

    std::vector<SparseGraph::Edge> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = ds.labels[i] == ds.labels[j] ? spec.p_intra : spec.p_inter;
            if (unif(rng) < p) edges.emplace_back(i, j);
        }
    }
    ds.graph = SparseGraph(n, edges);
    ds.edge_lines = ds.graph->edge_count();
    ds.splits = stratified_split(ds.labels, ds.num_classes, 0.1, 0.1, rng());
    ds.validate();
    return ds;
}

std::vector<std::vector<std::size_t>> partition_minibatches(std::size_t n, std::size_t batch,
                                                            std::uint64_t seed) {
    if (batch == 0 || batch > n) {
        throw ParameterError("partition_minibatches: batch must satisfy 1 <= batch <= n (batch=" +
                             std::to_string(batch) + ", n=" + std::to_string(n) + ")");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch) {
        const std::size_t e = std::min(n, s + batch);
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s),
                         perm.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return out;
}

}  // namespace difformer
