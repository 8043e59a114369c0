#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "difformer/error.hpp"
#include "difformer/graph.hpp"
#include "oracles.hpp"

using namespace difformer;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("difformer_graph_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name, const std::string& body) const {
        const auto p = path / name;
        std::ofstream(p) << body;
        return p.string();
    }
};

SparseGraph random_graph(std::size_t n, double p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(p);
    std::vector<SparseGraph::Edge> e;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (coin(rng)) e.emplace_back(i, j);
    return SparseGraph(n, e);
}

}  // namespace

TEST_CASE("SparseGraph canonicalizes edges") {
    const std::vector<SparseGraph::Edge> e{{2, 1}, {1, 2}, {0, 0}, {0, 3}, {3, 0}};
    const SparseGraph g(4, e);
    CHECK(g.edge_count() == 2);
    CHECK(g.edges()[0] == SparseGraph::Edge{0, 3});
    CHECK(g.edges()[1] == SparseGraph::Edge{1, 2});
    CHECK(g.has_edge(3, 0));
    CHECK_FALSE(g.has_edge(0, 0));
    CHECK(g.degrees() == std::vector<std::size_t>{1, 1, 1, 1});
    const std::vector<SparseGraph::Edge> bad{{0, 4}};
    CHECK_THROWS_AS(SparseGraph(4, bad), ValidationError);
}

TEST_CASE("normalized adjacency examples") {
    const std::vector<SparseGraph::Edge> path{{0, 1}, {1, 2}};
    const CsrMatrix a = normalized_adjacency(SparseGraph(3, path));
    CHECK(a.at(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(a.at(0, 2) == 0.0);
    const std::vector<SparseGraph::Edge> one{{0, 1}};
    CHECK(normalized_adjacency(SparseGraph(2, one)).at(0, 1) == 1.0);
    const CsrMatrix iso = normalized_adjacency(SparseGraph(3, one));
    CHECK(iso.row_ptr[3] == iso.row_ptr[2]);
}

TEST_CASE("normalized adjacency equals the degree-formula oracle and is symmetric") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SparseGraph g = random_graph(8, 0.4, seed);
        const Matrix a = normalized_adjacency(g).to_dense();
        std::vector<double> deg(8, 0.0);
        for (const auto& [i, j] : g.edges()) {
            deg[i] += 1;
            deg[j] += 1;
        }
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                const double want = g.has_edge(i, j) ? 1.0 / std::sqrt(deg[i] * deg[j]) : 0.0;
                CHECK(a(i, j) == want);
                CHECK(a(i, j) == a(j, i));
                CHECK(a(i, j) >= 0.0);
            }
    }
}

TEST_CASE("induced subgraph relabels to positions") {
    const std::vector<SparseGraph::Edge> e{{0, 1}, {1, 2}, {2, 3}, {0, 3}};
    const std::vector<std::size_t> nodes{1, 2, 3};
    const SparseGraph s = induced_subgraph(SparseGraph(4, e), nodes);
    CHECK(s.n() == 3);
    CHECK(s.edges() == std::vector<SparseGraph::Edge>{{0, 1}, {1, 2}});
}

TEST_CASE("kNN examples") {
    const Matrix line = Matrix::from_rows({{0}, {1}, {10}});
    const SparseGraph g = build_knn_graph(line, 1, Metric::euclidean);
    CHECK(g.edges() == std::vector<SparseGraph::Edge>{{0, 1}, {1, 2}});
    const Matrix x = oracle::randn(6, 3, 1);
    CHECK(build_knn_graph(x, 5, Metric::cosine).edge_count() == 15);
    CHECK_THROWS_AS(build_knn_graph(x, 6), ParameterError);
    CHECK_THROWS_AS(build_knn_graph(x, 0), ParameterError);
    CHECK_THROWS_AS(parse_metric("manhattan"), ParameterError);
}

TEST_CASE("kNN matches a brute-force neighbor oracle") {
    const std::size_t n = 32, k = 3;
    const Matrix x = oracle::randn(n, 4, 21);
    for (Metric m : {Metric::euclidean, Metric::cosine}) {
        const SparseGraph g = build_knn_graph(x, k, m);
        std::set<std::pair<std::size_t, std::size_t>> want;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::pair<double, std::size_t>> c;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double d;
                if (m == Metric::euclidean) {
                    d = oracle::sqdist(x, i, j);
                } else {
                    double dot = 0;
                    for (std::size_t t = 0; t < 4; ++t) dot += x(i, t) * x(j, t);
                    d = 1.0 - dot / (oracle::norm(x, i) * oracle::norm(x, j));
                }
                c.emplace_back(d, j);
            }
            std::sort(c.begin(), c.end());
            for (std::size_t r = 0; r < k; ++r) want.insert({std::min(i, c[r].second), std::max(i, c[r].second)});
        }
        const std::set<std::pair<std::size_t, std::size_t>> got(g.edges().begin(), g.edges().end());
        CHECK(got == want);
        for (std::size_t d : g.degrees()) CHECK(d >= k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) CHECK(g.has_edge(i, j) == g.has_edge(j, i));
    }
}

TEST_CASE("synthetic generator") {
    SyntheticSpec spec;
    spec.n_per_class = 40;
    const Dataset a = make_synthetic(spec, 5), b = make_synthetic(spec, 5);
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    CHECK(a.graph->edges() == b.graph->edges());
    CHECK(fingerprint(a) == fingerprint(b));
    CHECK(fingerprint(a) != fingerprint(make_synthetic(spec, 6)));
    a.validate();

    SyntheticSpec cliques = spec;
    cliques.num_classes = 3;
    cliques.n_per_class = 6;
    cliques.p_intra = 1.0;
    cliques.p_inter = 0.0;
    const Dataset c = make_synthetic(cliques, 1);
    for (std::size_t i = 0; i < c.n(); ++i)
        for (std::size_t j = 0; j < c.n(); ++j)
            if (i != j) CHECK(c.graph->has_edge(i, j) == (c.labels[i] == c.labels[j]));
}

TEST_CASE("synthetic classes are indistinguishable at zero separation") {
    SyntheticSpec spec;
    spec.separation = 0.0;
    spec.noise = 1.0;
    spec.n_per_class = 400;
    spec.dim = 4;
    const Dataset ds = make_synthetic(spec, 9);
    const double n = static_cast<double>(spec.n_per_class);
    for (std::size_t t = 0; t < spec.dim; ++t) {
        double m0 = 0, m1 = 0;
        for (std::size_t i = 0; i < ds.n(); ++i) (ds.labels[i] == 0 ? m0 : m1) += ds.features(i, t) / n;
        // Difference of two means of n unit-variance draws has sd sqrt(2/n).
        CHECK(std::abs(m0 - m1) < 3.0 * std::sqrt(2.0 / n));
    }
}

TEST_CASE("mini-batch partitions") {
    const auto one = partition_minibatches(5, 5, 3);
    REQUIRE(one.size() == 1);
    auto sorted = one[0];
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4});
    const auto parts = partition_minibatches(5, 2, 3);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].size() == 2);
    CHECK(parts[1].size() == 2);
    CHECK(parts[2].size() == 1);
    CHECK(partition_minibatches(5, 2, 3) == parts);
    CHECK_THROWS_AS(partition_minibatches(5, 0, 1), ParameterError);
    CHECK_THROWS_AS(partition_minibatches(5, 6, 1), ParameterError);
}

TEST_CASE("mini-batch union is [0, n) without duplicates") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng() % 1000;
        const std::size_t b = 1 + rng() % n;
        std::vector<std::size_t> all;
        for (const auto& p : partition_minibatches(n, b, rng())) {
            CHECK(p.size() <= b);
            all.insert(all.end(), p.begin(), p.end());
        }
        std::sort(all.begin(), all.end());
        REQUIRE(all.size() == n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(all[i] == i);
    }
}

TEST_CASE("files round-trip") {
    TempDir tmp;
    SyntheticSpec spec;
    spec.n_per_class = 10;
    const Dataset ds = make_synthetic(spec, 2);
    const auto f = (tmp.path / "x.csv").string(), l = (tmp.path / "y.csv").string();
    const auto e = (tmp.path / "e.txt").string(), s = (tmp.path / "s.txt").string();
    write_features(f, ds.features);
    write_labels(l, ds.labels);
    write_edges(e, *ds.graph);
    write_splits(s, ds.splits);
    const Dataset back = load_dataset(f, l, e, s);
    CHECK(back.features == ds.features);
    CHECK(back.labels == ds.labels);
    CHECK(back.graph->edges() == ds.graph->edges());
    CHECK(back.splits.train == ds.splits.train);
    CHECK(back.splits.test == ds.splits.test);
    CHECK(back.num_classes == 2);
    write_features(f, ds.features, false);
    CHECK(read_features(f) == ds.features);
}

TEST_CASE("loader errors") {
    TempDir tmp;
    const auto x = tmp.file("x.csv", "1,2\n3,4\n5,6\n");
    const auto y = tmp.file("y.csv", "0,0\n2,1\n");
    SUBCASE("edge out of range") {
        CHECK_THROWS_AS(load_dataset(x, y, tmp.file("e.txt", "0 3\n")), ValidationError);
    }
    SUBCASE("empty edge file gives an empty graph") {
        const Dataset d = load_dataset(x, y, tmp.file("e.txt", ""));
        REQUIRE(d.graph.has_value());
        CHECK(d.graph->edge_count() == 0);
        CHECK(d.labels[1] == kUnlabeled);
    }
    SUBCASE("ragged features") {
        CHECK_THROWS_AS(read_features(tmp.file("bad.csv", "1,2\n3\n")), ParseError);
    }
    SUBCASE("non-numeric cell reports the line") {
        try {
            read_features(tmp.file("bad.csv", "1,2\n3,abc\n"));
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("overlapping splits") {
        const auto s = tmp.file("s.txt", "train: 0\nvalid: 0\ntest: 2\n");
        CHECK_THROWS_AS(load_dataset(x, y, std::nullopt, s), ValidationError);
    }
    SUBCASE("unlabeled training index") {
        const auto s = tmp.file("s.txt", "train: 1\nvalid: 0\ntest: 2\n");
        CHECK_THROWS_AS(load_dataset(x, y, std::nullopt, s), ValidationError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_features((tmp.path / "nope.csv").string()), Error);
    }
}

TEST_CASE("planetoid and stratified splits") {
    std::vector<int> labels;
    for (int c = 0; c < 7; ++c)
        for (int i = 0; i < 300; ++i) labels.push_back(c);
    const Splits s = planetoid_split(labels, 7, 20, 500, 1000, 3);
    CHECK(s.train.size() == 140);
    CHECK(s.valid.size() == 500);
    CHECK(s.test.size() == 1000);
    std::vector<int> per(7, 0);
    for (std::size_t i : s.train) ++per[labels[i]];
    for (int c : per) CHECK(c == 20);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.valid.begin(), s.valid.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 1640);
    CHECK(planetoid_split(labels, 7, 20, 500, 1000, 3).test == s.test);
    CHECK_THROWS_AS(planetoid_split(labels, 7, 20, 1500, 1000, 3), ParameterError);

    const Splits t = stratified_split(labels, 7, 0.1, 0.2, 1);
    CHECK(t.train.size() == 210);
    CHECK(t.valid.size() == 420);
    CHECK(t.test.size() == 1470);
}
