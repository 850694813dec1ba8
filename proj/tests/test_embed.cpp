#include "scopy/commit_cpg.hpp"
#include "scopy/embed.hpp"
#include "scopy/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace scopy;
using namespace scopy::embed;
using cpg::EdgeType;
using cpg::Version;

namespace {

// Frozen from a standalone Python recomputation of the seeded hash:
// token -> {bucket: sign} for dim 64, seed 0. A repeated bucket moves one up.
const std::map<std::string, std::map<int, double>> frozen_buckets = {
    {"yaml", {{16, 1.0}, {49, -1.0}}},
    {"load", {{7, -1.0}, {46, 1.0}}},
};

Eigen::VectorXd from_buckets(const std::map<int, double>& b, int dim) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    for (auto [i, s] : b) v[i] = s;
    return v / v.norm();
}

cpg::CpgNode node(int id, std::string code, Version v = Version::unchanged) {
    return {id, "f", "a.py", v, std::move(code), {id + 1, id + 1}};
}

cpg::MergedCpg two_nodes() {
    cpg::MergedCpg g;
    g.nodes = {node(0, "x = 1"), node(1, "print(x)")};
    g.edges = {{0, 1, EdgeType::DDG, Version::unchanged}};
    return g;
}

}  // namespace

TEST_CASE("tokenize_code splits identifiers, punctuation and case") {
    using V = std::vector<std::string>;
    CHECK(tokenize_code("yamlconfig.update(yaml.load(open(includes)))") ==
          V{"yamlconfig", ".", "update", "(", "yaml", ".", "load", "(", "open", "(", "includes", ")", ")", ")"});
    CHECK(tokenize_code("") == V{"<empty>"});
    CHECK(tokenize_code("   ") == V{"<empty>"});
    CHECK(tokenize_code("is_public") == V{"is", "public"});
    CHECK(tokenize_code("HTTPResponse") == V{"http", "response"});
    CHECK(tokenize_code("getLogger") == V{"get", "logger"});
    CHECK(tokenize_code("x == 'On'") == V{"x", "==", "'on'"});
    CHECK(tokenize_code("n = 10") == V{"n", "=", "10"});
}

TEST_CASE("tokenize_code tolerates fragments that do not parse") {
    CHECK_NOTHROW(tokenize_code("foo(bar"));
    CHECK_NOTHROW(tokenize_code("s = 'unterminated"));
    CHECK_FALSE(tokenize_code("a $ b").empty());
}

TEST_CASE("hash embedder matches frozen buckets") {
    HashEmbedder e;
    CHECK(e.dim() == 64);
    for (const auto& [tok, b] : frozen_buckets) {
        auto v = e.embed_token(tok);
        CHECK((v - from_buckets(b, 64)).norm() < 1e-15);
    }
}

TEST_CASE("embed_node is the token mean") {
    HashEmbedder e;
    CHECK((embed_node({"yaml"}, e) - e.embed_token("yaml")).norm() == 0.0);
    CHECK((embed_node({"yaml", "yaml"}, e) - embed_node({"yaml"}, e)).norm() < 1e-15);
    Eigen::VectorXd expect = (from_buckets(frozen_buckets.at("yaml"), 64) + from_buckets(frozen_buckets.at("load"), 64)) / 2;
    CHECK((embed_node({"yaml", "load"}, e) - expect).norm() < 1e-15);
}

TEST_CASE("hash embedder properties") {
    HashEmbedder e(32, 3);
    std::mt19937 rng(5);
    for (int i = 0; i < 200; ++i) {
        std::string tok;
        for (int k = 0; k < 1 + static_cast<int>(rng() % 8); ++k) tok += static_cast<char>('a' + rng() % 26);
        auto v = e.embed_token(tok);
        CHECK(v.size() == 32);
        CHECK(std::abs(v.norm() - 1.0) < 1e-12);
        CHECK(v.cwiseAbs().maxCoeff() <= 1.0);
        CHECK((v - e.embed_token(tok)).norm() == 0.0);
    }
    auto a = embed_node(tokenize_code("return yamlconfig"), e);
    auto b = embed_node(tokenize_code("return yamlconfig"), e);
    CHECK(a.dot(b) / (a.norm() * b.norm()) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((HashEmbedder(32, 3).embed_token("x") - HashEmbedder(32, 4).embed_token("x")).norm() > 0);
    CHECK_THROWS_AS(HashEmbedder(0), BadConfig);
}

TEST_CASE("edge codes") {
    auto row = [](Version v, EdgeType t) {
        auto c = embed_edge(v, t);
        return std::vector<double>(c.data(), c.data() + 5);
    };
    using V = std::vector<double>;
    CHECK(row(Version::previous, EdgeType::DDG) == V{1, 0, 0, 1, 0});
    CHECK(row(Version::unchanged, EdgeType::AST) == V{1, 1, 0, 0, 1});
    CHECK(row(Version::current, EdgeType::CDG) == V{0, 1, 1, 0, 0});

    std::set<V> codes;
    for (auto v : {Version::previous, Version::current, Version::unchanged})
        for (auto t : {EdgeType::AST, EdgeType::CDG, EdgeType::DDG}) {
            auto r = row(v, t);
            CHECK(r[2] + r[3] + r[4] == 1);
            CHECK(r[0] + r[1] >= 1);
            codes.insert(r);
        }
    CHECK(codes.size() == 9);
}

TEST_CASE("embed_graph shapes and symmetrization") {
    HashEmbedder e;
    cpg::MergedCpg one;
    one.nodes = {node(0, "pass")};
    auto g1 = embed_graph(one, e);
    CHECK(g1.num_nodes() == 1);
    CHECK(g1.num_edges() == 0);

    auto g2 = embed_graph(two_nodes(), e, "o__r@abc", 1);
    CHECK(g2.num_nodes() == 2);
    REQUIRE(g2.num_edges() == 2);
    CHECK(g2.edge_index[0] == std::pair{0, 1});
    CHECK(g2.edge_index[1] == std::pair{1, 0});
    CHECK(g2.edge_attr.row(0) == g2.edge_attr.row(1));
    CHECK(g2.label == 1);
    CHECK(g2.commit_id == "o__r@abc");
    CHECK((g2.node_features.row(1).transpose() - embed_node(tokenize_code("print(x)"), e)).norm() == 0.0);

    CHECK_THROWS_AS(embed_graph(cpg::MergedCpg{}, e), EmptyGraph);
}

TEST_CASE("embed_graph rows follow node id, not insertion order") {
    HashEmbedder e;
    cpg::MergedCpg g;
    for (int i = 0; i < 8; ++i) g.nodes.push_back(node(i * 3, "v" + std::to_string(i) + " = f(" + std::to_string(i) + ")"));
    std::mt19937 rng(11);
    for (int i = 0; i < 12; ++i) {
        int s = static_cast<int>(rng() % 8) * 3, d = static_cast<int>(rng() % 8) * 3;
        g.edges.push_back({s, d, static_cast<EdgeType>(rng() % 3), static_cast<Version>(rng() % 3)});
    }
    auto base = embed_graph(g, e);
    for (int trial = 0; trial < 5; ++trial) {
        auto h = g;
        std::shuffle(h.nodes.begin(), h.nodes.end(), rng);
        auto out = embed_graph(h, e);
        CHECK(out.node_features == base.node_features);
        CHECK(out.edge_index == base.edge_index);
        CHECK(out.edge_attr == base.edge_attr);
    }
    // Non-contiguous ids map to contiguous rows.
    for (auto [s, d] : base.edge_index) {
        CHECK(s < 8);
        CHECK(d < 8);
    }
}

TEST_CASE("Listing 1 embeds to six rows with legal edge codes") {
    auto g = cpg::build_commit_cpg(testing::listing1());
    auto eg = embed_graph(g, HashEmbedder(), "cvandeplas__pystemon@dbeb87a", 1);
    CHECK(eg.num_nodes() == 6);
    CHECK(eg.num_edges() == static_cast<int>(2 * g.edges.size()));
    for (Eigen::Index i = 0; i < eg.edge_attr.rows(); ++i) {
        auto r = eg.edge_attr.row(i);
        CHECK(r.tail(3).sum() == 1);
        CHECK(r.head(2).sum() >= 1);
        CHECK((r.array() * (1 - r.array())).abs().sum() == 0);
    }
}

TEST_CASE("embedded graph JSON round trip") {
    auto g = embed_graph(two_nodes(), HashEmbedder(), "o__r@abc", 0);
    auto back = embedded_graph_from_json(nlohmann::json::parse(to_json(g).dump()));
    CHECK(back.node_features == g.node_features);
    CHECK(back.edge_index == g.edge_index);
    CHECK(back.edge_attr == g.edge_attr);
    CHECK(back.label == g.label);
    CHECK(back.commit_id == g.commit_id);

    auto j = to_json(g);
    j["edge_attr"].erase(0);
    CHECK_THROWS_AS(embedded_graph_from_json(j), ShapeMismatch);
}

TEST_CASE("file embedder") {
    testing::TempDir dir;
    auto p = dir.path / "vectors.tsv";
    {
        std::ofstream out(p);
        out << "yaml\t1,0,0\nload\t0,2,0\n";
    }
    auto e = make_embedder({{"kind", "file"}, {"path", p.string()}});
    CHECK(e->dim() == 3);
    CHECK(e->embed_token("load") == Eigen::Vector3d(0, 2, 0));
    CHECK(e->embed_token("zzz") == Eigen::Vector3d::Zero());
    CHECK(embed_node({"yaml", "load"}, *e) == Eigen::Vector3d(0.5, 1, 0));
    CHECK(make_embedder(e->config())->embed_token("yaml") == Eigen::Vector3d(1, 0, 0));

    {
        std::ofstream out(p);
        out << "a\t1,2\nb\t1\n";
    }
    CHECK_THROWS_AS(FileEmbedder{p}, BadConfig);
    CHECK_THROWS_AS(make_embedder({{"kind", "bert"}}), BadConfig);
    CHECK(make_embedder({{"kind", "hash"}, {"dim", 16}})->dim() == 16);
}
