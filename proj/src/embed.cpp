#include "scopy/embed.hpp"

#include "scopy/errors.hpp"
#include "scopy/pysyntax.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace scopy::embed {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// snake_case and camelCase pieces; "HTTPResponse" -> HTTP, Response.
void split_identifier(const std::string& id, std::vector<std::string>& out) {
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(lower(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < id.size(); ++i) {
        char c = id[i];
        if (c == '_') {
            flush();
            continue;
        }
        bool up = std::isupper(static_cast<unsigned char>(c));
        if (up && !cur.empty()) {
            bool prev_lower = std::islower(static_cast<unsigned char>(cur.back())) || std::isdigit(static_cast<unsigned char>(cur.back()));
            bool next_lower = i + 1 < id.size() && std::islower(static_cast<unsigned char>(id[i + 1]));
            bool prev_upper = std::isupper(static_cast<unsigned char>(cur.back()));
            if (prev_lower || (prev_upper && next_lower)) flush();
        }
        cur += c;
    }
    flush();
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t salt) {
    std::uint64_t h = 14695981039346656037ull ^ (salt * 0x9E3779B97F4A7C15ull);
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    // Final avalanche so low bits depend on every byte.
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    return h;
}

}  // namespace

std::vector<std::string> tokenize_code(std::string_view code) {
    std::vector<std::string> out;
    for (const auto& t : py::tokenize_fragment(code)) {
        if (t.kind == py::TokenKind::name) split_identifier(t.text, out);
        else out.push_back(lower(t.text));
    }
    if (out.empty()) out.push_back("<empty>");
    return out;
}

HashEmbedder::HashEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim <= 0) throw BadConfig("embedding dimension must be positive");
}

Eigen::VectorXd HashEmbedder::embed_token(std::string_view token) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
    Eigen::Index first = -1;
    for (std::uint64_t k = 0; k < 2; ++k) {
        auto h = fnv1a(token, seed_ * 2 + k + 1);
        auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_));
        // a second hit on the same bucket could cancel to zero
        if (bucket == first && dim_ > 1) bucket = (bucket + 1) % dim_;
        first = bucket;
        v[bucket] += (h >> 63) ? -1.0 : 1.0;
    }
    double n = v.norm();
    if (n > 0) v /= n;
    return v;
}

nlohmann::json HashEmbedder::config() const { return {{"kind", "hash"}, {"dim", dim_}, {"seed", seed_}}; }

FileEmbedder::FileEmbedder(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path);
    if (!in) throw BadConfig("cannot read token vectors from " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw BadConfig(path.string() + ":" + std::to_string(lineno) + ": missing tab");
        std::vector<double> vals;
        std::stringstream ss(line.substr(tab + 1));
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (dim_ == 0) dim_ = static_cast<int>(vals.size());
        if (static_cast<int>(vals.size()) != dim_ || dim_ == 0)
            throw BadConfig(path.string() + ":" + std::to_string(lineno) + ": inconsistent vector width");
        table_[line.substr(0, tab)] = Eigen::Map<Eigen::VectorXd>(vals.data(), dim_);
    }
    if (dim_ == 0) throw BadConfig("no token vectors in " + path.string());
}

Eigen::VectorXd FileEmbedder::embed_token(std::string_view token) const {
    auto it = table_.find(std::string(token));
    return it == table_.end() ? Eigen::VectorXd::Zero(dim_) : it->second;
}

nlohmann::json FileEmbedder::config() const { return {{"kind", "file"}, {"path", path_.string()}}; }

std::unique_ptr<Embedder> make_embedder(const nlohmann::json& config) {
    auto kind = config.value("kind", std::string("hash"));
    if (kind == "hash") return std::make_unique<HashEmbedder>(config.value("dim", 64), config.value("seed", std::uint64_t{0}));
    if (kind == "file") return std::make_unique<FileEmbedder>(config.at("path").get<std::string>());
    throw BadConfig("unknown embedder kind '" + kind + "'");
}

Eigen::VectorXd embed_node(const std::vector<std::string>& tokens, const Embedder& e) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(e.dim());
    if (tokens.empty()) return sum;
    for (const auto& t : tokens) sum += e.embed_token(t);
    return sum / static_cast<double>(tokens.size());
}

EdgeCode embed_edge(cpg::Version version, cpg::EdgeType type) {
    EdgeCode c = EdgeCode::Zero();
    c[0] = version != cpg::Version::current ? 1.0 : 0.0;
    c[1] = version != cpg::Version::previous ? 1.0 : 0.0;
    switch (type) {
        case cpg::EdgeType::CDG: c[2] = 1; break;
        case cpg::EdgeType::DDG: c[3] = 1; break;
        case cpg::EdgeType::AST: c[4] = 1; break;
    }
    return c;
}

EmbeddedGraph embed_graph(const cpg::MergedCpg& g, const Embedder& e, std::string commit_id, std::optional<int> label) {
    if (g.nodes.empty()) throw EmptyGraph("graph has no nodes");
    std::vector<const cpg::CpgNode*> order;
    for (const auto& n : g.nodes) order.push_back(&n);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
    std::unordered_map<int, int> row;

    EmbeddedGraph out;
    out.commit_id = std::move(commit_id);
    out.label = label;
    out.node_features.resize(static_cast<Eigen::Index>(order.size()), e.dim());
    for (std::size_t i = 0; i < order.size(); ++i) {
        row[order[i]->id] = static_cast<int>(i);
        out.node_features.row(static_cast<Eigen::Index>(i)) = embed_node(tokenize_code(order[i]->code), e).transpose();
    }
    out.edge_attr.resize(static_cast<Eigen::Index>(2 * g.edges.size()), edge_attr_dim);
    Eigen::Index k = 0;
    for (const auto& ed : g.edges) {
        int s = row.at(ed.src), d = row.at(ed.dst);
        const EdgeCode code = embed_edge(ed.version, ed.type);
        out.edge_index.emplace_back(s, d);
        out.edge_attr.row(k++) = code.transpose();
        out.edge_index.emplace_back(d, s);
        out.edge_attr.row(k++) = code.transpose();
    }
    return out;
}

nlohmann::json to_json(const EmbeddedGraph& g) {
    nlohmann::json nodes = nlohmann::json::array(), index = nlohmann::json::array(), attr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < g.node_features.rows(); ++i) {
        std::vector<double> r(g.node_features.row(i).begin(), g.node_features.row(i).end());
        nodes.push_back(r);
    }
    for (auto [s, d] : g.edge_index) index.push_back({s, d});
    for (Eigen::Index i = 0; i < g.edge_attr.rows(); ++i) {
        std::vector<int> r;
        for (Eigen::Index c = 0; c < g.edge_attr.cols(); ++c) r.push_back(static_cast<int>(g.edge_attr(i, c)));
        attr.push_back(r);
    }
    return {{"format_version", 1},
            {"commit_id", g.commit_id},
            {"label", g.label ? nlohmann::json(*g.label) : nlohmann::json(nullptr)},
            {"nodes", nodes},
            {"edge_index", index},
            {"edge_attr", attr}};
}

EmbeddedGraph embedded_graph_from_json(const nlohmann::json& j) {
    EmbeddedGraph g;
    g.commit_id = j.value("commit_id", std::string());
    if (j.contains("label") && !j["label"].is_null()) g.label = j["label"].get<int>();
    const auto& nodes = j.at("nodes");
    Eigen::Index n = static_cast<Eigen::Index>(nodes.size());
    Eigen::Index d = n ? static_cast<Eigen::Index>(nodes[0].size()) : 0;
    g.node_features.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(i)].size()) != d) throw ShapeMismatch("ragged node matrix");
        for (Eigen::Index c = 0; c < d; ++c) g.node_features(i, c) = nodes[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
    }
    for (const auto& e : j.at("edge_index")) g.edge_index.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    const auto& attr = j.at("edge_attr");
    if (attr.size() != g.edge_index.size()) throw ShapeMismatch("edge_attr and edge_index lengths differ");
    g.edge_attr.resize(static_cast<Eigen::Index>(attr.size()), edge_attr_dim);
    for (std::size_t i = 0; i < attr.size(); ++i)
        for (int c = 0; c < edge_attr_dim; ++c) g.edge_attr(static_cast<Eigen::Index>(i), c) = attr[i].at(static_cast<std::size_t>(c)).get<double>();
    return g;
}

}  // namespace scopy::embed
