#pragma once

// Numeric node and edge features for CommitCPGs.

#include "scopy/commit_cpg.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace scopy::embed {

/// Identifier, number, operator and string tokens; identifiers are split on
/// underscores and case changes; everything lowercased. Empty code gives
/// {"<empty>"}.
std::vector<std::string> tokenize_code(std::string_view code);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual int dim() const = 0;
    virtual Eigen::VectorXd embed_token(std::string_view token) const = 0;
    /// Enough to rebuild an equivalent embedder with make_embedder.
    virtual nlohmann::json config() const = 0;
};

/// Two seeded hashes per token, each adding ±1 to one bucket, then L2 normalization.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(int dim = 64, std::uint64_t seed = 0);
    int dim() const override { return dim_; }
    Eigen::VectorXd embed_token(std::string_view token) const override;
    nlohmann::json config() const override;

private:
    int dim_;
    std::uint64_t seed_;
};

/// Vectors read from `token<TAB>v1,...,vd` lines. Unknown tokens map to zero.
class FileEmbedder final : public Embedder {
public:
    explicit FileEmbedder(const std::filesystem::path& path);
    int dim() const override { return dim_; }
    Eigen::VectorXd embed_token(std::string_view token) const override;
    nlohmann::json config() const override;

private:
    std::filesystem::path path_;
    int dim_ = 0;
    std::unordered_map<std::string, Eigen::VectorXd> table_;
};

/// `{"kind":"hash","dim":64,"seed":0}` or `{"kind":"file","path":...}`. Throws BadConfig.
std::unique_ptr<Embedder> make_embedder(const nlohmann::json& config);

/// Mean of the token vectors.
Eigen::VectorXd embed_node(const std::vector<std::string>& tokens, const Embedder& e);

inline constexpr int edge_attr_dim = 5;
using EdgeCode = Eigen::Matrix<double, edge_attr_dim, 1>;

/// (in previous, in current, CDG, DDG, AST).
EdgeCode embed_edge(cpg::Version version, cpg::EdgeType type);

template <class Scalar>
struct BasicEmbeddedGraph {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Matrix node_features;  // N x d, row i is the i-th smallest node id
    std::vector<std::pair<int, int>> edge_index;
    Matrix edge_attr;  // E x 5
    std::optional<int> label;  // 1 security, 0 non-security
    std::string commit_id;

    int num_nodes() const { return static_cast<int>(node_features.rows()); }
    int num_edges() const { return static_cast<int>(edge_index.size()); }

    template <class Other>
    BasicEmbeddedGraph<Other> cast() const {
        return {node_features.template cast<Other>(), edge_index, edge_attr.template cast<Other>(), label, commit_id};
    }
};

using EmbeddedGraph = BasicEmbeddedGraph<double>;

/// Every directed edge is emitted in both directions with the same attributes.
/// Throws EmptyGraph.
EmbeddedGraph embed_graph(const cpg::MergedCpg& g, const Embedder& e, std::string commit_id = {},
                          std::optional<int> label = std::nullopt);

nlohmann::json to_json(const EmbeddedGraph& g);
EmbeddedGraph embedded_graph_from_json(const nlohmann::json& j);

}  // namespace scopy::embed
