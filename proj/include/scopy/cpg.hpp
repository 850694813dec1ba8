#pragma once

// Statement-level code property graphs for one analysis unit of one version.

#include "scopy/ingest.hpp"
#include "scopy/pysyntax.hpp"

#include <compare>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace scopy::cpg {

using ingest::LineRange;
using ingest::RelevantUnit;

enum class Version : std::uint8_t { previous, current, unchanged };
enum class EdgeType : std::uint8_t { AST, CDG, DDG };

std::string_view to_string(Version v);
std::string_view to_string(EdgeType t);
Version version_from_string(std::string_view s);
EdgeType edge_type_from_string(std::string_view s);

struct CpgNode {
    int id = 0;
    std::string func_name;
    std::string file_name;
    Version version = Version::previous;
    std::string code;
    LineRange line_span;  // empty only for the synthetic "<module>" root

    bool operator==(const CpgNode&) const = default;
};

struct CpgEdge {
    int src = 0;
    int dst = 0;
    EdgeType type = EdgeType::AST;
    Version version = Version::previous;

    auto operator<=>(const CpgEdge&) const = default;
};

struct Cpg {
    std::vector<CpgNode> nodes;  // index == id
    std::vector<CpgEdge> edges;
    RelevantUnit unit;
};

/// One statement of a unit, flattened in source (pre-)order.
struct TreeNode {
    py::StmtKind kind = py::StmtKind::simple;
    std::string code;
    LineRange span;
    std::vector<py::Token> tokens;
    int parent = -1;
    int depth = 0;
    std::vector<int> children;  // body statements, then clauses
    bool synthetic_root = false;
};

/// The statement tree of one unit; index 0 is the root (def header or the
/// synthetic module node).
struct UnitTree {
    std::string unit_name;
    std::vector<TreeNode> nodes;
};

/// Builds the statement tree for `unit` in the given version. Returns an empty
/// tree when the unit does not exist in that version. Throws SyntaxError.
UnitTree parse_statements(std::string_view source, const RelevantUnit& unit, Version version);

/// Statements that control whether a construct's body executes.
bool is_controlling(py::StmtKind k);

struct ControlFlow {
    std::vector<std::vector<int>> succ;
    std::set<std::pair<int, int>> back_edges;  // loop-closing edges (body -> loop header)
};

/// Intra-unit statement-level control flow.
///
/// Exceptions: every statement lexically inside a try body may transfer to
/// each of that try's except headers; an except header falls through to the
/// next one when its type does not match. `raise` jumps to the innermost
/// enclosing handlers, or to the unit exit. `return`/`break`/`continue` jump
/// directly and do not pass through `finally` bodies. A nested def or class
/// header flows both to the next statement and into its own body, so that the
/// body sees definitions reaching the header.
ControlFlow control_flow(const UnitTree& tree);

/// Edge from the nearest enclosing controlling header to every statement
/// below it. Function bodies are not controlled by their definition site.
std::vector<CpgEdge> control_dependences(const UnitTree& tree);

/// Names defined and read by one statement.
struct DefUse {
    std::set<std::string> defs;
    std::set<std::string> uses;
    /// Reads evaluated once on loop entry (the iterable of a for header).
    std::set<std::string> entry_uses;
};

DefUse def_use(const TreeNode& node);

/// Reaching definitions over `flow`; one DDG edge per (definition site,
/// reading site) pair. Self edges are not emitted.
std::vector<CpgEdge> data_dependences(const UnitTree& tree, const ControlFlow& flow);

/// AST + CDG + DDG for the unit in one version. Node ids follow source order.
Cpg build_cpg(std::string_view source, const RelevantUnit& unit, std::string_view file_name, Version version);

nlohmann::json node_to_json(const CpgNode& n);
nlohmann::json edge_to_json(const CpgEdge& e);
CpgNode node_from_json(const nlohmann::json& j);
CpgEdge edge_from_json(const nlohmann::json& j);

inline constexpr int graph_format_version = 1;

/// `{format_version, nodes:[{id,func,file,version,code,span}], edges:[{src,dst,type,version}]}`
nlohmann::json to_json(const Cpg& g);

}  // namespace scopy::cpg
