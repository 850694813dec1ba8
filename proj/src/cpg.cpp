#include "scopy/cpg.hpp"

#include "scopy/errors.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace scopy::cpg {

using py::Statement;
using py::StmtKind;

std::string_view to_string(Version v) {
    switch (v) {
        case Version::previous: return "previous";
        case Version::current: return "current";
        case Version::unchanged: return "unchanged";
    }
    return "previous";
}

std::string_view to_string(EdgeType t) {
    switch (t) {
        case EdgeType::AST: return "AST";
        case EdgeType::CDG: return "CDG";
        case EdgeType::DDG: return "DDG";
    }
    return "AST";
}

Version version_from_string(std::string_view s) {
    if (s == "previous") return Version::previous;
    if (s == "current") return Version::current;
    if (s == "unchanged") return Version::unchanged;
    throw BadConfig("unknown version '" + std::string(s) + "'");
}

EdgeType edge_type_from_string(std::string_view s) {
    if (s == "AST") return EdgeType::AST;
    if (s == "CDG") return EdgeType::CDG;
    if (s == "DDG") return EdgeType::DDG;
    throw BadConfig("unknown edge type '" + std::string(s) + "'");
}

namespace {

void flatten(const Statement& s, int parent, int depth, UnitTree& tree,
             const std::function<bool(const Statement&)>& keep) {
    int id = static_cast<int>(tree.nodes.size());
    TreeNode n;
    n.kind = s.kind;
    n.code = s.code;
    n.span = s.span;
    n.tokens = s.tokens;
    n.parent = parent;
    n.depth = depth;
    tree.nodes.push_back(std::move(n));
    if (parent >= 0) tree.nodes[static_cast<std::size_t>(parent)].children.push_back(id);
    for (const auto& c : s.children)
        if (keep(c)) flatten(c, id, depth + 1, tree, keep);
}

const Statement* find_unit(const Statement& module, const std::string& name, LineRange span) {
    auto units = py::function_units(module);
    for (const auto& u : units)
        if (u.name == name && u.extent == span) return u.stmt;
    for (const auto& u : units)
        if (u.name == name && !(u.extent.last < span.first || span.last < u.extent.first)) return u.stmt;
    return nullptr;
}

}  // namespace

UnitTree parse_statements(std::string_view source, const RelevantUnit& unit, Version version) {
    UnitTree tree;
    tree.unit_name = unit.unit_name;
    LineRange span = version == Version::current ? unit.post_span : unit.pre_span;
    if (span.empty()) return tree;

    auto module = py::parse_module(source);
    if (unit.unit_name == ingest::module_unit_name) {
        auto members = py::module_members(module);
        TreeNode root;
        root.kind = StmtKind::module;
        root.code = std::string(ingest::module_unit_name);
        root.synthetic_root = true;
        tree.nodes.push_back(std::move(root));
        auto keep = [&](const Statement& s) { return members.contains(&s); };
        for (const auto* s : members.top) flatten(*s, 0, 1, tree, keep);
        return tree;
    }
    const Statement* def = find_unit(module, unit.unit_name, span);
    if (!def) return tree;
    flatten(*def, -1, 0, tree, [](const Statement&) { return true; });
    return tree;
}

bool is_controlling(StmtKind k) {
    switch (k) {
        case StmtKind::if_:
        case StmtKind::elif_:
        case StmtKind::else_:
        case StmtKind::while_:
        case StmtKind::for_:
        case StmtKind::try_:
        case StmtKind::except_:
        case StmtKind::match_:
        case StmtKind::case_:
            return true;
        default:
            return false;
    }
}

std::vector<CpgEdge> control_dependences(const UnitTree& tree) {
    std::vector<CpgEdge> out;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        int p = tree.nodes[i].parent;
        while (p >= 0) {
            const auto& pn = tree.nodes[static_cast<std::size_t>(p)];
            if (pn.kind == StmtKind::def_ || pn.kind == StmtKind::class_) break;
            if (is_controlling(pn.kind)) {
                out.push_back({p, static_cast<int>(i), EdgeType::CDG, Version::previous});
                break;
            }
            p = pn.parent;
        }
    }
    return out;
}

namespace {

constexpr int kExit = -1;

struct FlowBuilder {
    const UnitTree& tree;
    ControlFlow flow;

    struct Context {
        std::vector<int> handlers;  // where an exception raised here may go
        int loop_header = kExit;
        int loop_follow = kExit;
    };

    explicit FlowBuilder(const UnitTree& t) : tree(t) { flow.succ.resize(t.nodes.size()); }

    const TreeNode& node(int i) const { return tree.nodes[static_cast<std::size_t>(i)]; }

    void edge(int from, int to) {
        if (to == kExit) return;
        auto& s = flow.succ[static_cast<std::size_t>(from)];
        if (std::find(s.begin(), s.end(), to) == s.end()) s.push_back(to);
    }

    // Splits a compound statement's children into its body and trailing clauses.
    std::pair<std::vector<int>, std::vector<int>> body_and_clauses(int i) const {
        std::vector<int> body, clauses;
        for (int c : node(i).children) {
            auto k = node(c).kind;
            if (py::is_clause(k)) clauses.push_back(c);
            else body.push_back(c);
        }
        return {body, clauses};
    }

    // Wires a statement sequence; returns its entry (or `follow` when empty).
    int sequence(const std::vector<int>& stmts, int follow, const Context& ctx) {
        int next = follow;
        for (auto it = stmts.rbegin(); it != stmts.rend(); ++it) {
            statement(*it, next, ctx);
            next = *it;
        }
        return next;
    }

    static bool starts_with(const TreeNode& n, std::string_view kw) {
        return !n.tokens.empty() && n.tokens.front().is_name(kw);
    }

    void statement(int i, int follow, const Context& ctx) {
        const auto& n = node(i);
        for (int h : ctx.handlers) edge(i, h);

        switch (n.kind) {
            case StmtKind::simple:
                if (starts_with(n, "return")) return;
                if (starts_with(n, "raise")) return;  // handler edges already added
                if (starts_with(n, "break")) {
                    edge(i, ctx.loop_follow);
                    return;
                }
                if (starts_with(n, "continue")) {
                    edge(i, ctx.loop_header);
                    return;
                }
                edge(i, follow);
                return;

            case StmtKind::if_:
            case StmtKind::elif_: {
                auto [body, clauses] = body_and_clauses(i);
                edge(i, sequence(body, follow, ctx));
                if (clauses.empty()) edge(i, follow);
                else {
                    statement(clauses.front(), follow, ctx);
                    edge(i, clauses.front());
                }
                return;
            }
            case StmtKind::else_:
            case StmtKind::finally_:
            case StmtKind::with_: {
                auto [body, clauses] = body_and_clauses(i);
                edge(i, sequence(body, follow, ctx));
                return;
            }
            case StmtKind::while_:
            case StmtKind::for_: {
                auto [body, clauses] = body_and_clauses(i);
                int exit_to = follow;
                if (!clauses.empty()) {
                    statement(clauses.front(), follow, ctx);
                    exit_to = clauses.front();
                }
                Context inner = ctx;
                inner.loop_header = i;
                inner.loop_follow = follow;
                edge(i, sequence(body, i, inner));
                edge(i, exit_to);
                return;
            }
            case StmtKind::try_: {
                auto [body, clauses] = body_and_clauses(i);
                std::vector<int> excepts;
                int else_clause = kExit, finally_clause = kExit;
                for (int c : clauses) {
                    if (node(c).kind == StmtKind::except_) excepts.push_back(c);
                    else if (node(c).kind == StmtKind::else_) else_clause = c;
                    else finally_clause = c;
                }
                int after = follow;
                if (finally_clause != kExit) {
                    statement(finally_clause, follow, ctx);
                    after = finally_clause;
                }
                if (else_clause != kExit) statement(else_clause, after, ctx);
                for (std::size_t e = 0; e < excepts.size(); ++e) {
                    auto [ebody, eclauses] = body_and_clauses(excepts[e]);
                    for (int h : ctx.handlers) edge(excepts[e], h);
                    edge(excepts[e], sequence(ebody, after, ctx));
                    if (e + 1 < excepts.size()) edge(excepts[e], excepts[e + 1]);
                    else if (finally_clause != kExit) edge(excepts[e], finally_clause);
                    else for (int h : ctx.handlers) edge(excepts[e], h);
                }
                // The header edge covers a failure in the first body statement
                // before it defines anything.
                for (int h : excepts) edge(i, h);
                Context inner = ctx;
                inner.handlers = excepts;
                if (excepts.empty() && finally_clause != kExit) inner.handlers = {finally_clause};
                edge(i, sequence(body, else_clause != kExit ? else_clause : after, inner));
                return;
            }
            case StmtKind::match_: {
                auto& cases = n.children;
                for (std::size_t c = 0; c < cases.size(); ++c) {
                    int next_case = c + 1 < cases.size() ? cases[c + 1] : follow;
                    auto [cbody, _] = body_and_clauses(cases[c]);
                    for (int h : ctx.handlers) edge(cases[c], h);
                    edge(cases[c], sequence(cbody, follow, ctx));
                    edge(cases[c], next_case);
                }
                edge(i, cases.empty() ? follow : cases.front());
                return;
            }
            case StmtKind::def_: {
                auto [body, clauses] = body_and_clauses(i);
                edge(i, follow);
                edge(i, sequence(body, kExit, Context{}));
                return;
            }
            case StmtKind::class_: {
                auto [body, clauses] = body_and_clauses(i);
                edge(i, sequence(body, follow, ctx));
                return;
            }
            default:
                edge(i, follow);
                return;
        }
    }

    ControlFlow build() {
        if (tree.nodes.empty()) return flow;
        const auto& root = node(0);
        auto [body, clauses] = body_and_clauses(0);
        edge(0, sequence(body, kExit, Context{}));
        (void)root;

        for (std::size_t u = 0; u < flow.succ.size(); ++u) {
            for (int v : flow.succ[u]) {
                auto k = node(v).kind;
                if (k != StmtKind::while_ && k != StmtKind::for_) continue;
                for (int p = tree.nodes[u].parent; p >= 0; p = node(p).parent) {
                    if (p == v) {
                        flow.back_edges.insert({static_cast<int>(u), v});
                        break;
                    }
                }
            }
        }
        return flow;
    }
};

}  // namespace

ControlFlow control_flow(const UnitTree& tree) { return FlowBuilder(tree).build(); }

std::vector<CpgEdge> data_dependences(const UnitTree& tree, const ControlFlow& flow) {
    const std::size_t n = tree.nodes.size();
    std::vector<DefUse> du(n);
    for (std::size_t i = 0; i < n; ++i) du[i] = def_use(tree.nodes[i]);

    std::vector<std::vector<int>> preds(n);
    for (std::size_t u = 0; u < n; ++u)
        for (int v : flow.succ[u]) preds[static_cast<std::size_t>(v)].push_back(static_cast<int>(u));

    // A definition is (variable, site).
    using Defs = std::set<std::pair<std::string, int>>;
    std::vector<Defs> in(n), out(n);
    auto transfer = [&](std::size_t i, const Defs& input) {
        Defs o;
        for (const auto& d : input)
            if (!du[i].defs.count(d.first)) o.insert(d);
        for (const auto& v : du[i].defs) o.insert({v, static_cast<int>(i)});
        return o;
    };

    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            Defs input;
            for (int p : preds[i]) input.insert(out[static_cast<std::size_t>(p)].begin(), out[static_cast<std::size_t>(p)].end());
            Defs o = transfer(i, input);
            if (input != in[i] || o != out[i]) {
                in[i] = std::move(input);
                out[i] = std::move(o);
                changed = true;
            }
        }
    }

    std::set<std::pair<int, int>> edges;
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& d : in[i])
            if (du[i].uses.count(d.first)) edges.insert({d.second, static_cast<int>(i)});
        if (du[i].entry_uses.empty()) continue;
        for (int p : preds[i]) {
            if (flow.back_edges.count({p, static_cast<int>(i)})) continue;
            for (const auto& d : out[static_cast<std::size_t>(p)])
                if (du[i].entry_uses.count(d.first)) edges.insert({d.second, static_cast<int>(i)});
        }
    }
    std::vector<CpgEdge> result;
    for (auto [s, t] : edges)
        if (s != t) result.push_back({s, t, EdgeType::DDG, Version::previous});
    return result;
}

Cpg build_cpg(std::string_view source, const RelevantUnit& unit, std::string_view file_name, Version version) {
    Cpg g;
    g.unit = unit;
    auto tree = parse_statements(source, unit, version);
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const auto& t = tree.nodes[i];
        g.nodes.push_back({static_cast<int>(i), unit.unit_name, std::string(file_name), version, t.code, t.span});
    }
    for (std::size_t i = 0; i < tree.nodes.size(); ++i)
        if (tree.nodes[i].parent >= 0)
            g.edges.push_back({tree.nodes[i].parent, static_cast<int>(i), EdgeType::AST, version});
    for (auto e : control_dependences(tree)) {
        e.version = version;
        g.edges.push_back(e);
    }
    for (auto e : data_dependences(tree, control_flow(tree))) {
        e.version = version;
        g.edges.push_back(e);
    }
    return g;
}

nlohmann::json node_to_json(const CpgNode& n) {
    return {{"id", n.id},
            {"func", n.func_name},
            {"file", n.file_name},
            {"version", to_string(n.version)},
            {"code", n.code},
            {"span", {n.line_span.first, n.line_span.last}}};
}

nlohmann::json edge_to_json(const CpgEdge& e) {
    return {{"src", e.src}, {"dst", e.dst}, {"type", to_string(e.type)}, {"version", to_string(e.version)}};
}

CpgNode node_from_json(const nlohmann::json& j) {
    CpgNode n;
    n.id = j.at("id").get<int>();
    n.func_name = j.at("func").get<std::string>();
    n.file_name = j.at("file").get<std::string>();
    n.version = version_from_string(j.at("version").get<std::string>());
    n.code = j.at("code").get<std::string>();
    n.line_span = {j.at("span").at(0).get<int>(), j.at("span").at(1).get<int>()};
    return n;
}

CpgEdge edge_from_json(const nlohmann::json& j) {
    return {j.at("src").get<int>(), j.at("dst").get<int>(), edge_type_from_string(j.at("type").get<std::string>()),
            version_from_string(j.at("version").get<std::string>())};
}

nlohmann::json to_json(const Cpg& g) {
    nlohmann::json nodes = nlohmann::json::array(), edges = nlohmann::json::array();
    for (const auto& n : g.nodes) nodes.push_back(node_to_json(n));
    for (const auto& e : g.edges) edges.push_back(edge_to_json(e));
    return {{"format_version", graph_format_version},
            {"unit", {{"file", g.unit.file}, {"name", g.unit.unit_name}}},
            {"nodes", nodes},
            {"edges", edges}};
}

}  // namespace scopy::cpg
