#include "scopy/commit_cpg.hpp"

#include "scopy/errors.hpp"

#include <algorithm>
#include <deque>

namespace scopy::cpg {

const CpgNode* MergedCpg::find(int id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id, [](const CpgNode& n, int v) { return n.id < v; });
    return it != nodes.end() && it->id == id ? &*it : nullptr;
}

Alignment align(const Cpg& pre, const Cpg& post, const std::map<int, int>& line_map) {
    std::map<std::pair<int, int>, int> post_by_span;
    for (const auto& n : post.nodes) post_by_span[{n.line_span.first, n.line_span.last}] = n.id;

    Alignment out;
    for (const auto& a : pre.nodes) {
        if (a.line_span.empty()) {
            auto it = post_by_span.find({a.line_span.first, a.line_span.last});
            if (it != post_by_span.end() && post.nodes[static_cast<std::size_t>(it->second)].line_span.empty())
                out.emplace_back(a.id, it->second);
            continue;
        }
        auto first = line_map.find(a.line_span.first);
        if (first == line_map.end()) continue;
        bool exact = true;
        for (int l = a.line_span.first; l <= a.line_span.last && exact; ++l) {
            auto m = line_map.find(l);
            exact = m != line_map.end() && m->second == first->second + (l - a.line_span.first);
        }
        if (!exact) continue;
        auto it = post_by_span.find({first->second, first->second + (a.line_span.last - a.line_span.first)});
        if (it == post_by_span.end()) continue;
        if (post.nodes[static_cast<std::size_t>(it->second)].code != a.code) continue;
        out.emplace_back(a.id, it->second);
    }
    return out;
}

MergedCpg merge(const Cpg& pre, const Cpg& post, const Alignment& alignment) {
    std::map<int, int> pre_to_post, post_to_pre;
    for (auto [a, b] : alignment) {
        if (!pre_to_post.emplace(a, b).second || !post_to_pre.emplace(b, a).second)
            throw AlignmentConflict("node aligned twice (pre " + std::to_string(a) + ", post " + std::to_string(b) + ")");
    }

    MergedCpg g;
    g.units.push_back(pre.nodes.empty() ? post.unit : pre.unit);
    for (const auto& n : pre.nodes) {
        CpgNode m = n;
        m.version = pre_to_post.count(n.id) ? Version::unchanged : Version::previous;
        g.nodes.push_back(std::move(m));
    }
    std::map<int, int> post_id;
    int next = static_cast<int>(pre.nodes.size());
    for (const auto& n : post.nodes) {
        auto it = post_to_pre.find(n.id);
        if (it != post_to_pre.end()) {
            post_id[n.id] = it->second;
            continue;
        }
        CpgNode m = n;
        m.id = next++;
        m.version = Version::current;
        post_id[n.id] = m.id;
        g.nodes.push_back(std::move(m));
    }

    auto version_of = [&](int id) { return g.nodes[static_cast<std::size_t>(id)].version; };
    std::set<CpgEdge> seen;
    auto add = [&](CpgEdge e, Version side) {
        e.version = version_of(e.src) == Version::unchanged && version_of(e.dst) == Version::unchanged
                        ? Version::unchanged
                        : side;
        if (seen.insert(e).second) g.edges.push_back(e);
    };
    for (const auto& e : pre.edges) add(e, Version::previous);
    for (auto e : post.edges) {
        e.src = post_id.at(e.src);
        e.dst = post_id.at(e.dst);
        add(e, Version::current);
    }
    return g;
}

CommitCpg slice(const MergedCpg& g, const SliceOptions& opts) {
    CommitCpg out;
    out.units = g.units;
    for (const auto& n : g.nodes) {
        if (n.version == Version::previous) out.criteria.deleted.push_back(n.id);
        else if (n.version == Version::current) out.criteria.added.push_back(n.id);
    }
    if (out.criteria.deleted.empty() && out.criteria.added.empty()) throw NoChange("graph has no changed statement");

    std::map<int, std::vector<int>> succ, pred;
    for (const auto& e : g.edges) {
        if (e.type == EdgeType::AST) continue;
        succ[e.src].push_back(e.dst);
        pred[e.dst].push_back(e.src);
    }
    auto closure = [](const std::vector<int>& seeds, const std::map<int, std::vector<int>>& adj) {
        std::set<int> seen(seeds.begin(), seeds.end());
        std::deque<int> work(seeds.begin(), seeds.end());
        while (!work.empty()) {
            int v = work.front();
            work.pop_front();
            auto it = adj.find(v);
            if (it == adj.end()) continue;
            for (int w : it->second)
                if (seen.insert(w).second) work.push_back(w);
        }
        return seen;
    };

    std::set<int> changed(out.criteria.deleted.begin(), out.criteria.deleted.end());
    changed.insert(out.criteria.added.begin(), out.criteria.added.end());

    auto back = closure(out.criteria.deleted, pred);
    auto fwd_seeds = out.criteria.added;
    if (opts.forward_from_deleted) fwd_seeds.insert(fwd_seeds.end(), out.criteria.deleted.begin(), out.criteria.deleted.end());
    auto fwd = closure(fwd_seeds, succ);
    for (int v : back)
        if (!changed.count(v)) out.backward.insert(v);
    for (int v : fwd)
        if (!changed.count(v)) out.forward.insert(v);

    std::set<int> keep = changed;
    keep.insert(out.backward.begin(), out.backward.end());
    keep.insert(out.forward.begin(), out.forward.end());
    for (const auto& n : g.nodes)
        if (keep.count(n.id)) out.nodes.push_back(n);
    for (const auto& e : g.edges)
        if (keep.count(e.src) && keep.count(e.dst)) out.edges.push_back(e);
    return out;
}

namespace {

template <class G>
void append_shifted(G& into, const G& part) {
    std::map<int, int> ids;
    int next = static_cast<int>(into.nodes.size());
    for (const auto& n : part.nodes) {
        CpgNode m = n;
        ids[n.id] = m.id = next++;
        into.nodes.push_back(std::move(m));
    }
    for (auto e : part.edges) {
        e.src = ids.at(e.src);
        e.dst = ids.at(e.dst);
        into.edges.push_back(e);
    }
    into.units.insert(into.units.end(), part.units.begin(), part.units.end());
    if constexpr (std::is_same_v<G, CommitCpg>) {
        for (int v : part.criteria.deleted) into.criteria.deleted.push_back(ids.at(v));
        for (int v : part.criteria.added) into.criteria.added.push_back(ids.at(v));
        for (int v : part.backward) into.backward.insert(ids.at(v));
        for (int v : part.forward) into.forward.insert(ids.at(v));
    }
}

template <class F>
void for_each_unit(const ingest::CommitBundle& bundle, F&& f) {
    for (const auto& fc : bundle.files) {
        auto spans = py::discover_unit_spans(fc.pre_content, fc.post_content);
        auto units = ingest::select_relevant_units(fc, spans);
        if (units.empty()) continue;
        auto line_map = ingest::unchanged_line_map(fc);
        for (const auto& u : units) {
            auto pre = build_cpg(fc.pre_content, u, fc.path, Version::previous);
            auto post = build_cpg(fc.post_content, u, fc.path, Version::current);
            f(merge(pre, post, align(pre, post, line_map)));
        }
    }
}

}  // namespace

CommitCpg build_commit_cpg(const ingest::CommitBundle& bundle, const SliceOptions& opts) {
    CommitCpg out;
    for_each_unit(bundle, [&](const MergedCpg& m) {
        try {
            append_shifted(out, slice(m, opts));
        } catch (const NoChange&) {
        }
    });
    if (out.nodes.empty()) throw NoChange("no changed statement in " + bundle.commit_id());
    return out;
}

MergedCpg build_merged_cpg(const ingest::CommitBundle& bundle) {
    MergedCpg out;
    for_each_unit(bundle, [&](const MergedCpg& m) { append_shifted(out, m); });
    return out;
}

nlohmann::json to_json(const MergedCpg& g) {
    nlohmann::json nodes = nlohmann::json::array(), edges = nlohmann::json::array(), units = nlohmann::json::array();
    for (const auto& n : g.nodes) nodes.push_back(node_to_json(n));
    for (const auto& e : g.edges) edges.push_back(edge_to_json(e));
    for (const auto& u : g.units)
        units.push_back({{"file", u.file},
                         {"name", u.unit_name},
                         {"pre_span", {u.pre_span.first, u.pre_span.last}},
                         {"post_span", {u.post_span.first, u.post_span.last}}});
    return {{"format_version", graph_format_version}, {"units", units}, {"nodes", nodes}, {"edges", edges}};
}

nlohmann::json to_json(const CommitCpg& g) {
    auto j = to_json(static_cast<const MergedCpg&>(g));
    j["slice_criteria"] = {{"deleted", g.criteria.deleted}, {"added", g.criteria.added}};
    j["backward"] = g.backward;
    j["forward"] = g.forward;
    return j;
}

CommitCpg commit_cpg_from_json(const nlohmann::json& j) {
    if (j.value("format_version", 0) != graph_format_version) throw BadConfig("unsupported graph format version");
    CommitCpg g;
    for (const auto& n : j.at("nodes")) g.nodes.push_back(node_from_json(n));
    std::sort(g.nodes.begin(), g.nodes.end(), [](const CpgNode& a, const CpgNode& b) { return a.id < b.id; });
    for (const auto& e : j.at("edges")) g.edges.push_back(edge_from_json(e));
    if (j.contains("units"))
        for (const auto& u : j.at("units"))
            g.units.push_back({u.at("file").get<std::string>(), u.at("name").get<std::string>(),
                               {u.at("pre_span").at(0).get<int>(), u.at("pre_span").at(1).get<int>()},
                               {u.at("post_span").at(0).get<int>(), u.at("post_span").at(1).get<int>()}});
    if (j.contains("slice_criteria")) {
        g.criteria.deleted = j["slice_criteria"].at("deleted").get<std::vector<int>>();
        g.criteria.added = j["slice_criteria"].at("added").get<std::vector<int>>();
    }
    if (j.contains("backward")) g.backward = j["backward"].get<std::set<int>>();
    if (j.contains("forward")) g.forward = j["forward"].get<std::set<int>>();
    return g;
}

GraphSummary summarize(const MergedCpg& g) {
    GraphSummary s{g.nodes.size(), g.edges.size(), 0, 0};
    for (const auto& n : g.nodes) {
        if (n.version == Version::previous) ++s.previous_nodes;
        if (n.version == Version::current) ++s.current_nodes;
    }
    return s;
}

}  // namespace scopy::cpg
