#pragma once

// Two-version merge of unit CPGs and bidirectional slicing around the change.

#include "scopy/cpg.hpp"
#include "scopy/ingest.hpp"

#include <map>
#include <set>
#include <utility>
#include <vector>

#include <json.hpp>

namespace scopy::cpg {

struct MergedCpg {
    std::vector<CpgNode> nodes;  // sorted by id
    std::vector<CpgEdge> edges;
    std::vector<RelevantUnit> units;

    const CpgNode* find(int id) const;
};

struct SliceCriteria {
    std::vector<int> deleted;  // previous-version node ids
    std::vector<int> added;    // current-version node ids
};

struct CommitCpg : MergedCpg {
    SliceCriteria criteria;
    std::set<int> backward;  // reached backward from deleted nodes, seeds excluded
    std::set<int> forward;   // reached forward from added nodes, seeds excluded
};

using Alignment = std::vector<std::pair<int, int>>;  // (pre id, post id)

/// Pairs nodes whose spans are unchanged and map exactly onto each other
/// through `line_map` (pre line -> post line). The two synthetic module roots
/// always pair.
Alignment align(const Cpg& pre, const Cpg& post, const std::map<int, int>& line_map);

/// Pre nodes keep their ids; unaligned post nodes are appended after them.
/// Throws AlignmentConflict when a node appears in two pairs.
MergedCpg merge(const Cpg& pre, const Cpg& post, const Alignment& alignment);

struct SliceOptions {
    /// Also slice forward from deleted statements. Off by default.
    bool forward_from_deleted = false;
};

/// Keeps changed nodes plus their backward (deleted) and forward (added)
/// closures over CDG and DDG edges, with every edge among kept nodes. Node ids
/// are preserved, so slicing a slice is a no-op. Throws NoChange.
CommitCpg slice(const MergedCpg& g, const SliceOptions& opts = {});

/// Runs unit selection, per-version CPGs, merge and slice for every relevant
/// unit of every file and returns their disjoint union with ids renumbered
/// from 0. Units whose changes touch no statement are dropped; NoChange if
/// nothing is left. Propagates SyntaxError.
CommitCpg build_commit_cpg(const ingest::CommitBundle& bundle, const SliceOptions& opts = {});

/// Merge-only variant of build_commit_cpg (no slicing).
MergedCpg build_merged_cpg(const ingest::CommitBundle& bundle);

nlohmann::json to_json(const MergedCpg& g);
nlohmann::json to_json(const CommitCpg& g);
CommitCpg commit_cpg_from_json(const nlohmann::json& j);

struct GraphSummary {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t previous_nodes = 0;
    std::size_t current_nodes = 0;
};

GraphSummary summarize(const MergedCpg& g);

}  // namespace scopy::cpg
