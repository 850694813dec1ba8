#pragma once

// The three collection paths (CVE-linked base, keyword pilot, model-scored
// augmentation) and the per-commit graph path they share.

#include "scopy/commit_cpg.hpp"
#include "scopy/embed.hpp"
#include "scopy/ingest.hpp"
#include "scopy/keywords.hpp"
#include "scopy/model.hpp"
#include "scopy/patterns.hpp"
#include "scopy/store.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace scopy::pipeline {

struct RunOptions {
    ingest::SourceFilter filter;
    patterns::SecureApiTable apis = patterns::default_secure_apis();
    std::size_t workers = 4;
    std::optional<double> threshold;  // overrides the checkpoint's threshold
};

struct RunReport {
    std::string stage;
    std::size_t processed = 0;
    std::size_t enqueued = 0;
    std::size_t already_stored = 0;
    std::size_t filtered_out = 0;  // no keyword match, or score below threshold
    std::vector<store::SkipEntry> skipped;
};

nlohmann::json to_json(const RunReport& r);

/// `$SCOPY_DATA_DIR`, or ./data when unset.
std::filesystem::path default_data_dir();

/// Runs fn(0..n-1) on at most `workers` threads. Exceptions escape from the
/// first failing index after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Drops non-source files. Throws NoSourceFiles when nothing is left.
ingest::CommitBundle source_only(ingest::CommitBundle b, const ingest::SourceFilter& filter);

struct GraphResult {
    cpg::CommitCpg graph;
    embed::EmbeddedGraph embedded;
};

/// Source filter, two-version CPG, merge, slice and embedding. Throws
/// NoSourceFiles, NoChange, SyntaxError, AlignmentConflict, EmptyGraph.
GraphResult graph_path(const ingest::CommitBundle& bundle, const embed::Embedder& e, const ingest::SourceFilter& filter,
                       std::optional<int> label = std::nullopt);

store::GraphCounts counts_of(const cpg::MergedCpg& g);

struct ReferenceRow {
    std::string cve;
    std::string url;
    std::optional<std::string> cwe;
};

/// `CVE<TAB>URL[<TAB>CWE]`; blank and '#' lines skipped. Throws NotFound, BadConfig.
std::vector<ReferenceRow> load_references(const std::filesystem::path& path);

/// Fetches each referenced commit; stores it with origin base.
RunReport run_base(store::Store& s, const std::vector<ReferenceRow>& refs, const ingest::CommitSource& source,
                   const RunOptions& opts = {});

/// Commits under `<commit_root>/commits/` whose message matches a keyword.
RunReport run_pilot(store::Store& s, const std::filesystem::path& commit_root, const keywords::KeywordSet& ks,
                    const RunOptions& opts = {});

/// Commits under `<commit_root>/commits/` scored at or above the threshold.
RunReport run_augmented(store::Store& s, const std::filesystem::path& commit_root, const model::Checkpoint& ckpt,
                        const RunOptions& opts = {});

struct LabeledCommit {
    ingest::CommitBundle bundle;
    int label = 0;  // 1 security
};

struct TrainResult {
    model::Checkpoint checkpoint;
    std::vector<store::SkipEntry> skipped;
    std::size_t used = 0;
};

/// Builds graphs for every usable commit and trains from `cfg.seed`.
TrainResult train_on_commits(const std::vector<LabeledCommit>& data, const model::ModelConfig& cfg,
                             const nlohmann::json& embedder_config, const RunOptions& opts = {});

/// Probability from a checkpoint for one commit. Throws like graph_path.
model::Prediction score_commit(const ingest::CommitBundle& bundle, const model::Checkpoint& ckpt, const embed::Embedder& e,
                               const RunOptions& opts = {});

/// `commit_id<TAB>security|non_security` lines resolved against one or more
/// commit roots. Throws NotFound, BadConfig.
std::vector<LabeledCommit> load_labeled_commits(const std::filesystem::path& labels,
                                                const std::vector<std::filesystem::path>& commit_roots);

/// Finalized records of a store that carry a bundle.
std::vector<LabeledCommit> labeled_from_store(const store::Store& s);

}  // namespace scopy::pipeline
