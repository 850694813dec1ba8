#pragma once

// Dataset store: candidate commits, annotator votes and consensus labels kept
// as line-delimited JSON tables under one directory.

#include "scopy/ingest.hpp"
#include "scopy/patterns.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace scopy::store {

enum class DatasetOrigin { base, pilot, augmented };
enum class VoteLabel { security, non_security, unsure };
enum class Verdict { security, non_security };
/// How a candidate entered the queue: CVE reference, keyword match or model score.
enum class CandidateSource { cve, keyword, model };
/// pending: no votes; voted: votes but no final consensus; consensus: finalized.
enum class Status { pending, voted, consensus };

std::string_view to_string(DatasetOrigin o);
std::string_view to_string(VoteLabel l);
std::string_view to_string(Verdict v);
std::string_view to_string(CandidateSource s);
std::string_view to_string(Status s);
DatasetOrigin origin_from_string(std::string_view s);
VoteLabel vote_label_from_string(std::string_view s);
CandidateSource source_from_string(std::string_view s);
Status status_from_string(std::string_view s);

CandidateSource source_of(DatasetOrigin o);

struct Vote {
    std::string annotator;
    VoteLabel label = VoteLabel::unsure;
    std::int64_t timestamp_ms = 0;

    bool operator==(const Vote&) const = default;
};

struct GraphCounts {
    std::size_t nodes = 0, edges = 0, previous_nodes = 0, current_nodes = 0;
    bool operator==(const GraphCounts&) const = default;
};

struct LabelRecord {
    std::string commit_id;  // owner__repo@hash
    DatasetOrigin origin = DatasetOrigin::base;
    std::vector<Vote> votes;  // log order, oldest first
    std::optional<Verdict> consensus;
    std::optional<double> model_score;
    std::vector<std::string> matched_keywords;
    std::optional<patterns::PatternLabel> pattern;
    std::optional<std::string> cwe;
    std::optional<ingest::CommitBundle> bundle;
    std::optional<GraphCounts> graph;

    /// "owner/repo" part of commit_id.
    std::string repo() const;
    Status status() const;

    bool operator==(const LabelRecord&) const;
};

/// Outcome of the voting rule over the latest vote of each registered annotator.
enum class ConsensusState { awaiting_votes, pending_adjudication, security, non_security };
std::string_view to_string(ConsensusState s);

/// security only on unanimous security; non_security only on unanimous
/// non_security; any unsure or disagreement is pending_adjudication. Votes by
/// unregistered annotators are ignored.
ConsensusState evaluate_votes(const std::vector<Vote>& votes, const std::vector<std::string>& annotators);

/// Latest vote of each annotator.
std::map<std::string, VoteLabel> final_votes(const std::vector<Vote>& votes);

struct ConsensusView {
    ConsensusState state;
    std::optional<Verdict> consensus;  // set once finalized
};

struct CandidateFilter {
    std::optional<DatasetOrigin> origin;
    std::optional<Status> status;
    std::optional<CandidateSource> source;
};

struct CompositionRow {
    DatasetOrigin origin;
    long candidates = 0, security = 0, non_security = 0, undecided = 0;
};

struct EfficiencyRow {
    CandidateSource source;
    long candidates = 0, verified = 0;
    double ratio = 0.0;  // verified / candidates, 0 when there are no candidates
};

/// Raw quotient; zero when candidates is zero.
double efficiency_ratio(long verified, long candidates);

struct DatasetStats {
    std::vector<CompositionRow> composition;  // base, pilot, augmented
    std::vector<EfficiencyRow> efficiency;    // cve, keyword, model
    std::array<long, 5> patterns{};           // consensus-security records by category
    std::vector<std::pair<std::string, long>> repos;  // by security count, descending
    std::vector<std::pair<std::string, long>> cwe;    // by count, descending
};

struct SkipEntry {
    std::string commit;  // commit id or reference text
    std::string stage;
    std::string reason;  // Error::code()
    std::string detail;

    bool operator==(const SkipEntry&) const = default;
};

struct StoreOptions {
    std::vector<std::string> annotators{"annotator1", "annotator2", "annotator3"};
};

/// Files: commits.jsonl, votes.jsonl, consensus.jsonl, skipped.jsonl and
/// annotators.json. Mutations are serialized; reads run concurrently.
class Store {
public:
    /// Creates the directory if needed. Annotators from an existing
    /// annotators.json take precedence over `opts`.
    explicit Store(std::filesystem::path dir, StoreOptions opts = {});

    const std::filesystem::path& dir() const { return dir_; }

    std::vector<std::string> annotators() const;
    /// Returns false if already registered.
    bool register_annotator(const std::string& name);

    /// Inserts or replaces the candidate metadata. Votes and consensus in
    /// `r` are ignored; they only change through record_vote and finalize.
    void put_record(const LabelRecord& r);
    /// Inserts only if absent. Returns false when the commit is already stored.
    bool add_candidate(const LabelRecord& r);
    bool contains(const std::string& commit_id) const;
    /// Throws NotFound.
    LabelRecord get_record(const std::string& commit_id) const;
    /// Sorted by commit id.
    std::vector<LabelRecord> list_candidates(const CandidateFilter& f = {}) const;
    std::size_t size() const;

    /// Appends a vote. With `finalize_when_decisive` a unanimous outcome is
    /// written as consensus in the same step. `expected_votes` is the vote-log
    /// length the caller last saw; a mismatch throws ConflictingWrite, as does
    /// voting on a finalized record. Throws NotFound, UnknownAnnotator.
    LabelRecord record_vote(const std::string& commit_id, const std::string& annotator, VoteLabel label,
                            std::optional<std::size_t> expected_votes = std::nullopt,
                            bool finalize_when_decisive = true);

    /// Writes the consensus for a unanimous record. Throws ConflictingWrite if
    /// it was already finalized; returns nullopt when votes are not unanimous.
    std::optional<Verdict> finalize(const std::string& commit_id);

    ConsensusView consensus(const std::string& commit_id) const;

    void record_skip(const SkipEntry& s);
    std::vector<SkipEntry> skipped() const;

    DatasetStats stats(std::size_t top_repos = 5) const;

    /// Rewrites commits.jsonl with one line per commit (temp file + rename).
    void compact();

    /// One full record per line, sorted by commit id.
    void export_records(const std::filesystem::path& out) const;
    /// Loads records written by export_records. Metadata replaces same-id
    /// candidates; votes are appended to the existing log and an existing
    /// consensus is kept. Unknown annotators in the file get registered.
    std::size_t import_records(const std::filesystem::path& in);

private:
    void load();
    void append_line(const std::string& file, const nlohmann::json& j);
    void write_annotators();
    bool is_annotator(const std::string& name) const;

    std::filesystem::path dir_;
    mutable std::shared_mutex mu_;
    std::vector<std::string> annotators_;
    std::map<std::string, LabelRecord> records_;
    std::vector<SkipEntry> skipped_;
};

nlohmann::json to_json(const ingest::CommitBundle& b);
ingest::CommitBundle bundle_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LabelRecord& r);
LabelRecord label_record_from_json(const nlohmann::json& j);
/// Record without the bundle, as listed by the candidates endpoint.
nlohmann::json summary_json(const LabelRecord& r);
nlohmann::json to_json(const DatasetStats& s);
nlohmann::json to_json(const SkipEntry& s);

std::string composition_tsv(const DatasetStats& s);
std::string efficiency_tsv(const DatasetStats& s);

std::int64_t now_ms();

}  // namespace scopy::store
