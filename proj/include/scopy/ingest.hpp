#pragma once

// Commit ingestion: unified diffs, commit bundles, CVE reference URLs and
// commit sources.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace scopy::ingest {

/// Inclusive 1-based line range. `first == 0` marks an empty range.
struct LineRange {
    int first = 0;
    int last = 0;

    bool empty() const { return first <= 0 || last < first; }
    bool contains(int line) const { return !empty() && line >= first && line <= last; }
    bool operator==(const LineRange&) const = default;
};

enum class LineMarker : std::uint8_t { context, deleted, added };

struct HunkLine {
    LineMarker marker;
    std::string text;
    bool operator==(const HunkLine&) const = default;
};

struct Hunk {
    int pre_start = 0;
    int pre_len = 0;
    int post_start = 0;
    int post_len = 0;
    std::string section;  // text after the closing "@@", usually a function header
    std::vector<HunkLine> lines;
    bool pre_missing_newline = false;   // "\ No newline at end of file" after a pre-side line
    bool post_missing_newline = false;  // ... after a post-side line

    bool operator==(const Hunk&) const = default;
};

struct FileChange {
    std::string path;
    std::string pre_content;
    std::string post_content;
    std::vector<Hunk> hunks;
    bool added_file = false;
    bool deleted_file = false;

    bool operator==(const FileChange&) const = default;
};

enum class Origin : std::uint8_t { cve_linked, keyword_candidate, model_candidate, manual };

std::string_view to_string(Origin o);
Origin origin_from_string(std::string_view s);

struct CommitBundle {
    std::string repo_id;      // "owner/repo"
    std::string commit_hash;  // 40 hex chars or "local"
    std::string message;
    std::vector<FileChange> files;
    Origin origin = Origin::manual;

    /// Stable key used by the dataset store: "owner__repo@hash".
    std::string commit_id() const;
};

/// Parses a (possibly multi-file) unified diff. Pre/post contents are left
/// empty; see `bundle_from_diff`. Throws MalformedDiff.
std::vector<FileChange> parse_unified_diff(std::string_view text);

/// Inverse of parse_unified_diff for the hunk data of each file.
std::string render_unified_diff(const std::vector<FileChange>& files);

/// Applies `hunks` to `pre`, returning the post-image. Throws MalformedDiff if
/// a context or deleted line does not match `pre`.
std::string apply_hunks(std::string_view pre, const std::vector<Hunk>& hunks);

/// Splits into lines without terminators. A trailing newline does not start
/// an extra line.
std::vector<std::string> split_lines(std::string_view text);

struct ChangedLines {
    std::set<int> deleted;          // pre line numbers
    std::set<int> added;            // post line numbers
    std::map<int, int> context;     // pre -> post, hunk context lines only
};

ChangedLines changed_lines(const FileChange& fc);

/// Pre -> post map over every unchanged line of the file, including lines
/// outside any hunk. Needs `pre_content`.
std::map<int, int> unchanged_line_map(const FileChange& fc);

/// Span information for one code unit as found by the parser in each version.
/// Function units carry one range per version; the module unit carries one
/// range per top-level statement so that blank lines and comments between
/// statements never count as overlap.
struct UnitSpans {
    std::string name;
    std::vector<LineRange> pre;
    std::vector<LineRange> post;
};

struct RelevantUnit {
    std::string file;
    std::string unit_name;  // "<module>" for top-level statements
    LineRange pre_span;
    LineRange post_span;
    bool operator==(const RelevantUnit&) const = default;
};

inline constexpr std::string_view module_unit_name = "<module>";

std::vector<RelevantUnit> select_relevant_units(const FileChange& fc,
                                                const std::vector<UnitSpans>& units);

struct CommitRef {
    std::string owner;
    std::string repo;
    std::string hash;
    bool operator==(const CommitRef&) const = default;
};

/// Accepts https://github.com/{owner}/{repo}/commit/{hash} plus the usual
/// variants (http, www., trailing slash, .patch/.diff suffix, query or
/// fragment). Throws NotACommitUrl.
CommitRef parse_cve_reference(std::string_view url);

/// Options applied when turning raw file changes into an analyzable bundle.
struct SourceFilter {
    std::vector<std::string> extensions{".py"};
    std::vector<std::string> exclude_patterns;  // glob-style, matched against the path

    bool keep(std::string_view path) const;
};

/// Drops files rejected by `filter`, keeping order.
std::vector<FileChange> filter_sources(std::vector<FileChange> files, const SourceFilter& filter);

/// Where commits come from. Implementations must be safe to share between
/// worker threads.
class CommitSource {
public:
    virtual ~CommitSource() = default;
    virtual CommitBundle fetch(const CommitRef& ref) const = 0;
};

/// Reads `<data_dir>/commits/<owner>__<repo>/<hash>/{message.txt, pre/, post/, diff.patch}`.
class FixtureCommitSource final : public CommitSource {
public:
    explicit FixtureCommitSource(std::filesystem::path data_dir);
    CommitBundle fetch(const CommitRef& ref) const override;

    /// Every commit present under the fixture tree, sorted.
    std::vector<CommitRef> list() const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

/// Loads one commit directory in fixture layout (message.txt, pre/, post/, diff.patch).
CommitBundle load_commit_dir(const std::filesystem::path& dir, const CommitRef& ref);

/// Lists commit directories below `commits_root` (`<owner>__<repo>/<hash>`).
std::vector<CommitRef> list_commit_dirs(const std::filesystem::path& commits_root);

/// Fetches `GET {base}/commits/{owner}/{repo}/{hash}` returning
/// `{"message": str, "diff": str, "pre": {path: content}}`.
class HttpCommitSource final : public CommitSource {
public:
    explicit HttpCommitSource(std::string base_url);
    CommitBundle fetch(const CommitRef& ref) const override;

private:
    std::string base_url_;
};

inline CommitBundle fetch_commit(const CommitSource& source, const CommitRef& ref) {
    return source.fetch(ref);
}

/// HttpCommitSource when SCOPY_COMMIT_API_BASE is set, otherwise the fixture source.
std::unique_ptr<CommitSource> make_commit_source(const std::filesystem::path& data_dir);

/// Builds a bundle from a diff and the pre-images of the touched files; the
/// post-images are obtained by applying the hunks. Files absent from `pre`
/// must be additions. Result files are path-sorted.
CommitBundle bundle_from_diff(std::string repo_id, std::string hash, std::string message,
                              std::string_view diff,
                              const std::map<std::string, std::string>& pre);

}  // namespace scopy::ingest
