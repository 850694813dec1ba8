#include "scopy/ingest.hpp"

#include "scopy/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fnmatch.h>
#include <fstream>
#include <regex>
#include <sstream>

namespace scopy::ingest {

namespace fs = std::filesystem;

std::string_view to_string(Origin o) {
    switch (o) {
        case Origin::cve_linked: return "cve_linked";
        case Origin::keyword_candidate: return "keyword_candidate";
        case Origin::model_candidate: return "model_candidate";
        case Origin::manual: return "manual";
    }
    return "manual";
}

Origin origin_from_string(std::string_view s) {
    if (s == "cve_linked") return Origin::cve_linked;
    if (s == "keyword_candidate") return Origin::keyword_candidate;
    if (s == "model_candidate") return Origin::model_candidate;
    return Origin::manual;
}

std::string CommitBundle::commit_id() const {
    std::string id = repo_id;
    if (auto slash = repo_id.find('/'); slash != std::string::npos)
        id = repo_id.substr(0, slash) + "__" + repo_id.substr(slash + 1);
    return id + "@" + commit_hash;
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            out.emplace_back(text.substr(pos));
            break;
        }
        out.emplace_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    return out;
}

namespace {

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

int parse_int(std::string_view s, std::string_view line) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw MalformedDiff("bad number in hunk header: " + std::string(line));
    return v;
}

// "@@ -a[,b] +c[,d] @@ section"
Hunk parse_hunk_header(std::string_view line) {
    static const std::regex re(R"(^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@ ?(.*)$)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_match(line.begin(), line.end(), m, re))
        throw MalformedDiff("bad hunk header: " + std::string(line));
    auto group = [&](int i) { return std::string_view(&*m[i].first, m[i].length()); };
    Hunk h;
    h.pre_start = parse_int(group(1), line);
    h.pre_len = m[2].matched ? parse_int(group(2), line) : 1;
    h.post_start = parse_int(group(3), line);
    h.post_len = m[4].matched ? parse_int(group(4), line) : 1;
    if (m[5].matched) h.section = std::string(m[5].first, m[5].second);
    return h;
}

std::string strip_path_prefix(std::string_view p) {
    // "a/foo.py\t2023-..." -> "foo.py"
    auto tab = p.find('\t');
    if (tab != std::string_view::npos) p = p.substr(0, tab);
    while (!p.empty() && (p.back() == ' ' || p.back() == '\r')) p.remove_suffix(1);
    if (starts_with(p, "a/") || starts_with(p, "b/")) p.remove_prefix(2);
    return std::string(p);
}

struct FileBuilder {
    FileChange fc;
    std::string old_path;
    bool saw_headers = false;
};

}  // namespace

std::vector<FileChange> parse_unified_diff(std::string_view text) {
    std::vector<FileChange> files;
    auto lines = split_lines(text);
    std::optional<FileBuilder> cur;

    auto finish = [&] {
        if (!cur) return;
        if (cur->saw_headers) {
            if (cur->fc.path.empty()) cur->fc.path = cur->old_path;
            files.push_back(std::move(cur->fc));
        }
        cur.reset();
    };

    std::size_t i = 0;
    while (i < lines.size()) {
        std::string_view line = lines[i];
        if (starts_with(line, "diff --git ")) {
            finish();
            cur.emplace();
            ++i;
            continue;
        }
        if (starts_with(line, "Binary files ") || starts_with(line, "GIT binary patch"))
            throw MalformedDiff("binary file in diff: " + std::string(line));
        if (starts_with(line, "--- ") && i + 1 < lines.size() && starts_with(lines[i + 1], "+++ ")) {
            if (!cur || cur->saw_headers) {
                finish();
                cur.emplace();
            }
            auto old_p = std::string_view(line).substr(4);
            auto new_p = std::string_view(lines[i + 1]).substr(4);
            cur->saw_headers = true;
            cur->old_path = strip_path_prefix(old_p);
            if (strip_path_prefix(new_p) == "/dev/null") {
                cur->fc.deleted_file = true;
                cur->fc.path = cur->old_path;
            } else {
                cur->fc.path = strip_path_prefix(new_p);
            }
            if (cur->old_path == "/dev/null") cur->fc.added_file = true;
            i += 2;
            continue;
        }
        if (starts_with(line, "@@")) {
            if (!cur || !cur->saw_headers) throw MalformedDiff("hunk before file header");
            Hunk h = parse_hunk_header(line);
            ++i;
            int pre_seen = 0;
            int post_seen = 0;
            LineMarker last = LineMarker::context;
            while (pre_seen < h.pre_len || post_seen < h.post_len ||
                   (i < lines.size() && starts_with(lines[i], "\\"))) {
                if (i >= lines.size()) throw MalformedDiff("hunk truncated: " + std::string(line));
                std::string_view l = lines[i];
                if (starts_with(l, "\\")) {
                    if (last != LineMarker::added) h.pre_missing_newline = true;
                    if (last != LineMarker::deleted) h.post_missing_newline = true;
                    ++i;
                    continue;
                }
                char c = l.empty() ? ' ' : l.front();
                std::string body = l.empty() ? std::string() : std::string(l.substr(1));
                if (c == ' ') {
                    last = LineMarker::context;
                    ++pre_seen;
                    ++post_seen;
                } else if (c == '-') {
                    last = LineMarker::deleted;
                    ++pre_seen;
                } else if (c == '+') {
                    last = LineMarker::added;
                    ++post_seen;
                } else {
                    throw MalformedDiff("hunk line counts do not match header: " + std::string(line));
                }
                if (pre_seen > h.pre_len || post_seen > h.post_len)
                    throw MalformedDiff("hunk line counts do not match header: " + std::string(line));
                h.lines.push_back({last, std::move(body)});
                ++i;
            }
            cur->fc.hunks.push_back(std::move(h));
            continue;
        }
        if (cur && !cur->fc.hunks.empty() &&
            (starts_with(line, " ") || starts_with(line, "+") || starts_with(line, "-")))
            throw MalformedDiff("hunk line counts do not match header");
        // Metadata (index, mode lines, commit message preamble): ignored.
        ++i;
    }
    finish();

    std::set<std::string> seen;
    for (const auto& f : files)
        if (!seen.insert(f.path).second) throw MalformedDiff("duplicate file in diff: " + f.path);
    return files;
}

std::string render_unified_diff(const std::vector<FileChange>& files) {
    std::ostringstream os;
    for (const auto& f : files) {
        os << "diff --git a/" << f.path << " b/" << f.path << "\n";
        os << "--- " << (f.added_file ? std::string("/dev/null") : "a/" + f.path) << "\n";
        os << "+++ " << (f.deleted_file ? std::string("/dev/null") : "b/" + f.path) << "\n";
        for (const auto& h : f.hunks) {
            os << "@@ -" << h.pre_start << "," << h.pre_len << " +" << h.post_start << ","
               << h.post_len << " @@";
            if (!h.section.empty()) os << " " << h.section;
            os << "\n";
            // Index of the last line on each side, for the no-newline markers.
            int last_pre = -1, last_post = -1;
            for (int k = 0; k < static_cast<int>(h.lines.size()); ++k) {
                if (h.lines[k].marker != LineMarker::added) last_pre = k;
                if (h.lines[k].marker != LineMarker::deleted) last_post = k;
            }
            for (int k = 0; k < static_cast<int>(h.lines.size()); ++k) {
                const auto& l = h.lines[k];
                os << (l.marker == LineMarker::context ? ' ' : l.marker == LineMarker::deleted ? '-' : '+')
                   << l.text << "\n";
                bool mark = (k == last_pre && h.pre_missing_newline) ||
                            (k == last_post && h.post_missing_newline);
                if (mark) os << "\\ No newline at end of file\n";
            }
        }
    }
    return os.str();
}

std::string apply_hunks(std::string_view pre, const std::vector<Hunk>& hunks) {
    auto pre_lines = split_lines(pre);
    bool trailing_newline = pre.empty() || pre.back() == '\n';
    std::vector<std::string> out;
    int next = 1;  // next unconsumed pre line
    for (const auto& h : hunks) {
        int first = h.pre_len == 0 ? h.pre_start + 1 : h.pre_start;
        if (first < next || first - 1 > static_cast<int>(pre_lines.size()))
            throw MalformedDiff("hunk out of order or beyond end of file");
        for (; next < first; ++next) out.push_back(pre_lines[next - 1]);
        for (const auto& l : h.lines) {
            if (l.marker == LineMarker::added) {
                out.push_back(l.text);
                continue;
            }
            if (next > static_cast<int>(pre_lines.size()) || pre_lines[next - 1] != l.text)
                throw MalformedDiff("hunk does not apply at pre line " + std::to_string(next));
            if (l.marker == LineMarker::context) out.push_back(l.text);
            ++next;
        }
        if (h.post_missing_newline) trailing_newline = false;
        else if (h.pre_missing_newline) trailing_newline = true;
    }
    for (; next <= static_cast<int>(pre_lines.size()); ++next) out.push_back(pre_lines[next - 1]);

    std::string result;
    for (std::size_t k = 0; k < out.size(); ++k) {
        result += out[k];
        if (k + 1 < out.size() || trailing_newline) result += '\n';
    }
    return result;
}

ChangedLines changed_lines(const FileChange& fc) {
    ChangedLines cl;
    for (const auto& h : fc.hunks) {
        int pre = h.pre_len == 0 ? h.pre_start + 1 : h.pre_start;
        int post = h.post_len == 0 ? h.post_start + 1 : h.post_start;
        for (const auto& l : h.lines) {
            switch (l.marker) {
                case LineMarker::context: cl.context.emplace(pre++, post++); break;
                case LineMarker::deleted: cl.deleted.insert(pre++); break;
                case LineMarker::added: cl.added.insert(post++); break;
            }
        }
    }
    return cl;
}

std::map<int, int> unchanged_line_map(const FileChange& fc) {
    std::map<int, int> map;
    const int n_pre = static_cast<int>(split_lines(fc.pre_content).size());
    auto cl = changed_lines(fc);
    // Walk pre lines in order, keeping the running pre->post offset.
    int offset = 0;
    std::size_t h = 0;
    for (int line = 1; line <= n_pre; ++line) {
        while (h < fc.hunks.size()) {
            const auto& hk = fc.hunks[h];
            int pre_end = (hk.pre_len == 0 ? hk.pre_start : hk.pre_start + hk.pre_len - 1);
            if (line > pre_end) {
                offset += hk.post_len - hk.pre_len;
                ++h;
                continue;
            }
            break;
        }
        if (cl.deleted.count(line)) continue;
        if (auto it = cl.context.find(line); it != cl.context.end()) {
            map.emplace(line, it->second);
            continue;
        }
        map.emplace(line, line + offset);
    }
    return map;
}

std::vector<RelevantUnit> select_relevant_units(const FileChange& fc,
                                                const std::vector<UnitSpans>& units) {
    auto cl = changed_lines(fc);
    std::vector<RelevantUnit> out;
    auto hull = [](const std::vector<LineRange>& rs) {
        LineRange r;
        for (const auto& x : rs) {
            if (x.empty()) continue;
            if (r.empty()) r = x;
            r.first = std::min(r.first, x.first);
            r.last = std::max(r.last, x.last);
        }
        return r;
    };
    for (const auto& u : units) {
        bool hit = std::any_of(u.pre.begin(), u.pre.end(), [&](const LineRange& r) {
                       return std::any_of(cl.deleted.begin(), cl.deleted.end(),
                                          [&](int l) { return r.contains(l); });
                   }) ||
                   std::any_of(u.post.begin(), u.post.end(), [&](const LineRange& r) {
                       return std::any_of(cl.added.begin(), cl.added.end(),
                                          [&](int l) { return r.contains(l); });
                   });
        if (hit) out.push_back({fc.path, u.name, hull(u.pre), hull(u.post)});
    }
    return out;
}

CommitRef parse_cve_reference(std::string_view url) {
    static const std::regex re(
        R"(^https?://(?:www\.)?github\.com/([A-Za-z0-9_.\-]+)/([A-Za-z0-9_.\-]+)/commit/([0-9a-fA-F]{7,40})(?:\.patch|\.diff)?/?(?:[?#].*)?$)");
    std::string s(url);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw NotACommitUrl("not a GitHub commit URL: " + s);
    std::string hash = m[3];
    std::transform(hash.begin(), hash.end(), hash.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return {m[1], m[2], hash};
}

bool SourceFilter::keep(std::string_view path) const {
    std::string p(path);
    for (const auto& pat : exclude_patterns)
        if (fnmatch(pat.c_str(), p.c_str(), 0) == 0) return false;
    if (extensions.empty()) return true;
    return std::any_of(extensions.begin(), extensions.end(), [&](const std::string& ext) {
        return p.size() >= ext.size() && p.compare(p.size() - ext.size(), ext.size(), ext) == 0;
    });
}

std::vector<FileChange> filter_sources(std::vector<FileChange> files, const SourceFilter& filter) {
    std::erase_if(files, [&](const FileChange& f) { return !filter.keep(f.path); });
    return files;
}

namespace {

std::optional<std::string> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string trim_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

CommitBundle bundle_from_diff(std::string repo_id, std::string hash, std::string message,
                              std::string_view diff,
                              const std::map<std::string, std::string>& pre) {
    CommitBundle b;
    b.repo_id = std::move(repo_id);
    b.commit_hash = std::move(hash);
    b.message = std::move(message);
    b.files = parse_unified_diff(diff);
    for (auto& f : b.files) {
        auto it = pre.find(f.path);
        if (it != pre.end()) {
            f.pre_content = it->second;
        } else if (!f.added_file) {
            throw MalformedDiff("missing pre-image for modified file " + f.path);
        }
        f.post_content = apply_hunks(f.pre_content, f.hunks);
    }
    std::sort(b.files.begin(), b.files.end(),
              [](const FileChange& a, const FileChange& c) { return a.path < c.path; });
    return b;
}

CommitBundle load_commit_dir(const fs::path& dir, const CommitRef& ref) {
    if (!fs::is_directory(dir)) throw NotFound("commit not found: " + dir.string());
    auto diff = read_file(dir / "diff.patch");
    if (!diff) throw MalformedDiff("missing diff.patch in " + dir.string());

    CommitBundle b;
    b.repo_id = ref.owner + "/" + ref.repo;
    b.commit_hash = ref.hash;
    b.message = trim_trailing_newlines(read_file(dir / "message.txt").value_or(""));
    b.files = parse_unified_diff(*diff);
    for (auto& f : b.files) {
        auto pre = read_file(dir / "pre" / f.path);
        auto post = read_file(dir / "post" / f.path);
        if (!pre && !f.added_file) throw MalformedDiff("missing pre/" + f.path + " in " + dir.string());
        if (!post && !f.deleted_file) throw MalformedDiff("missing post/" + f.path + " in " + dir.string());
        f.pre_content = pre.value_or("");
        f.post_content = post.value_or("");
        if (apply_hunks(f.pre_content, f.hunks) != f.post_content)
            throw MalformedDiff("diff does not reproduce post/" + f.path);
    }
    std::sort(b.files.begin(), b.files.end(),
              [](const FileChange& a, const FileChange& c) { return a.path < c.path; });
    return b;
}

std::vector<CommitRef> list_commit_dirs(const fs::path& commits_root) {
    std::vector<CommitRef> refs;
    if (!fs::is_directory(commits_root)) return refs;
    for (const auto& repo_dir : fs::directory_iterator(commits_root)) {
        if (!repo_dir.is_directory()) continue;
        auto name = repo_dir.path().filename().string();
        auto sep = name.find("__");
        if (sep == std::string::npos) continue;
        for (const auto& commit_dir : fs::directory_iterator(repo_dir.path())) {
            if (!commit_dir.is_directory()) continue;
            refs.push_back({name.substr(0, sep), name.substr(sep + 2),
                            commit_dir.path().filename().string()});
        }
    }
    std::sort(refs.begin(), refs.end(), [](const CommitRef& a, const CommitRef& b) {
        return std::tie(a.owner, a.repo, a.hash) < std::tie(b.owner, b.repo, b.hash);
    });
    return refs;
}

FixtureCommitSource::FixtureCommitSource(fs::path data_dir) : root_(std::move(data_dir) / "commits") {}

CommitBundle FixtureCommitSource::fetch(const CommitRef& ref) const {
    return load_commit_dir(root_ / (ref.owner + "__" + ref.repo) / ref.hash, ref);
}

std::vector<CommitRef> FixtureCommitSource::list() const { return list_commit_dirs(root_); }

std::unique_ptr<CommitSource> make_commit_source(const fs::path& data_dir) {
    if (const char* base = std::getenv("SCOPY_COMMIT_API_BASE"); base && *base)
        return std::make_unique<HttpCommitSource>(base);
    return std::make_unique<FixtureCommitSource>(data_dir);
}

}  // namespace scopy::ingest
