#include "scopy/errors.hpp"
#include "scopy/ingest.hpp"
#include "scopy/pysyntax.hpp"
#include "support.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <random>
#include <thread>

using namespace scopy;
using namespace scopy::ingest;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << s;
}

// Applies a diff with GNU patch; empty optional when patch is unavailable.
std::optional<std::string> patch_oracle(const std::string& pre, const std::string& diff) {
    if (std::system("command -v patch >/dev/null 2>&1") != 0) return std::nullopt;
    testing::TempDir tmp;
    write(tmp.path / "pre", pre);
    write(tmp.path / "d.patch", diff);
    auto cmd = "patch -s -o " + (tmp.path / "out").string() + " " + (tmp.path / "pre").string() + " < " +
               (tmp.path / "d.patch").string() + " >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return std::string("<patch failed>");
    return testing::read_file(tmp.path / "out");
}

std::string single_file_diff(const std::string& hunks) {
    return "--- a/m.py\n+++ b/m.py\n" + hunks;
}

}  // namespace

TEST_CASE("listing 1 diff") {
    auto diff = testing::read_file(testing::fixture_dir() / "commits/cvandeplas__pystemon/dbeb87afefdb63de2f4cff69b6f10c5965d14b54/diff.patch");
    auto files = parse_unified_diff(diff);
    REQUIRE(files.size() == 1);
    CHECK(files[0].path == "pystemon/config.py");
    REQUIRE(files[0].hunks.size() == 1);
    auto cl = changed_lines(files[0]);
    REQUIRE(cl.deleted.size() == 1);
    REQUIRE(cl.added.size() == 1);
    std::string del, add;
    for (const auto& l : files[0].hunks[0].lines) {
        if (l.marker == LineMarker::deleted) del = l.text;
        if (l.marker == LineMarker::added) add = l.text;
    }
    CHECK(del.find("yaml.load") != std::string::npos);
    CHECK(add.find("yaml.safe_load") != std::string::npos);
}

TEST_CASE("empty diff") { CHECK(parse_unified_diff("").empty()); }

TEST_CASE("hunk line arithmetic") {
    auto files = parse_unified_diff(single_file_diff("@@ -3,2 +3,3 @@\n a\n b\n+c\n"));
    auto cl = changed_lines(files.at(0));
    CHECK(cl.context == std::map<int, int>{{3, 3}, {4, 4}});
    CHECK(cl.added == std::set<int>{5});
    CHECK(cl.deleted.empty());
}

TEST_CASE("changed lines with a patch-apply oracle") {
    std::string pre = "l1\nl2\nl3\nl4\nctx5\nold6\nctx7\nl8\n";
    std::string diff = single_file_diff("@@ -5,3 +5,3 @@\n ctx5\n-old6\n+new6\n ctx7\n");
    auto files = parse_unified_diff(diff);
    auto& fc = files.at(0);
    fc.pre_content = pre;
    auto cl = changed_lines(fc);
    CHECK(cl.deleted == std::set<int>{6});
    CHECK(cl.added == std::set<int>{6});
    CHECK(cl.context == std::map<int, int>{{5, 5}, {7, 7}});

    auto post = apply_hunks(pre, fc.hunks);
    auto oracle = patch_oracle(pre, diff);
    if (oracle) CHECK(post == *oracle);
    CHECK(post == "l1\nl2\nl3\nl4\nctx5\nnew6\nctx7\nl8\n");
    // Every line the diff does not mention maps to itself here.
    auto full = unchanged_line_map(fc);
    CHECK(full.size() == 7);
    CHECK(full.at(8) == 8);
}

TEST_CASE("malformed diffs are rejected whole") {
    CHECK_THROWS_AS(parse_unified_diff(single_file_diff("@@ -10,2 +10,2 @@\n ctx\n-del\n+add\n ctx\n")), MalformedDiff);
    CHECK_THROWS_AS(parse_unified_diff(single_file_diff("@@ -1,3 +1,3 @@\n a\n")), MalformedDiff);
    CHECK_THROWS_AS(parse_unified_diff(single_file_diff("@@ -x +1 @@\n a\n")), MalformedDiff);
    CHECK_THROWS_AS(parse_unified_diff("diff --git a/i.png b/i.png\nBinary files a/i.png and b/i.png differ\n"),
                    MalformedDiff);
    CHECK_THROWS_AS(parse_unified_diff(single_file_diff("@@ -1 +1 @@\n-a\n+b\n") + single_file_diff("@@ -1 +1 @@\n-a\n+b\n")),
                    MalformedDiff);
}

TEST_CASE("additions, deletions and missing newlines") {
    std::string diff =
        "diff --git a/new.py b/new.py\nnew file mode 100644\n--- /dev/null\n+++ b/new.py\n@@ -0,0 +1,2 @@\n+a = 1\n+b = 2\n"
        "diff --git a/old.py b/old.py\ndeleted file mode 100644\n--- a/old.py\n+++ /dev/null\n@@ -1 +0,0 @@\n-x = 1\n"
        "--- a/t.py\n+++ b/t.py\n@@ -1 +1 @@\n-x\n\\ No newline at end of file\n+y\n";
    auto files = parse_unified_diff(diff);
    REQUIRE(files.size() == 3);
    CHECK(files[0].added_file);
    CHECK(apply_hunks("", files[0].hunks) == "a = 1\nb = 2\n");
    CHECK(files[1].deleted_file);
    CHECK(apply_hunks("x = 1\n", files[1].hunks).empty());
    CHECK(apply_hunks("x", files[2].hunks) == "y\n");
    CHECK(render_unified_diff(files).find("\\ No newline at end of file") != std::string::npos);
}

TEST_CASE("render, reparse and apply round trip on random edits") {
    std::mt19937 rng(5);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<std::string> pre_lines, post_lines;
        int n = 5 + static_cast<int>(rng() % 30);
        for (int i = 0; i < n; ++i) pre_lines.push_back("line " + std::to_string(i));
        // Random edit script.
        FileChange fc;
        fc.path = "m.py";
        std::vector<HunkLine> script;
        for (int i = 0; i < n; ++i) {
            int r = static_cast<int>(rng() % 10);
            if (r == 0) script.push_back({LineMarker::deleted, pre_lines[i]});
            else if (r == 1) {
                script.push_back({LineMarker::deleted, pre_lines[i]});
                script.push_back({LineMarker::added, "edit " + std::to_string(i)});
            } else {
                script.push_back({LineMarker::context, pre_lines[i]});
                if (r == 2) script.push_back({LineMarker::added, "ins " + std::to_string(i)});
            }
        }
        // One hunk covering the whole file keeps the counts trivially right.
        Hunk h;
        h.pre_start = 1;
        h.post_start = 1;
        for (const auto& l : script) {
            if (l.marker != LineMarker::added) ++h.pre_len;
            if (l.marker != LineMarker::deleted) ++h.post_len;
            if (l.marker != LineMarker::deleted) post_lines.push_back(l.text);
        }
        h.lines = script;
        fc.hunks.push_back(h);
        std::string pre, post;
        for (auto& l : pre_lines) pre += l + "\n";
        for (auto& l : post_lines) post += l + "\n";
        if (post.empty()) continue;

        auto text = render_unified_diff({fc});
        auto again = parse_unified_diff(text);
        REQUIRE(again.size() == 1);
        CHECK(again[0].hunks == fc.hunks);
        CHECK(apply_hunks(pre, again[0].hunks) == post);
        if (trial < 10)
            if (auto oracle = patch_oracle(pre, text)) CHECK(*oracle == post);

        fc.pre_content = pre;
        auto cl = changed_lines(fc);
        CHECK(static_cast<int>(cl.deleted.size() + cl.context.size()) == h.pre_len);
        CHECK(static_cast<int>(cl.added.size() + cl.context.size()) == h.post_len);
        auto full = unchanged_line_map(fc);
        auto post_split = split_lines(post);
        for (auto [a, b] : full) CHECK(pre_lines.at(a - 1) == post_split.at(b - 1));
    }
}

TEST_CASE("relevant units") {
    SUBCASE("listing 1 selects the changed method") {
        auto b = testing::listing1();
        const auto& fc = b.files.at(0);
        auto units = select_relevant_units(fc, py::discover_unit_spans(fc.pre_content, fc.post_content));
        REQUIRE(units.size() == 1);
        CHECK(units[0].unit_name == "_load_yamlconfig");
        CHECK(units[0].pre_span == LineRange{4, 13});
    }
    SUBCASE("docstring-only change") {
        FileChange fc;
        fc.path = "m.py";
        fc.pre_content = "\"\"\"Module docs.\n\nold\n\"\"\"\n\n\ndef f():\n    return 1\n";
        fc.post_content = "\"\"\"Module docs.\n\nnew\n\"\"\"\n\n\ndef f():\n    return 1\n";
        fc.hunks = parse_unified_diff(single_file_diff("@@ -2,3 +2,3 @@\n \n-old\n+new\n \"\"\"\n")).at(0).hunks;
        REQUIRE(apply_hunks(fc.pre_content, fc.hunks) == fc.post_content);
        CHECK(select_relevant_units(fc, py::discover_unit_spans(fc.pre_content, fc.post_content)).empty());
    }
    SUBCASE("top-level import swap, checked by a brute-force span scan") {
        FileChange fc;
        fc.path = "m.py";
        fc.pre_content = "import os\nimport yaml\n\n\ndef f():\n    return 1\n";
        fc.post_content = "import os\nimport shlex\n\n\ndef f():\n    return 1\n";
        fc.hunks = parse_unified_diff(single_file_diff("@@ -1,2 +1,2 @@\n import os\n-import yaml\n+import shlex\n")).at(0).hunks;
        auto spans = py::discover_unit_spans(fc.pre_content, fc.post_content);
        auto units = select_relevant_units(fc, spans);
        REQUIRE(units.size() == 1);
        CHECK(units[0].unit_name == "<module>");

        auto cl = changed_lines(fc);
        for (const auto& u : spans) {
            bool overlap = false;
            for (const auto& r : u.pre)
                for (int l = r.first; l <= r.last; ++l) overlap = overlap || cl.deleted.count(l);
            for (const auto& r : u.post)
                for (int l = r.first; l <= r.last; ++l) overlap = overlap || cl.added.count(l);
            bool selected = std::any_of(units.begin(), units.end(), [&](const RelevantUnit& x) { return x.unit_name == u.name; });
            CHECK(overlap == selected);
        }
    }
    SUBCASE("adding a changed line never drops a unit") {
        std::vector<UnitSpans> spans{{"a", {{1, 3}}, {{1, 3}}}, {"b", {{5, 9}}, {{5, 9}}}, {"<module>", {{11, 11}}, {{11, 11}}}};
        std::mt19937 rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            FileChange fc;
            Hunk h;
            std::set<int> dels;
            for (int k = 0; k < 3; ++k) dels.insert(1 + static_cast<int>(rng() % 12));
            h.pre_start = 1;
            h.post_start = 1;
            h.pre_len = 12;
            h.post_len = 12 - static_cast<int>(dels.size());
            for (int l = 1; l <= 12; ++l)
                h.lines.push_back({dels.count(l) ? LineMarker::deleted : LineMarker::context, "x"});
            fc.hunks = {h};
            auto before = select_relevant_units(fc, spans);
            int extra = 1 + static_cast<int>(rng() % 12);
            fc.hunks[0].lines[static_cast<std::size_t>(extra - 1)].marker = LineMarker::deleted;
            auto after = select_relevant_units(fc, spans);
            for (const auto& u : before)
                CHECK(std::find_if(after.begin(), after.end(), [&](const RelevantUnit& x) { return x.unit_name == u.unit_name; }) != after.end());
        }
    }
}

TEST_CASE("commit reference urls") {
    auto r = parse_cve_reference("https://github.com/a/b/commit/0c0313f375bed7b035c8c0482bbb09599e16bfcf");
    CHECK(r == CommitRef{"a", "b", "0c0313f375bed7b035c8c0482bbb09599e16bfcf"});
    CHECK_THROWS_AS(parse_cve_reference("https://github.com/a/b/issues/7"), NotACommitUrl);
    CHECK(parse_cve_reference("https://github.com/a/b/commit/0c0313f375bed7b035c8c0482bbb09599e16bfcf.patch").hash ==
          "0c0313f375bed7b035c8c0482bbb09599e16bfcf");
    const std::vector<std::string> variants{
        "http://github.com/a/b/commit/0C0313F375BED7B035C8C0482BBB09599E16BFCF",
        "https://www.github.com/a/b/commit/0c0313f375bed7b035c8c0482bbb09599e16bfcf/",
        "https://github.com/a/b/commit/0c0313f375bed7b035c8c0482bbb09599e16bfcf.diff",
        "https://github.com/a/b/commit/0c0313f375bed7b035c8c0482bbb09599e16bfcf#diff-1234",
        "https://github.com/a/b/commit/0c0313f375bed7b035c8c0482bbb09599e16bfcf?w=1",
    };
    for (const auto& v : variants) CHECK(parse_cve_reference(v) == r);
    CHECK(parse_cve_reference("https://github.com/a/b/commit/0c0313f").hash == "0c0313f");
    for (std::string bad : {"https://gitlab.com/a/b/commit/0c0313f375", "https://github.com/a/b/pull/3",
                            "https://github.com/a/b/commit/xyz", "https://github.com/a/commit/0c0313f375", ""})
        CHECK_THROWS_AS(parse_cve_reference(bad), NotACommitUrl);
}

TEST_CASE("fixture commit source") {
    auto b = testing::listing1();
    CHECK(b.message == "Fixed code execution bug using SafeLoader()");
    CHECK(b.commit_id() == "cvandeplas__pystemon@dbeb87afefdb63de2f4cff69b6f10c5965d14b54");
    FixtureCommitSource src(testing::fixture_dir());
    CHECK_THROWS_AS(src.fetch({"cvandeplas", "pystemon", "ffffffffffffffffffffffffffffffffffffffff"}), NotFound);

    testing::TempDir tmp;
    auto dir = tmp.path / "commits/o__r/abc";
    write(dir / "message.txt", "two files\n");
    write(dir / "pre/z.py", "x = 1\n");
    write(dir / "post/z.py", "x = 2\n");
    write(dir / "pre/a/b.py", "y = 1\n");
    write(dir / "post/a/b.py", "y = 3\n");
    write(dir / "diff.patch",
          "--- a/z.py\n+++ b/z.py\n@@ -1 +1 @@\n-x = 1\n+x = 2\n--- a/a/b.py\n+++ b/a/b.py\n@@ -1 +1 @@\n-y = 1\n+y = 3\n");
    FixtureCommitSource two(tmp.path);
    auto bundle = fetch_commit(two, {"o", "r", "abc"});
    REQUIRE(bundle.files.size() == 2);
    CHECK(bundle.files[0].path == "a/b.py");
    CHECK(bundle.files[1].path == "z.py");
    CHECK(bundle.message == "two files");
    CHECK(two.list() == std::vector<CommitRef>{{"o", "r", "abc"}});
}

TEST_CASE("source filter") {
    SourceFilter f;
    f.exclude_patterns = {"tests/*", "*CHANGELOG*"};
    CHECK(f.keep("pkg/mod.py"));
    CHECK_FALSE(f.keep("README.md"));
    CHECK_FALSE(f.keep("tests/test_x.py"));
    std::vector<FileChange> files(3);
    files[0].path = "a.py";
    files[1].path = "b.txt";
    files[2].path = "tests/c.py";
    auto kept = filter_sources(files, f);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].path == "a.py");
}

TEST_CASE("http commit source") {
    httplib::Server srv;
    srv.Get(R"(/commits/([^/]+)/([^/]+)/([0-9a-f]+))", [](const httplib::Request& req, httplib::Response& res) {
        if (req.matches[3] != "abc123") {
            res.status = 404;
            return;
        }
        nlohmann::json j{{"message", "Fix overflow"},
                         {"diff", "--- a/m.py\n+++ b/m.py\n@@ -1 +1 @@\n-x = 1\n+x = 2\n"},
                         {"pre", {{"m.py", "x = 1\n"}}}};
        res.set_content(j.dump(), "application/json");
    });
    int port = srv.bind_to_any_port("127.0.0.1");
    std::thread t([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    HttpCommitSource src("http://127.0.0.1:" + std::to_string(port));
    auto b = src.fetch({"o", "r", "abc123"});
    CHECK(b.message == "Fix overflow");
    REQUIRE(b.files.size() == 1);
    CHECK(b.files[0].post_content == "x = 2\n");
    CHECK_THROWS_AS(src.fetch({"o", "r", "def456"}), NotFound);
    srv.stop();
    t.join();

    HttpCommitSource dead("http://127.0.0.1:" + std::to_string(port));
    CHECK_THROWS_AS(dead.fetch({"o", "r", "abc123"}), TransportError);
}
