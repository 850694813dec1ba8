#include "scopy/errors.hpp"
#include "scopy/patterns.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

using namespace scopy;
using namespace scopy::patterns;

namespace {

std::map<std::string, Category> golden_labels() {
    std::map<std::string, Category> out;
    std::ifstream in(testing::fixture_dir() / "pattern_labels.tsv");
    std::string line;
    while (std::getline(in, line)) {
        auto tab = line.find('\t');
        out[line.substr(0, tab)] = category_from_string(line.substr(tab + 1));
    }
    return out;
}

ingest::CommitBundle fetch(const std::string& id) {
    auto at = id.find('@');
    auto slug = id.substr(0, at);
    auto sep = slug.find("__");
    return ingest::FixtureCommitSource(testing::fixture_dir())
        .fetch({slug.substr(0, sep), slug.substr(sep + 2), id.substr(at + 1)});
}

// Single whole-file hunk from a line LCS.
ingest::Hunk whole_file_hunk(const std::string& pre, const std::string& post) {
    auto a = ingest::split_lines(pre), b = ingest::split_lines(post);
    std::vector<std::vector<int>> lcs(a.size() + 1, std::vector<int>(b.size() + 1, 0));
    for (std::size_t i = a.size(); i-- > 0;)
        for (std::size_t j = b.size(); j-- > 0;)
            lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    ingest::Hunk h;
    h.pre_start = a.empty() ? 0 : 1;
    h.post_start = b.empty() ? 0 : 1;
    h.pre_len = static_cast<int>(a.size());
    h.post_len = static_cast<int>(b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        if (i < a.size() && j < b.size() && a[i] == b[j]) {
            h.lines.push_back({ingest::LineMarker::context, a[i]});
            ++i, ++j;
        } else if (j == b.size() || (i < a.size() && lcs[i + 1][j] >= lcs[i][j + 1])) {
            h.lines.push_back({ingest::LineMarker::deleted, a[i++]});
        } else {
            h.lines.push_back({ingest::LineMarker::added, b[j++]});
        }
    }
    return h;
}

ingest::CommitBundle from_texts(const std::string& pre, const std::string& post, const std::string& path = "m.py") {
    ingest::FileChange fc;
    fc.path = path;
    fc.pre_content = pre;
    fc.post_content = post;
    fc.hunks.push_back(whole_file_hunk(pre, post));
    REQUIRE(ingest::apply_hunks(pre, fc.hunks) == post);
    ingest::CommitBundle b;
    b.repo_id = "o/r";
    b.commit_hash = std::string(40, 'a');
    b.files.push_back(fc);
    return b;
}

}  // namespace

TEST_CASE("golden fix-pattern commits carry their category") {
    auto golden = golden_labels();
    REQUIRE(golden.size() == 13);
    std::array<int, 5> per{};
    for (const auto& [id, want] : golden) {
        CAPTURE(id);
        auto label = tag(fetch(id));
        CHECK(label.category == want);
        CHECK_FALSE(label.evidence.empty());
        ++per[static_cast<std::size_t>(want)];
    }
    CHECK(per == std::array<int, 5>{3, 4, 3, 3, 0});
}

TEST_CASE("golden evidence points at the changed line") {
    auto l = tag(fetch("twisted__twisted@8ebfa8f6577431226e109ff98ba48f5152a2c416"));
    REQUIRE(l.category == Category::SanityCheck);
    CHECK(l.evidence.front() == Evidence{"src/twisted/web/http.py", 12, "R1.guard"});

    l = tag(fetch("nsupdate-info__nsupdate.info@60a3fe559c453bc36b0ec3e5dd39c1303640a59a"));
    CHECK(l.evidence.front() == Evidence{"src/nsupdate/settings/base.py", 6, "R4.flag"});

    l = tag(fetch("lxml__lxml@10ec1b4e9f93713513a3264ed6158af22492f270"));
    CHECK(l.evidence.front().rule_id == "R4.collection");

    l = tag(fetch("zopefoundation__Products.PluggableAuthService@2dad81128250cb2e5d950cddc9d3c0314a80b4bb"));
    CHECK(l.evidence.front().rule_id == "R4.decorator");

    l = tag(fetch("tryton__queue@fc2c1ea1b8d795094abb15ac73cab90830534e04"));
    CHECK(l.evidence.front().rule_id == "R3.escape");

    l = tag(fetch("django-helpdesk__django-helpdesk@a22eb0673fe0b7784f99c6b5fd343b64a6700f06"));
    CHECK(l.evidence.front().rule_id == "R3.pattern");

    l = tag(fetch("bildsben__iTunesRPC-Remastered@1eb1e5428f0926b2829a0bbbb65b0d946e608593"));
    CHECK(l.category == Category::ApiUsage);
    CHECK(l.evidence.front().rule_id == "R2.api");
}

TEST_CASE("safe loader swap is an API usage fix") {
    auto l = tag(testing::listing1());
    CHECK(l.category == Category::ApiUsage);
    REQUIRE(l.evidence.size() == 1);
    CHECK(l.evidence[0].file == "pystemon/config.py");
}

TEST_CASE("tagging is deterministic") {
    auto golden = golden_labels();
    for (const auto& [id, want] : golden) {
        auto b = fetch(id);
        CHECK(tag(b) == tag(b));
        CHECK(all_matches(b) == all_matches(b));
    }
}

TEST_CASE("tag keeps the first category of all_matches") {
    // a flag flip together with a new guard: SanityCheck wins
    auto b = from_texts("DEBUG = True\nx = 1\n", "DEBUG = False\nif x:\n    x = 1\n");
    auto m = all_matches(b);
    REQUIRE(m.size() == 2);
    CHECK(m[0].category == Category::SanityCheck);
    CHECK(m[1].category == Category::SecurityProperty);
    CHECK(tag(b) == m[0]);
}

TEST_CASE("rules on small edits") {
    CHECK(tag(from_texts("def f(x):\n    return x\n", "def f(x):\n    return x + 1\n")).category == Category::Other);
    CHECK(tag(from_texts("a = 1\n", "a = 1\n# note\n")).category == Category::Other);
    CHECK(tag(from_texts("def f(x):\n    assert x\n", "def f(x):\n    assert x > 0, 'bad'\n")).category ==
          Category::SanityCheck);
    CHECK(tag(from_texts("import subprocess\nos.system(c)\n", "import subprocess\nsubprocess.run(c)\n")).category ==
          Category::ApiUsage);
    // an API already used in the deleted code is not new
    CHECK(tag(from_texts("yaml.safe_load(a)\n", "yaml.safe_load(b)\n")).category == Category::Other);
    CHECK(tag(from_texts("r = re.compile('a+')\n", "r = re.compile('^a+$')\n")).category == Category::RegexUpdate);
    auto arg = tag(from_texts("open(p)\n", "open(p, mode='rb')\n"));
    CHECK(arg.category == Category::SecurityProperty);
    CHECK(arg.evidence.at(0).rule_id == "R4.argument");
    // extra code outside the brackets is not an argument change
    CHECK(tag(from_texts("open(p)\n", "open(p).read()\n")).category == Category::Other);
}

TEST_CASE("secure API table") {
    auto t = default_secure_apis();
    CHECK(t.covers("re.escape"));
    CHECK(t.covers("subprocess.run"));
    CHECK_FALSE(t.covers("re.escaped"));
    CHECK_FALSE(t.covers("yaml.load"));
    CHECK_FALSE(t.add({"re.escape", ""}));
    CHECK_THROWS_AS(t.add({"", ""}), BadConfig);

    auto shipped = load_secure_apis(std::filesystem::path(SCOPY_DATA_DIR) / "secure_apis.tsv");
    REQUIRE(shipped.entries().size() == t.entries().size());
    for (std::size_t i = 0; i < t.entries().size(); ++i) CHECK(shipped.entries()[i].name == t.entries()[i].name);

    testing::TempDir tmp;
    CHECK_THROWS_AS(load_secure_apis(tmp.path / "missing.tsv"), NotFound);
    std::ofstream(tmp.path / "dup.tsv") << "a.b\tx\na.b\ty\n";
    CHECK_THROWS_AS(load_secure_apis(tmp.path / "dup.tsv"), BadConfig);
    std::ofstream(tmp.path / "bad.tsv") << "nofield\n";
    CHECK_THROWS_AS(load_secure_apis(tmp.path / "bad.tsv"), BadConfig);
}

TEST_CASE("report proportions") {
    std::vector<PatternLabel> labels;
    for (auto c : {Category::SanityCheck, Category::ApiUsage, Category::RegexUpdate, Category::SecurityProperty})
        labels.push_back({c, {{"f.py", 1, "x"}}});
    auto rows = report(labels);
    REQUIRE(rows.size() == 5);
    for (int i = 0; i < 4; ++i) CHECK(rows[i].proportion == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(rows[4].count == 0);
    CHECK(rows[4].proportion == 0.0);
    CHECK_THROWS_AS(report({}), EmptyCorpus);
    CHECK_THROWS_AS(report_counts({0, 0, 0, 0, 0}), EmptyCorpus);
    CHECK_THROWS_AS(report_counts({1, -1, 0, 0, 0}), BadConfig);
}

TEST_CASE("report on a sanity-check count of 467 reproduces the printed table") {
    auto rows = report_counts({467, 241, 189, 183, 178});
    const double printed[] = {37.12, 19.16, 15.02, 14.55, 14.15};
    long total = 0;
    for (int i = 0; i < 5; ++i) {
        CHECK(std::abs(rows[i].proportion - printed[i]) <= 0.005);
        total += rows[i].count;
    }
    CHECK(total == 1258);
    CHECK(report_tsv(rows) ==
          "category\tcount\tproportion\nSanityCheck\t467\t37.12\nApiUsage\t241\t19.16\nRegexUpdate\t189\t15.02\n"
          "SecurityProperty\t183\t14.55\nOther\t178\t14.15\n");
}

TEST_CASE("proportions sum to one hundred") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::array<long, 5> counts{};
        for (auto& c : counts) c = static_cast<long>(rng() % 500);
        counts[0] += 1;
        double sum = 0;
        for (const auto& r : report_counts(counts)) sum += r.proportion;
        CHECK(sum == doctest::Approx(100.0).epsilon(1e-12));
    }
}

TEST_CASE("label json round trip") {
    PatternLabel l{Category::RegexUpdate, {{"a.py", 3, "R3.escape"}, {"b.py", 9, "R3.pattern"}}};
    CHECK(pattern_label_from_json(to_json(l)) == l);
    CHECK(pattern_label_from_json(to_json(PatternLabel{})) == PatternLabel{});
    CHECK_THROWS_AS(pattern_label_from_json({{"category", "ApiUsage"}, {"evidence", nlohmann::json::array()}}), BadConfig);
    CHECK_THROWS_AS(pattern_label_from_json({{"category", "Nope"}}), BadConfig);
    for (auto c : all_categories) CHECK(category_from_string(to_string(c)) == c);
}
