#include "scopy/store.hpp"

#include "scopy/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>

namespace scopy::store {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* commits_file = "commits.jsonl";
constexpr const char* votes_file = "votes.jsonl";
constexpr const char* consensus_file = "consensus.jsonl";
constexpr const char* skipped_file = "skipped.jsonl";
constexpr const char* annotators_file = "annotators.json";

template <class E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& all, const char* what) {
    for (auto e : all)
        if (to_string(e) == s) return e;
    throw BadConfig(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::array<DatasetOrigin, 3> all_origins{DatasetOrigin::base, DatasetOrigin::pilot, DatasetOrigin::augmented};
constexpr std::array<VoteLabel, 3> all_labels{VoteLabel::security, VoteLabel::non_security, VoteLabel::unsure};
constexpr std::array<CandidateSource, 3> all_sources{CandidateSource::cve, CandidateSource::keyword, CandidateSource::model};
constexpr std::array<Status, 3> all_statuses{Status::pending, Status::voted, Status::consensus};

Verdict verdict_from_string(std::string_view s) {
    if (s == "security") return Verdict::security;
    if (s == "non_security") return Verdict::non_security;
    throw BadConfig("unknown verdict '" + std::string(s) + "'");
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

void write_atomic(const fs::path& p, const std::string& content) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw NotFound("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw NotFound("short write to " + tmp.string());
    }
    fs::rename(tmp, p);
}

json metadata_json(const LabelRecord& r) {
    auto j = to_json(r);
    j.erase("votes");
    j.erase("consensus");
    return j;
}

void sort_desc(std::vector<std::pair<std::string, long>>& v) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
}

}  // namespace

std::string_view to_string(DatasetOrigin o) {
    switch (o) {
        case DatasetOrigin::base: return "base";
        case DatasetOrigin::pilot: return "pilot";
        case DatasetOrigin::augmented: return "augmented";
    }
    return "base";
}

std::string_view to_string(VoteLabel l) {
    switch (l) {
        case VoteLabel::security: return "security";
        case VoteLabel::non_security: return "non_security";
        case VoteLabel::unsure: return "unsure";
    }
    return "unsure";
}

std::string_view to_string(Verdict v) { return v == Verdict::security ? "security" : "non_security"; }

std::string_view to_string(CandidateSource s) {
    switch (s) {
        case CandidateSource::cve: return "cve";
        case CandidateSource::keyword: return "keyword";
        case CandidateSource::model: return "model";
    }
    return "cve";
}

std::string_view to_string(Status s) {
    switch (s) {
        case Status::pending: return "pending";
        case Status::voted: return "voted";
        case Status::consensus: return "consensus";
    }
    return "pending";
}

std::string_view to_string(ConsensusState s) {
    switch (s) {
        case ConsensusState::awaiting_votes: return "awaiting_votes";
        case ConsensusState::pending_adjudication: return "pending_adjudication";
        case ConsensusState::security: return "security";
        case ConsensusState::non_security: return "non_security";
    }
    return "awaiting_votes";
}

DatasetOrigin origin_from_string(std::string_view s) { return parse_enum(s, all_origins, "origin"); }
VoteLabel vote_label_from_string(std::string_view s) { return parse_enum(s, all_labels, "vote label"); }
CandidateSource source_from_string(std::string_view s) { return parse_enum(s, all_sources, "source"); }
Status status_from_string(std::string_view s) { return parse_enum(s, all_statuses, "status"); }

CandidateSource source_of(DatasetOrigin o) {
    switch (o) {
        case DatasetOrigin::base: return CandidateSource::cve;
        case DatasetOrigin::pilot: return CandidateSource::keyword;
        case DatasetOrigin::augmented: return CandidateSource::model;
    }
    return CandidateSource::cve;
}

std::string LabelRecord::repo() const {
    auto slug = commit_id.substr(0, commit_id.find('@'));
    auto sep = slug.find("__");
    return sep == std::string::npos ? slug : slug.substr(0, sep) + "/" + slug.substr(sep + 2);
}

Status LabelRecord::status() const {
    if (consensus) return Status::consensus;
    return votes.empty() ? Status::pending : Status::voted;
}

bool LabelRecord::operator==(const LabelRecord& o) const { return to_json(*this) == to_json(o); }

std::map<std::string, VoteLabel> final_votes(const std::vector<Vote>& votes) {
    std::map<std::string, VoteLabel> out;
    for (const auto& v : votes) out[v.annotator] = v.label;
    return out;
}

ConsensusState evaluate_votes(const std::vector<Vote>& votes, const std::vector<std::string>& annotators) {
    auto fin = final_votes(votes);
    if (annotators.empty()) return ConsensusState::awaiting_votes;
    std::size_t security = 0, non_security = 0;
    for (const auto& a : annotators) {
        auto it = fin.find(a);
        if (it == fin.end()) return ConsensusState::awaiting_votes;
        if (it->second == VoteLabel::security) ++security;
        else if (it->second == VoteLabel::non_security) ++non_security;
    }
    if (security == annotators.size()) return ConsensusState::security;
    if (non_security == annotators.size()) return ConsensusState::non_security;
    return ConsensusState::pending_adjudication;
}

double efficiency_ratio(long verified, long candidates) {
    return candidates <= 0 ? 0.0 : static_cast<double>(verified) / static_cast<double>(candidates);
}

std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// ---- JSON ----

json to_json(const ingest::CommitBundle& b) {
    auto files = json::array();
    for (const auto& f : b.files)
        files.push_back({{"path", f.path},
                         {"pre", f.pre_content},
                         {"post", f.post_content},
                         {"diff", ingest::render_unified_diff({f})},
                         {"added_file", f.added_file},
                         {"deleted_file", f.deleted_file}});
    return {{"repo_id", b.repo_id},
            {"commit_hash", b.commit_hash},
            {"message", b.message},
            {"origin", ingest::to_string(b.origin)},
            {"files", files}};
}

ingest::CommitBundle bundle_from_json(const json& j) {
    ingest::CommitBundle b;
    b.repo_id = j.at("repo_id").get<std::string>();
    b.commit_hash = j.at("commit_hash").get<std::string>();
    b.message = j.value("message", "");
    b.origin = ingest::origin_from_string(j.value("origin", "manual"));
    for (const auto& f : j.value("files", json::array())) {
        ingest::FileChange fc;
        auto diff = f.value("diff", "");
        if (!diff.empty()) {
            auto parsed = ingest::parse_unified_diff(diff);
            if (!parsed.empty()) fc = std::move(parsed.front());
        }
        fc.path = f.at("path").get<std::string>();
        fc.pre_content = f.value("pre", "");
        fc.post_content = f.value("post", "");
        fc.added_file = f.value("added_file", false);
        fc.deleted_file = f.value("deleted_file", false);
        b.files.push_back(std::move(fc));
    }
    return b;
}

json to_json(const LabelRecord& r) {
    auto votes = json::array();
    for (const auto& v : r.votes)
        votes.push_back({{"annotator", v.annotator}, {"label", to_string(v.label)}, {"timestamp", v.timestamp_ms}});
    json j = {{"commit_id", r.commit_id},
              {"origin", to_string(r.origin)},
              {"votes", votes},
              {"consensus", r.consensus ? json(to_string(*r.consensus)) : json(nullptr)},
              {"model_score", r.model_score ? json(*r.model_score) : json(nullptr)},
              {"matched_keywords", r.matched_keywords},
              {"pattern", r.pattern ? patterns::to_json(*r.pattern) : json(nullptr)},
              {"cwe", r.cwe ? json(*r.cwe) : json(nullptr)}};
    j["bundle"] = r.bundle ? to_json(*r.bundle) : json(nullptr);
    if (r.graph)
        j["graph"] = {{"nodes", r.graph->nodes},
                      {"edges", r.graph->edges},
                      {"previous_nodes", r.graph->previous_nodes},
                      {"current_nodes", r.graph->current_nodes}};
    else
        j["graph"] = nullptr;
    return j;
}

LabelRecord label_record_from_json(const json& j) {
    LabelRecord r;
    r.commit_id = j.at("commit_id").get<std::string>();
    if (r.commit_id.empty()) throw BadConfig("record without commit_id");
    r.origin = origin_from_string(j.at("origin").get<std::string>());
    for (const auto& v : j.value("votes", json::array()))
        r.votes.push_back({v.at("annotator").get<std::string>(), vote_label_from_string(v.at("label").get<std::string>()),
                           v.value("timestamp", std::int64_t{0})});
    auto opt = [&](const char* k) { return j.contains(k) && !j.at(k).is_null(); };
    if (opt("consensus")) r.consensus = verdict_from_string(j.at("consensus").get<std::string>());
    if (opt("model_score")) {
        r.model_score = j.at("model_score").get<double>();
        if (*r.model_score < 0.0 || *r.model_score > 1.0) throw BadConfig("model_score outside [0, 1]");
    }
    if (opt("matched_keywords")) r.matched_keywords = j.at("matched_keywords").get<std::vector<std::string>>();
    if (opt("pattern")) r.pattern = patterns::pattern_label_from_json(j.at("pattern"));
    if (opt("cwe")) r.cwe = j.at("cwe").get<std::string>();
    if (opt("bundle")) r.bundle = bundle_from_json(j.at("bundle"));
    if (opt("graph")) {
        const auto& g = j.at("graph");
        r.graph = GraphCounts{g.at("nodes").get<std::size_t>(), g.at("edges").get<std::size_t>(),
                              g.at("previous_nodes").get<std::size_t>(), g.at("current_nodes").get<std::size_t>()};
    }
    return r;
}

json summary_json(const LabelRecord& r) {
    auto j = to_json(r);
    j.erase("bundle");
    j["status"] = to_string(r.status());
    j["source"] = to_string(source_of(r.origin));
    j["repo"] = r.repo();
    j["message"] = r.bundle ? r.bundle->message.substr(0, r.bundle->message.find('\n')) : "";
    return j;
}

json to_json(const DatasetStats& s) {
    auto comp = json::array();
    for (const auto& c : s.composition)
        comp.push_back({{"origin", to_string(c.origin)},
                        {"candidates", c.candidates},
                        {"security", c.security},
                        {"non_security", c.non_security},
                        {"undecided", c.undecided}});
    auto eff = json::array();
    for (const auto& e : s.efficiency)
        eff.push_back({{"source", to_string(e.source)}, {"candidates", e.candidates}, {"verified", e.verified}, {"ratio", e.ratio}});
    auto pat = json::array();
    long total = 0;
    for (long c : s.patterns) total += c;
    for (std::size_t i = 0; i < s.patterns.size(); ++i)
        pat.push_back({{"category", patterns::to_string(patterns::all_categories[i])},
                       {"count", s.patterns[i]},
                       {"proportion", total ? 100.0 * static_cast<double>(s.patterns[i]) / static_cast<double>(total) : 0.0}});
    auto pairs = [](const auto& v, const char* key) {
        auto a = json::array();
        for (const auto& [k, n] : v) a.push_back({{key, k}, {"count", n}});
        return a;
    };
    return {{"composition", comp}, {"efficiency", eff}, {"patterns", pat}, {"repos", pairs(s.repos, "repo")}, {"cwe", pairs(s.cwe, "cwe")}};
}

json to_json(const SkipEntry& s) {
    return {{"commit", s.commit}, {"stage", s.stage}, {"reason", s.reason}, {"detail", s.detail}};
}

std::string composition_tsv(const DatasetStats& s) {
    std::string out = "origin\tcandidates\tsecurity\tnon_security\tundecided\n";
    for (const auto& c : s.composition)
        out += std::string(to_string(c.origin)) + '\t' + std::to_string(c.candidates) + '\t' + std::to_string(c.security) + '\t' +
               std::to_string(c.non_security) + '\t' + std::to_string(c.undecided) + '\n';
    return out;
}

std::string efficiency_tsv(const DatasetStats& s) {
    std::string out = "source\tcandidates\tverified\tratio\n";
    char buf[32];
    for (const auto& e : s.efficiency) {
        std::snprintf(buf, sizeof buf, "%.4f", e.ratio);
        out += std::string(to_string(e.source)) + '\t' + std::to_string(e.candidates) + '\t' + std::to_string(e.verified) + '\t' +
               buf + '\n';
    }
    return out;
}

// ---- Store ----

Store::Store(fs::path dir, StoreOptions opts) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    if (fs::exists(dir_ / annotators_file)) {
        std::ifstream in(dir_ / annotators_file);
        try {
            annotators_ = json::parse(in).get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw BadConfig(std::string("annotators.json: ") + e.what());
        }
    } else {
        annotators_ = std::move(opts.annotators);
        std::set<std::string> seen;
        for (const auto& a : annotators_)
            if (a.empty() || !seen.insert(a).second) throw BadConfig("annotator names must be unique and non-empty");
        write_annotators();
    }
    load();
}

void Store::write_annotators() { write_atomic(dir_ / annotators_file, json(annotators_).dump() + "\n"); }

void Store::load() {
    auto parse = [&](const std::string& file, const std::string& line, std::size_t n) {
        try {
            return json::parse(line);
        } catch (const json::exception& e) {
            throw BadConfig(file + ":" + std::to_string(n) + ": " + e.what());
        }
    };
    std::size_t n = 0;
    for (const auto& line : read_lines(dir_ / commits_file)) {
        auto r = label_record_from_json(parse(commits_file, line, ++n));
        r.votes.clear();
        r.consensus.reset();
        records_[r.commit_id] = std::move(r);
    }
    n = 0;
    for (const auto& line : read_lines(dir_ / votes_file)) {
        auto j = parse(votes_file, line, ++n);
        auto it = records_.find(j.at("commit_id").get<std::string>());
        if (it == records_.end()) continue;
        it->second.votes.push_back({j.at("annotator").get<std::string>(), vote_label_from_string(j.at("label").get<std::string>()),
                                    j.value("timestamp", std::int64_t{0})});
    }
    n = 0;
    for (const auto& line : read_lines(dir_ / consensus_file)) {
        auto j = parse(consensus_file, line, ++n);
        auto it = records_.find(j.at("commit_id").get<std::string>());
        if (it != records_.end()) it->second.consensus = verdict_from_string(j.at("consensus").get<std::string>());
    }
    n = 0;
    for (const auto& line : read_lines(dir_ / skipped_file)) {
        auto j = parse(skipped_file, line, ++n);
        skipped_.push_back({j.value("commit", ""), j.value("stage", ""), j.value("reason", ""), j.value("detail", "")});
    }
}

void Store::append_line(const std::string& file, const json& j) {
    std::ofstream out(dir_ / file, std::ios::app | std::ios::binary);
    if (!out) throw NotFound("cannot append to " + (dir_ / file).string());
    out << j.dump() << '\n';
    out.flush();
}

std::vector<std::string> Store::annotators() const {
    std::shared_lock lock(mu_);
    return annotators_;
}

bool Store::register_annotator(const std::string& name) {
    if (name.empty()) throw BadConfig("empty annotator name");
    std::unique_lock lock(mu_);
    if (is_annotator(name)) return false;
    annotators_.push_back(name);
    write_annotators();
    return true;
}

bool Store::is_annotator(const std::string& name) const {
    return std::find(annotators_.begin(), annotators_.end(), name) != annotators_.end();
}

void Store::put_record(const LabelRecord& r) {
    if (r.commit_id.empty()) throw BadConfig("record without commit_id");
    std::unique_lock lock(mu_);
    auto& slot = records_[r.commit_id];
    auto votes = std::move(slot.votes);
    auto consensus = slot.consensus;
    slot = r;
    slot.votes = std::move(votes);
    slot.consensus = consensus;
    append_line(commits_file, metadata_json(slot));
}

bool Store::add_candidate(const LabelRecord& r) {
    if (r.commit_id.empty()) throw BadConfig("record without commit_id");
    std::unique_lock lock(mu_);
    if (records_.contains(r.commit_id)) return false;
    auto& slot = records_[r.commit_id];
    slot = r;
    slot.votes.clear();
    slot.consensus.reset();
    append_line(commits_file, metadata_json(slot));
    return true;
}

bool Store::contains(const std::string& commit_id) const {
    std::shared_lock lock(mu_);
    return records_.contains(commit_id);
}

LabelRecord Store::get_record(const std::string& commit_id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(commit_id);
    if (it == records_.end()) throw NotFound("no commit " + commit_id);
    return it->second;
}

std::vector<LabelRecord> Store::list_candidates(const CandidateFilter& f) const {
    std::shared_lock lock(mu_);
    std::vector<LabelRecord> out;
    for (const auto& [id, r] : records_) {
        if (f.origin && r.origin != *f.origin) continue;
        if (f.status && r.status() != *f.status) continue;
        if (f.source && source_of(r.origin) != *f.source) continue;
        out.push_back(r);
    }
    return out;
}

std::size_t Store::size() const {
    std::shared_lock lock(mu_);
    return records_.size();
}

LabelRecord Store::record_vote(const std::string& commit_id, const std::string& annotator, VoteLabel label,
                               std::optional<std::size_t> expected_votes, bool finalize_when_decisive) {
    std::unique_lock lock(mu_);
    auto it = records_.find(commit_id);
    if (it == records_.end()) throw NotFound("no commit " + commit_id);
    if (!is_annotator(annotator)) throw UnknownAnnotator("annotator '" + annotator + "' is not registered");
    auto& r = it->second;
    if (r.consensus) throw ConflictingWrite("consensus for " + commit_id + " is already final");
    if (expected_votes && *expected_votes != r.votes.size())
        throw ConflictingWrite("vote log for " + commit_id + " has " + std::to_string(r.votes.size()) + " entries, expected " +
                               std::to_string(*expected_votes));
    Vote v{annotator, label, now_ms()};
    append_line(votes_file, {{"commit_id", commit_id}, {"annotator", v.annotator}, {"label", to_string(v.label)}, {"timestamp", v.timestamp_ms}});
    r.votes.push_back(v);
    if (finalize_when_decisive) {
        auto state = evaluate_votes(r.votes, annotators_);
        if (state == ConsensusState::security || state == ConsensusState::non_security) {
            r.consensus = state == ConsensusState::security ? Verdict::security : Verdict::non_security;
            append_line(consensus_file, {{"commit_id", commit_id}, {"consensus", to_string(*r.consensus)}, {"timestamp", v.timestamp_ms}});
        }
    }
    return r;
}

std::optional<Verdict> Store::finalize(const std::string& commit_id) {
    std::unique_lock lock(mu_);
    auto it = records_.find(commit_id);
    if (it == records_.end()) throw NotFound("no commit " + commit_id);
    auto& r = it->second;
    if (r.consensus) throw ConflictingWrite("consensus for " + commit_id + " is already final");
    auto state = evaluate_votes(r.votes, annotators_);
    if (state != ConsensusState::security && state != ConsensusState::non_security) return std::nullopt;
    r.consensus = state == ConsensusState::security ? Verdict::security : Verdict::non_security;
    append_line(consensus_file, {{"commit_id", commit_id}, {"consensus", to_string(*r.consensus)}, {"timestamp", now_ms()}});
    return r.consensus;
}

ConsensusView Store::consensus(const std::string& commit_id) const {
    std::shared_lock lock(mu_);
    auto it = records_.find(commit_id);
    if (it == records_.end()) throw NotFound("no commit " + commit_id);
    return {evaluate_votes(it->second.votes, annotators_), it->second.consensus};
}

void Store::record_skip(const SkipEntry& s) {
    std::unique_lock lock(mu_);
    if (std::find(skipped_.begin(), skipped_.end(), s) != skipped_.end()) return;
    skipped_.push_back(s);
    append_line(skipped_file, to_json(s));
}

std::vector<SkipEntry> Store::skipped() const {
    std::shared_lock lock(mu_);
    return skipped_;
}

DatasetStats Store::stats(std::size_t top_repos) const {
    std::shared_lock lock(mu_);
    DatasetStats s;
    for (auto o : all_origins) s.composition.push_back({o});
    for (auto src : all_sources) s.efficiency.push_back({src});
    std::map<std::string, long> repos, cwe;
    for (const auto& [id, r] : records_) {
        auto& c = s.composition[static_cast<std::size_t>(r.origin)];
        auto& e = s.efficiency[static_cast<std::size_t>(source_of(r.origin))];
        ++c.candidates;
        ++e.candidates;
        if (r.consensus == Verdict::security) {
            ++c.security;
            ++e.verified;
            ++repos[r.repo()];
            if (r.cwe) ++cwe[*r.cwe];
            ++s.patterns[static_cast<std::size_t>(r.pattern ? r.pattern->category : patterns::Category::Other)];
        } else if (r.consensus == Verdict::non_security) {
            ++c.non_security;
        } else {
            ++c.undecided;
        }
    }
    for (auto& e : s.efficiency) e.ratio = efficiency_ratio(e.verified, e.candidates);
    s.repos.assign(repos.begin(), repos.end());
    sort_desc(s.repos);
    if (s.repos.size() > top_repos) s.repos.resize(top_repos);
    s.cwe.assign(cwe.begin(), cwe.end());
    sort_desc(s.cwe);
    return s;
}

void Store::compact() {
    std::unique_lock lock(mu_);
    std::string out;
    for (const auto& [id, r] : records_) out += metadata_json(r).dump() + '\n';
    write_atomic(dir_ / commits_file, out);
}

void Store::export_records(const fs::path& path) const {
    std::shared_lock lock(mu_);
    std::string out;
    for (const auto& [id, r] : records_) out += to_json(r).dump() + '\n';
    write_atomic(path, out);
}

std::size_t Store::import_records(const fs::path& path) {
    if (!fs::exists(path)) throw NotFound("record file " + path.string());
    std::vector<LabelRecord> incoming;
    std::size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        try {
            incoming.push_back(label_record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw BadConfig(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    std::unique_lock lock(mu_);
    for (auto& r : incoming) {
        for (const auto& v : r.votes) {
            if (!is_annotator(v.annotator)) {
                annotators_.push_back(v.annotator);
                write_annotators();
            }
            append_line(votes_file, {{"commit_id", r.commit_id}, {"annotator", v.annotator}, {"label", to_string(v.label)}, {"timestamp", v.timestamp_ms}});
        }
        auto it = records_.find(r.commit_id);
        if (it != records_.end()) {
            r.votes.insert(r.votes.begin(), it->second.votes.begin(), it->second.votes.end());
            if (it->second.consensus) r.consensus = it->second.consensus;
            else if (r.consensus) append_line(consensus_file, {{"commit_id", r.commit_id}, {"consensus", to_string(*r.consensus)}, {"timestamp", now_ms()}});
        } else if (r.consensus) {
            append_line(consensus_file, {{"commit_id", r.commit_id}, {"consensus", to_string(*r.consensus)}, {"timestamp", now_ms()}});
        }
        append_line(commits_file, metadata_json(r));
        records_[r.commit_id] = std::move(r);
    }
    return incoming.size();
}

}  // namespace scopy::store
