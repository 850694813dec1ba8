#include "scopy/pipeline.hpp"

#include "scopy/errors.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>

namespace scopy::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Outcome of the per-commit work, written to the store in input order.
struct Outcome {
    enum Kind { enqueue, filtered, skip } kind = filtered;
    store::LabelRecord record;
    store::SkipEntry skip_entry;
};

Outcome skipped(std::string commit, std::string stage, const Error& e) {
    Outcome o;
    o.kind = Outcome::skip;
    o.skip_entry = {std::move(commit), std::move(stage), e.code(), e.what()};
    return o;
}

void apply(store::Store& s, std::vector<Outcome>& outcomes, RunReport& rep) {
    for (auto& o : outcomes) {
        switch (o.kind) {
            case Outcome::enqueue:
                if (s.add_candidate(o.record)) ++rep.enqueued;
                else ++rep.already_stored;
                break;
            case Outcome::filtered:
                ++rep.filtered_out;
                break;
            case Outcome::skip:
                s.record_skip(o.skip_entry);
                rep.skipped.push_back(o.skip_entry);
                break;
        }
    }
    rep.processed = outcomes.size();
}

std::optional<store::GraphCounts> try_counts(const ingest::CommitBundle& b) {
    try {
        return counts_of(cpg::build_commit_cpg(b));
    } catch (const Error&) {
        return std::nullopt;
    }
}

std::string ref_id(const ingest::CommitRef& r) { return r.owner + "__" + r.repo + "@" + r.hash; }

}  // namespace

json to_json(const RunReport& r) {
    auto skips = json::array();
    for (const auto& s : r.skipped) skips.push_back(store::to_json(s));
    return {{"stage", r.stage},
            {"processed", r.processed},
            {"enqueued", r.enqueued},
            {"already_stored", r.already_stored},
            {"filtered_out", r.filtered_out},
            {"skipped", skips}};
}

fs::path default_data_dir() {
    if (const char* d = std::getenv("SCOPY_DATA_DIR"); d && *d) return d;
    return "data";
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr error;
    auto run = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < failed_at) {
                    failed_at = i;
                    error = std::current_exception();
                }
            }
        }
    };
    if (workers == 1) {
        run();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    }
    if (error) std::rethrow_exception(error);
}

ingest::CommitBundle source_only(ingest::CommitBundle b, const ingest::SourceFilter& filter) {
    b.files = ingest::filter_sources(std::move(b.files), filter);
    if (b.files.empty()) throw NoSourceFiles("commit " + b.commit_id() + " changes no source files");
    return b;
}

GraphResult graph_path(const ingest::CommitBundle& bundle, const embed::Embedder& e, const ingest::SourceFilter& filter,
                       std::optional<int> label) {
    auto src = source_only(bundle, filter);
    auto g = cpg::build_commit_cpg(src);
    auto emb = embed::embed_graph(g, e, src.commit_id(), label);
    return {std::move(g), std::move(emb)};
}

store::GraphCounts counts_of(const cpg::MergedCpg& g) {
    auto s = cpg::summarize(g);
    return {s.nodes, s.edges, s.previous_nodes, s.current_nodes};
}

std::vector<ReferenceRow> load_references(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("reference file " + path.string());
    std::vector<ReferenceRow> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) f.push_back(line.substr(start, tab - start));
        f.push_back(line.substr(start));
        if (f.size() < 2 || f.size() > 3 || f[1].empty())
            throw BadConfig(path.string() + ":" + std::to_string(n) + ": expected CVE<TAB>URL[<TAB>CWE]");
        ReferenceRow r{f[0], f[1], {}};
        if (f.size() == 3 && !f[2].empty()) r.cwe = f[2];
        out.push_back(std::move(r));
    }
    return out;
}

RunReport run_base(store::Store& s, const std::vector<ReferenceRow>& refs, const ingest::CommitSource& source,
                   const RunOptions& opts) {
    RunReport rep{"base"};
    std::vector<Outcome> out(refs.size());
    parallel_for(refs.size(), opts.workers, [&](std::size_t i) {
        const auto& row = refs[i];
        std::string who = row.url;
        try {
            auto ref = ingest::parse_cve_reference(row.url);
            who = ref_id(ref);
            auto bundle = source_only(source.fetch(ref), opts.filter);
            bundle.origin = ingest::Origin::cve_linked;
            Outcome o;
            o.kind = Outcome::enqueue;
            o.record.commit_id = bundle.commit_id();
            o.record.origin = store::DatasetOrigin::base;
            o.record.cwe = row.cwe;
            o.record.pattern = patterns::tag(bundle, opts.apis);
            o.record.graph = try_counts(bundle);
            o.record.bundle = std::move(bundle);
            out[i] = std::move(o);
        } catch (const Error& e) {
            out[i] = skipped(who, "base", e);
        }
    });
    apply(s, out, rep);
    return rep;
}

RunReport run_pilot(store::Store& s, const fs::path& commit_root, const keywords::KeywordSet& ks, const RunOptions& opts) {
    RunReport rep{"pilot"};
    ingest::FixtureCommitSource source(commit_root);
    auto refs = source.list();
    std::vector<Outcome> out(refs.size());
    parallel_for(refs.size(), opts.workers, [&](std::size_t i) {
        try {
            auto bundle = source.fetch(refs[i]);
            auto matched = keywords::match(bundle.message, ks);
            if (matched.empty()) return;
            bundle = source_only(std::move(bundle), opts.filter);
            bundle.origin = ingest::Origin::keyword_candidate;
            Outcome o;
            o.kind = Outcome::enqueue;
            o.record.commit_id = bundle.commit_id();
            o.record.origin = store::DatasetOrigin::pilot;
            o.record.matched_keywords = std::move(matched);
            o.record.pattern = patterns::tag(bundle, opts.apis);
            o.record.graph = try_counts(bundle);
            o.record.bundle = std::move(bundle);
            out[i] = std::move(o);
        } catch (const Error& e) {
            out[i] = skipped(ref_id(refs[i]), "pilot", e);
        }
    });
    apply(s, out, rep);
    return rep;
}

RunReport run_augmented(store::Store& s, const fs::path& commit_root, const model::Checkpoint& ckpt, const RunOptions& opts) {
    RunReport rep{"augmented"};
    auto embedder = embed::make_embedder(ckpt.embedder);
    if (embedder->dim() != ckpt.config.embed_dim) throw BadConfig("embedder width does not match the checkpoint");
    const double threshold = opts.threshold.value_or(ckpt.config.threshold);
    ingest::FixtureCommitSource source(commit_root);
    auto refs = source.list();
    std::vector<Outcome> out(refs.size());
    parallel_for(refs.size(), opts.workers, [&](std::size_t i) {
        try {
            auto bundle = source.fetch(refs[i]);
            auto g = graph_path(bundle, *embedder, opts.filter);
            double p = model::classify(ckpt.params, ckpt.config, g.embedded, threshold).probability;
            if (p < threshold) return;
            bundle = source_only(std::move(bundle), opts.filter);
            bundle.origin = ingest::Origin::model_candidate;
            Outcome o;
            o.kind = Outcome::enqueue;
            o.record.commit_id = bundle.commit_id();
            o.record.origin = store::DatasetOrigin::augmented;
            o.record.model_score = p;
            o.record.pattern = patterns::tag(bundle, opts.apis);
            o.record.graph = counts_of(g.graph);
            o.record.bundle = std::move(bundle);
            out[i] = std::move(o);
        } catch (const Error& e) {
            out[i] = skipped(ref_id(refs[i]), "augmented", e);
        }
    });
    apply(s, out, rep);
    return rep;
}

TrainResult train_on_commits(const std::vector<LabeledCommit>& data, const model::ModelConfig& cfg, const json& embedder_config,
                             const RunOptions& opts) {
    cfg.validate();
    auto embedder = embed::make_embedder(embedder_config);
    if (embedder->dim() != cfg.embed_dim) throw BadConfig("embedder width does not match embed_dim");
    std::vector<std::optional<embed::EmbeddedGraph>> graphs(data.size());
    std::vector<std::optional<store::SkipEntry>> skips(data.size());
    parallel_for(data.size(), opts.workers, [&](std::size_t i) {
        try {
            graphs[i] = graph_path(data[i].bundle, *embedder, opts.filter, data[i].label).embedded;
        } catch (const Error& e) {
            skips[i] = store::SkipEntry{data[i].bundle.commit_id(), "train", e.code(), e.what()};
        }
    });
    TrainResult res;
    std::vector<embed::EmbeddedGraph> usable;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (graphs[i]) usable.push_back(std::move(*graphs[i]));
        if (skips[i]) res.skipped.push_back(*skips[i]);
    }
    res.used = usable.size();
    res.checkpoint.config = cfg;
    res.checkpoint.embedder = embedder->config();
    res.checkpoint.params = model::init_params<double>(cfg, cfg.seed);
    res.checkpoint.history = model::train(res.checkpoint.params, usable, cfg);
    return res;
}

model::Prediction score_commit(const ingest::CommitBundle& bundle, const model::Checkpoint& ckpt, const embed::Embedder& e,
                               const RunOptions& opts) {
    auto g = graph_path(bundle, e, opts.filter);
    return model::classify(ckpt.params, ckpt.config, g.embedded, opts.threshold.value_or(ckpt.config.threshold));
}

std::vector<LabeledCommit> load_labeled_commits(const fs::path& labels, const std::vector<fs::path>& commit_roots) {
    std::ifstream in(labels);
    if (!in) throw NotFound("label file " + labels.string());
    std::vector<ingest::FixtureCommitSource> sources;
    for (const auto& r : commit_roots) sources.emplace_back(r);
    std::vector<LabeledCommit> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto where = labels.string() + ":" + std::to_string(n);
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw BadConfig(where + ": expected commit_id<TAB>label");
        auto id = line.substr(0, tab), label = line.substr(tab + 1);
        if (label != "security" && label != "non_security") throw BadConfig(where + ": unknown label " + label);
        auto at = id.find('@'), sep = id.find("__");
        if (at == std::string::npos || sep == std::string::npos || sep > at) throw BadConfig(where + ": bad commit id " + id);
        ingest::CommitRef ref{id.substr(0, sep), id.substr(sep + 2, at - sep - 2), id.substr(at + 1)};
        std::optional<ingest::CommitBundle> found;
        for (const auto& s : sources) {
            try {
                found = s.fetch(ref);
                break;
            } catch (const NotFound&) {
            }
        }
        if (!found) throw NotFound(where + ": commit " + id + " not under any commit root");
        out.push_back({std::move(*found), label == "security" ? 1 : 0});
    }
    return out;
}

std::vector<LabeledCommit> labeled_from_store(const store::Store& s) {
    std::vector<LabeledCommit> out;
    for (const auto& r : s.list_candidates({.status = store::Status::consensus}))
        if (r.bundle) out.push_back({*r.bundle, r.consensus == store::Verdict::security ? 1 : 0});
    return out;
}

}  // namespace scopy::pipeline
