// scopy: command line front end for the dataset pipeline.

#include "scopy/errors.hpp"
#include "scopy/pipeline.hpp"
#include "scopy/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

using namespace scopy;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
    fs::path data_dir = pipeline::default_data_dir();
    fs::path store_dir;
    std::size_t workers = 4;
    std::vector<std::string> exclude;

    fs::path store_path() const { return store_dir.empty() ? data_dir / "store" : store_dir; }

    pipeline::RunOptions run_options() const {
        pipeline::RunOptions ro;
        ro.workers = workers;
        ro.filter.exclude_patterns = exclude;
        return ro;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw NotFound("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    try {
        return json::parse(slurp(p));
    } catch (const json::exception& e) {
        throw BadConfig(p.string() + ": " + e.what());
    }
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) throw NotFound("cannot write " + out);
    f << text;
}

ingest::CommitRef parse_id(const std::string& id) {
    auto at = id.find('@'), sep = id.find("__");
    if (at == std::string::npos || sep == std::string::npos || sep > at) throw BadConfig("commit id must look like owner__repo@hash");
    return {id.substr(0, sep), id.substr(sep + 2, at - sep - 2), id.substr(at + 1)};
}

keywords::KeywordSet keyword_set(const Globals& g, const std::string& file) {
    if (!file.empty()) return keywords::load_keywords(file);
    if (fs::exists(g.data_dir / "keywords.tsv")) return keywords::load_keywords(g.data_dir / "keywords.tsv");
    return keywords::default_keywords();
}

patterns::SecureApiTable api_table(const Globals& g, const std::string& file) {
    if (!file.empty()) return patterns::load_secure_apis(file);
    if (fs::exists(g.data_dir / "secure_apis.tsv")) return patterns::load_secure_apis(g.data_dir / "secure_apis.tsv");
    return patterns::default_secure_apis();
}

ingest::CommitBundle bundle_input(const Globals& g, const std::string& bundle_file, const std::string& id, const std::string& root) {
    if (!bundle_file.empty()) return store::bundle_from_json(read_json(bundle_file));
    if (id.empty()) throw BadConfig("give --bundle or --id");
    return ingest::make_commit_source(root.empty() ? g.data_dir : fs::path(root))->fetch(parse_id(id));
}

void print_report(const pipeline::RunReport& r) {
    std::cout << to_json(r).dump(2) << '\n';
    for (const auto& s : r.skipped) std::cerr << "skipped " << s.commit << ": " << s.reason << " (" << s.detail << ")\n";
}

service::Service* running_service = nullptr;

void on_signal(int) {
    if (running_service) running_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Security commit dataset pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--data-dir", g.data_dir, "Data directory (default $SCOPY_DATA_DIR or ./data)");
    app.add_option("--store", g.store_dir, "Store directory (default <data-dir>/store)");
    app.add_option("--workers", g.workers, "Worker threads")->check(CLI::Range(1, 256));
    app.add_option("--exclude", g.exclude, "Glob of source paths to ignore (repeatable)");

    std::function<void()> action;

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "Fetch one commit and print its bundle as JSON");
    std::string url, id, root, out;
    auto* url_opt = ingest_cmd->add_option("--url", url, "GitHub commit URL");
    auto* id_opt = ingest_cmd->add_option("--id", id, "owner__repo@hash");
    url_opt->excludes(id_opt);
    ingest_cmd->add_option("--commit-root", root, "Directory holding commits/ (default data dir)");
    ingest_cmd->add_option("--out", out, "Output file");
    ingest_cmd->callback([&] {
        action = [&] {
            if (url.empty() && id.empty()) throw BadConfig("give --url or --id");
            auto ref = url.empty() ? parse_id(id) : ingest::parse_cve_reference(url);
            auto b = ingest::make_commit_source(root.empty() ? g.data_dir : fs::path(root))->fetch(ref);
            emit(store::to_json(b).dump(2) + "\n", out);
        };
    });

    // build-graph
    auto* graph_cmd = app.add_subcommand("build-graph", "Build the sliced CommitCPG of one commit");
    std::string bundle_file;
    bool merged_only = false;
    graph_cmd->add_option("--bundle", bundle_file, "Bundle JSON from `ingest`");
    graph_cmd->add_option("--id", id, "owner__repo@hash");
    graph_cmd->add_option("--commit-root", root, "Directory holding commits/");
    graph_cmd->add_flag("--merged-only", merged_only, "Skip slicing");
    graph_cmd->add_option("--out", out, "Output file");
    graph_cmd->callback([&] {
        action = [&] {
            auto b = pipeline::source_only(bundle_input(g, bundle_file, id, root), g.run_options().filter);
            auto j = merged_only ? cpg::to_json(cpg::build_merged_cpg(b)) : cpg::to_json(cpg::build_commit_cpg(b));
            j["commit_id"] = b.commit_id();
            emit(j.dump(2) + "\n", out);
        };
    });

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "Embed a CommitCPG as node and edge matrices");
    std::string graph_file, embed_file;
    int embed_dim = 64;
    std::uint64_t embed_seed = 0;
    embed_cmd->add_option("--graph", graph_file, "CommitCPG JSON from `build-graph`")->required();
    embed_cmd->add_option("--embedder-file", embed_file, "Token vector table instead of hashing");
    embed_cmd->add_option("--dim", embed_dim, "Hash embedding width");
    embed_cmd->add_option("--seed", embed_seed, "Hash embedding seed");
    embed_cmd->add_option("--out", out, "Output file");
    embed_cmd->callback([&] {
        action = [&] {
            auto j = read_json(graph_file);
            auto cfg = embed_file.empty() ? json{{"kind", "hash"}, {"dim", embed_dim}, {"seed", embed_seed}}
                                          : json{{"kind", "file"}, {"path", embed_file}};
            auto e = embed::make_embedder(cfg);
            auto emb = embed::embed_graph(cpg::commit_cpg_from_json(j), *e, j.value("commit_id", ""));
            emit(embed::to_json(emb).dump() + "\n", out);
        };
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a classifier and write a checkpoint");
    std::string labels_file, attention = "joint";
    std::vector<std::string> roots;
    bool from_store = false;
    model::ModelConfig mcfg;
    train_cmd->add_option("--labels", labels_file, "commit_id<TAB>security|non_security");
    train_cmd->add_option("--commit-root", roots, "Directories holding commits/ (repeatable)");
    train_cmd->add_flag("--from-store", from_store, "Use finalized store records instead of --labels");
    train_cmd->add_option("--out", out, "Checkpoint path")->required();
    train_cmd->add_option("--epochs", mcfg.epochs);
    train_cmd->add_option("--lr", mcfg.learning_rate);
    train_cmd->add_option("--seed", mcfg.seed);
    train_cmd->add_option("--hidden", mcfg.hidden_dim);
    train_cmd->add_option("--heads", mcfg.heads);
    train_cmd->add_option("--mlp-hidden", mcfg.mlp_hidden);
    train_cmd->add_option("--embed-dim", mcfg.embed_dim);
    train_cmd->add_option("--threshold", mcfg.threshold);
    train_cmd->add_option("--attention", attention)->check(CLI::IsMember({"joint", "per_type"}));
    train_cmd->callback([&] {
        action = [&] {
            mcfg.attention = attention == "per_type" ? model::ModelConfig::Attention::per_type : model::ModelConfig::Attention::joint;
            std::vector<pipeline::LabeledCommit> data;
            if (from_store) {
                data = pipeline::labeled_from_store(store::Store(g.store_path()));
            } else {
                if (labels_file.empty()) throw BadConfig("give --labels or --from-store");
                std::vector<fs::path> rs(roots.begin(), roots.end());
                if (rs.empty()) rs.push_back(g.data_dir);
                data = pipeline::load_labeled_commits(labels_file, rs);
            }
            auto ro = g.run_options();
            auto res = pipeline::train_on_commits(data, mcfg, {{"kind", "hash"}, {"dim", mcfg.embed_dim}, {"seed", 0}}, ro);
            model::save_checkpoint(res.checkpoint, out);
            for (const auto& s : res.skipped) std::cerr << "skipped " << s.commit << ": " << s.reason << '\n';
            const auto& h = res.checkpoint.history.epoch_loss;
            std::cout << json{{"graphs", res.used},
                              {"skipped", res.skipped.size()},
                              {"first_loss", h.empty() ? 0.0 : h.front()},
                              {"last_loss", h.empty() ? 0.0 : h.back()}}
                             .dump()
                      << '\n';
        };
    });

    // classify
    auto* classify_cmd = app.add_subcommand("classify", "Score commits with a checkpoint");
    std::string ckpt_file;
    std::optional<double> threshold;
    classify_cmd->add_option("--checkpoint", ckpt_file)->required();
    classify_cmd->add_option("--commit-root", root, "Directory holding commits/");
    classify_cmd->add_option("--id", id, "Only this commit");
    classify_cmd->add_option("--bundle", bundle_file, "Bundle JSON");
    classify_cmd->add_option("--threshold", threshold);
    classify_cmd->callback([&] {
        action = [&] {
            auto ck = model::load_checkpoint(ckpt_file);
            auto e = embed::make_embedder(ck.embedder);
            auto ro = g.run_options();
            ro.threshold = threshold;
            std::vector<ingest::CommitBundle> bundles;
            if (!bundle_file.empty() || !id.empty()) {
                bundles.push_back(bundle_input(g, bundle_file, id, root));
            } else {
                ingest::FixtureCommitSource src(root.empty() ? g.data_dir : fs::path(root));
                for (const auto& r : src.list()) {
                    try {
                        bundles.push_back(src.fetch(r));
                    } catch (const Error& err) {
                        std::cerr << "skipped " << r.owner << "__" << r.repo << "@" << r.hash << ": " << err.code() << '\n';
                    }
                }
            }
            for (const auto& b : bundles) {
                try {
                    auto p = pipeline::score_commit(b, ck, *e, ro);
                    std::cout << b.commit_id() << '\t' << p.probability << '\t' << model::to_string(p.label) << '\n';
                } catch (const Error& err) {
                    std::cerr << "skipped " << b.commit_id() << ": " << err.code() << " (" << err.what() << ")\n";
                }
            }
        };
    });

    // mine-keywords
    auto* mine_cmd = app.add_subcommand("mine-keywords", "Extract keywords from labeled commit summaries");
    std::string docs_file;
    keywords::ExtractOptions xo;
    int lda_topics = 0;
    mine_cmd->add_option("--in", docs_file, "JSONL of {message, label, cwe?, cve_description?}");
    mine_cmd->add_flag("--from-store", from_store, "Use finalized store records");
    mine_cmd->add_option("--out", out, "Keyword TSV");
    mine_cmd->add_option("--freq-min", xo.freq_min);
    mine_cmd->add_option("--corr-min", xo.corr_min);
    mine_cmd->add_option("--lda-topics", lda_topics, "0 disables the topic channel");
    mine_cmd->callback([&] {
        action = [&] {
            std::vector<keywords::SummaryDoc> sec, non;
            auto add = [&](std::string cid, const std::string& msg, const std::string& cwe, const std::string& cve, bool security) {
                auto d = keywords::make_summary(std::move(cid), msg, cwe, cve,
                                                security ? keywords::DocLabel::security : keywords::DocLabel::non_security);
                (security ? sec : non).push_back(std::move(d));
            };
            if (from_store) {
                store::Store s(g.store_path());
                for (const auto& r : s.list_candidates({.status = store::Status::consensus}))
                    add(r.commit_id, r.bundle ? r.bundle->message : "", r.cwe.value_or(""), "", r.consensus == store::Verdict::security);
            } else {
                if (docs_file.empty()) throw BadConfig("give --in or --from-store");
                std::ifstream in(docs_file);
                if (!in) throw NotFound("cannot read " + docs_file);
                std::string line;
                for (int n = 1; std::getline(in, line); ++n) {
                    if (line.empty()) continue;
                    auto j = json::parse(line);
                    add("doc" + std::to_string(n), j.value("message", ""), j.value("cwe", ""), j.value("cve_description", ""),
                        j.at("label").get<std::string>() == "security");
                }
            }
            auto table = keywords::score_tokens(sec, non);
            std::optional<keywords::LdaModel> lda;
            if (lda_topics > 0) {
                keywords::LdaOptions lo;
                lo.topics = lda_topics;
                lda = keywords::fit_lda(sec, lo);
            }
            auto ks = keywords::extract_keywords(table, xo, lda ? &*lda : nullptr);
            if (out.empty()) {
                for (const auto& e : ks.entries()) std::cout << e.n << '\t' << e.phrase << '\t' << e.frequency << '\t' << e.correlation << '\n';
            } else {
                keywords::save_keywords(ks, out);
            }
        };
    });

    // filter
    auto* filter_cmd = app.add_subcommand("filter", "List commits whose message matches a keyword");
    std::string kw_file;
    filter_cmd->add_option("--commit-root", root, "Directory holding commits/")->required();
    filter_cmd->add_option("--keywords", kw_file, "Keyword TSV (default data dir, then built-in table)");
    filter_cmd->callback([&] {
        action = [&] {
            auto ks = keyword_set(g, kw_file);
            ingest::FixtureCommitSource src(root);
            for (const auto& r : src.list()) {
                auto b = src.fetch(r);
                auto m = keywords::match(b.message, ks);
                if (m.empty()) continue;
                std::cout << b.commit_id() << '\t';
                for (std::size_t i = 0; i < m.size(); ++i) std::cout << (i ? "," : "") << m[i];
                std::cout << '\n';
            }
        };
    });

    // tag-patterns
    auto* tag_cmd = app.add_subcommand("tag-patterns", "Tag fix patterns and print the distribution");
    std::string in_file, api_file, labels_out;
    tag_cmd->add_option("--in", in_file, "JSONL of bundles or store records");
    tag_cmd->add_option("--commit-root", root, "Directory holding commits/");
    tag_cmd->add_option("--api-table", api_file, "Secure API table");
    tag_cmd->add_option("--labels-out", labels_out, "Per-commit labels as JSONL");
    tag_cmd->callback([&] {
        action = [&] {
            auto apis = api_table(g, api_file);
            std::vector<ingest::CommitBundle> bundles;
            if (!in_file.empty()) {
                std::ifstream in(in_file);
                if (!in) throw NotFound("cannot read " + in_file);
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    auto j = json::parse(line);
                    if (j.contains("bundle")) {
                        if (!j["bundle"].is_null()) bundles.push_back(store::bundle_from_json(j["bundle"]));
                    } else {
                        bundles.push_back(store::bundle_from_json(j));
                    }
                }
            } else {
                if (root.empty()) throw BadConfig("give --in or --commit-root");
                ingest::FixtureCommitSource src(root);
                for (const auto& r : src.list()) bundles.push_back(src.fetch(r));
            }
            std::vector<patterns::PatternLabel> labels(bundles.size());
            pipeline::parallel_for(bundles.size(), g.workers, [&](std::size_t i) { labels[i] = patterns::tag(bundles[i], apis); });
            if (!labels_out.empty()) {
                std::string text;
                for (std::size_t i = 0; i < bundles.size(); ++i) {
                    auto j = patterns::to_json(labels[i]);
                    j["commit_id"] = bundles[i].commit_id();
                    text += j.dump() + '\n';
                }
                emit(text, labels_out);
            }
            std::cout << patterns::report_tsv(patterns::report(labels));
        };
    });

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "Dataset composition, efficiency and distributions");
    std::string format = "tsv";
    std::size_t top = 5;
    stats_cmd->add_option("--format", format)->check(CLI::IsMember({"tsv", "json"}));
    stats_cmd->add_option("--top", top, "Repositories listed");
    stats_cmd->callback([&] {
        action = [&] {
            auto st = store::Store(g.store_path()).stats(top);
            if (format == "json") {
                std::cout << store::to_json(st).dump(2) << '\n';
                return;
            }
            std::cout << store::composition_tsv(st) << '\n' << store::efficiency_tsv(st) << '\n';
            long tagged = 0;
            for (long c : st.patterns) tagged += c;
            if (tagged) std::cout << patterns::report_tsv(patterns::report_counts(st.patterns)) << '\n';
            std::cout << "repo\tsecurity\n";
            for (const auto& [r, n] : st.repos) std::cout << r << '\t' << n << '\n';
            std::cout << "\ncwe\tcount\n";
            for (const auto& [c, n] : st.cwe) std::cout << c << '\t' << n << '\n';
        };
    });

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve_cmd->add_option("--host", host);
    serve_cmd->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--keywords", kw_file);
    serve_cmd->add_option("--api-table", api_file);
    serve_cmd->callback([&] {
        action = [&] {
            store::Store s(g.store_path());
            service::ServiceOptions so;
            so.keywords = keyword_set(g, kw_file);
            so.apis = api_table(g, api_file);
            so.threads = g.workers;
            service::Service svc(s, so);
            if (!svc.bind(host, port)) throw BadConfig("cannot bind " + host + ":" + std::to_string(port));
            running_service = &svc;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on http://" << host << ":" << svc.port() << '\n';
            svc.listen();
            running_service = nullptr;
        };
    });

    // run-base / run-pilot / run-augmented
    auto* base_cmd = app.add_subcommand("run-base", "Collect CVE-linked commits");
    std::string refs_file;
    base_cmd->add_option("--references", refs_file, "CVE<TAB>URL[<TAB>CWE]")->required();
    base_cmd->add_option("--commit-root", root, "Fixture directory holding commits/ (default data dir)");
    base_cmd->callback([&] {
        action = [&] {
            store::Store s(g.store_path());
            auto ro = g.run_options();
            ro.apis = api_table(g, api_file);
            auto src = ingest::make_commit_source(root.empty() ? g.data_dir : fs::path(root));
            print_report(pipeline::run_base(s, pipeline::load_references(refs_file), *src, ro));
        };
    });

    auto* pilot_cmd = app.add_subcommand("run-pilot", "Queue keyword-matched wild commits");
    pilot_cmd->add_option("--commit-root", root, "Directory holding commits/")->required();
    pilot_cmd->add_option("--keywords", kw_file, "Keyword TSV");
    pilot_cmd->callback([&] {
        action = [&] {
            store::Store s(g.store_path());
            auto ro = g.run_options();
            ro.apis = api_table(g, api_file);
            print_report(pipeline::run_pilot(s, root, keyword_set(g, kw_file), ro));
        };
    });

    auto* aug_cmd = app.add_subcommand("run-augmented", "Queue wild commits the model scores as security");
    aug_cmd->add_option("--commit-root", root, "Directory holding commits/")->required();
    aug_cmd->add_option("--checkpoint", ckpt_file)->required();
    aug_cmd->add_option("--threshold", threshold);
    aug_cmd->callback([&] {
        action = [&] {
            store::Store s(g.store_path());
            auto ro = g.run_options();
            ro.threshold = threshold;
            ro.apis = api_table(g, api_file);
            print_report(pipeline::run_augmented(s, root, model::load_checkpoint(ckpt_file), ro));
        };
    });

    // export / import
    auto* export_cmd = app.add_subcommand("export", "Write every record as JSONL");
    export_cmd->add_option("--out", out)->required();
    export_cmd->callback([&] { action = [&] { store::Store(g.store_path()).export_records(out); }; });

    auto* import_cmd = app.add_subcommand("import", "Load records written by export");
    import_cmd->add_option("--in", in_file)->required();
    import_cmd->callback([&] {
        action = [&] { std::cout << store::Store(g.store_path()).import_records(in_file) << " records\n"; };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        action();
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
