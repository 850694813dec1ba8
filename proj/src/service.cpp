#include "scopy/service.hpp"

#include "scopy/commit_cpg.hpp"
#include "scopy/errors.hpp"

#include <httplib.h>

#include <functional>
#include <iomanip>
#include <sstream>

namespace scopy::service {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
    send_json(res, {{"error", code}, {"message", msg}}, status);
}

// Runs `fn`, mapping toolkit and JSON errors to HTTP responses.
void guarded(httplib::Response& res, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        send_error(res, http_status(e.code()), e.code(), e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "BadRequest", e.what());
    }
}

std::string hex_digest(const std::string& s) {
    // FNV-1a over the payload, widened to 40 hex chars for a stable local id
    std::uint64_t h = 1469598103934665603ull;
    std::ostringstream out;
    for (int round = 0; round < 3; ++round) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= static_cast<std::uint64_t>(round + 1);
        out << std::hex << std::setw(16) << std::setfill('0') << h;
    }
    return out.str().substr(0, 40);
}

json graph_json(const store::GraphCounts& g) {
    return {{"nodes", g.nodes}, {"edges", g.edges}, {"previous_nodes", g.previous_nodes}, {"current_nodes", g.current_nodes}};
}

}  // namespace

int http_status(const std::string& code) {
    if (code == "NotFound") return 404;
    if (code == "ConflictingWrite") return 409;
    if (code == "UnknownAnnotator") return 403;
    if (code == "MalformedDiff" || code == "NoChange" || code == "SyntaxError" || code == "EmptyGraph") return 422;
    return 400;
}

Service::Service(store::Store& store, ServiceOptions opts)
    : store_(store), opts_(std::move(opts)), server_(std::make_unique<httplib::Server>()) {
    auto threads = opts_.threads ? opts_.threads : 1;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    routes();
}

Service::~Service() { stop(); }

httplib::Server& Service::server() { return *server_; }

bool Service::bind(const std::string& host, int port) {
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
        return port_ > 0;
    }
    if (!server_->bind_to_port(host, port)) return false;
    port_ = port;
    return true;
}

void Service::listen() { server_->listen_after_bind(); }

void Service::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

void Service::routes() {
    auto& s = *server_;
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    s.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Annotator");
        res.status = 204;
    });

    s.Get("/api/candidates", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            store::CandidateFilter f;
            auto param = [&](const char* k) { return req.has_param(k) ? req.get_param_value(k) : std::string(); };
            if (auto v = param("status"); !v.empty()) f.status = store::status_from_string(v);
            if (auto v = param("origin"); !v.empty()) f.origin = store::origin_from_string(v);
            if (auto v = param("source"); !v.empty()) f.source = store::source_from_string(v);
            auto out = json::array();
            for (const auto& r : store_.list_candidates(f)) out.push_back(store::summary_json(r));
            send_json(res, out);
        });
    });

    s.Get(R"(/api/commits/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto r = store_.get_record(req.matches[1]);
            auto j = store::summary_json(r);
            j["bundle"] = r.bundle ? store::to_json(*r.bundle) : json(nullptr);
            json summary = nullptr;
            if (r.graph) {
                summary = graph_json(*r.graph);
            } else if (r.bundle) {
                try {
                    auto g = cpg::summarize(cpg::build_commit_cpg(*r.bundle));
                    summary = graph_json({g.nodes, g.edges, g.previous_nodes, g.current_nodes});
                } catch (const Error&) {
                }
            }
            j["commitcpg_summary"] = summary;
            send_json(res, j);
        });
    });

    s.Post(R"(/api/commits/([^/]+)/votes)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = req.body.empty() ? json::object() : json::parse(req.body);
            std::string annotator = body.value("annotator", req.get_header_value("X-Annotator"));
            if (annotator.empty()) throw BadConfig("annotator missing");
            auto label = store::vote_label_from_string(body.at("label").get<std::string>());
            std::optional<std::size_t> expected;
            if (body.contains("expected_votes") && !body["expected_votes"].is_null())
                expected = body["expected_votes"].get<std::size_t>();
            auto r = store_.record_vote(req.matches[1], annotator, label, expected);
            auto j = store::summary_json(r);
            j["consensus_state"] = store::to_string(store_.consensus(r.commit_id).state);
            send_json(res, j);
        });
    });

    s.Get(R"(/api/commits/([^/]+)/consensus)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto v = store_.consensus(req.matches[1]);
            json j = {{"status", store::to_string(v.state)}, {"final", v.consensus.has_value()}};
            if (v.consensus) j["consensus"] = store::to_string(*v.consensus);
            send_json(res, j);
        });
    });

    s.Get(R"(/api/stats/([a-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto all = store::to_json(store_.stats());
            std::string kind = req.matches[1];
            if (!all.contains(kind)) throw NotFound("no statistic '" + kind + "'");
            send_json(res, all[kind]);
        });
    });

    s.Post("/api/ingest", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::string repo, hash, message, diff, origin = "pilot";
            std::map<std::string, std::string> pre;
            if (req.is_multipart_form_data()) {
                auto field = [&](const char* k) { return req.has_file(k) ? req.get_file_value(k).content : std::string(); };
                repo = field("repo_id");
                hash = field("commit_hash");
                message = field("message");
                diff = field("diff");
                if (auto o = field("origin"); !o.empty()) origin = o;
                for (const auto& [name, file] : req.files)
                    if (name.starts_with("pre:")) pre[name.substr(4)] = file.content;
            } else {
                auto body = json::parse(req.body);
                repo = body.at("repo_id").get<std::string>();
                hash = body.value("commit_hash", "");
                message = body.value("message", "");
                diff = body.at("diff").get<std::string>();
                origin = body.value("origin", origin);
                const auto pre_json = body.value("pre", json::object());
                for (const auto& [path, content] : pre_json.items()) pre[path] = content.get<std::string>();
            }
            if (repo.find('/') == std::string::npos) throw BadConfig("repo_id must be owner/repo");
            if (diff.empty()) throw MalformedDiff("empty diff");
            if (hash.empty()) hash = hex_digest(repo + '\0' + message + '\0' + diff);
            auto bundle = ingest::bundle_from_diff(repo, hash, message, diff, pre);
            if (bundle.files.empty()) throw MalformedDiff("diff touches no files");
            store::LabelRecord r;
            r.commit_id = bundle.commit_id();
            r.origin = store::origin_from_string(origin);
            r.matched_keywords = keywords::match(bundle.message, opts_.keywords);
            r.pattern = patterns::tag(bundle, opts_.apis);
            try {
                auto g = cpg::summarize(cpg::build_commit_cpg(bundle));
                r.graph = store::GraphCounts{g.nodes, g.edges, g.previous_nodes, g.current_nodes};
            } catch (const Error&) {
            }
            r.bundle = std::move(bundle);
            bool created = store_.add_candidate(r);
            send_json(res, {{"commit_id", r.commit_id}, {"created", created}}, created ? 201 : 200);
        });
    });
}

}  // namespace scopy::service
