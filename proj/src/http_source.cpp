#include "scopy/errors.hpp"
#include "scopy/ingest.hpp"

#include <httplib.h>
#include <json.hpp>

namespace scopy::ingest {

HttpCommitSource::HttpCommitSource(std::string base_url) : base_url_(std::move(base_url)) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

CommitBundle HttpCommitSource::fetch(const CommitRef& ref) const {
    // Split "http://host:port/prefix" into the client origin and a path prefix.
    auto scheme_end = base_url_.find("://");
    auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string origin = base_url_.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : base_url_.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    auto res = client.Get(prefix + "/commits/" + ref.owner + "/" + ref.repo + "/" + ref.hash);
    if (!res) throw TransportError("request to " + origin + " failed: " + httplib::to_string(res.error()));
    if (res->status == 404) throw NotFound("commit not found: " + ref.owner + "/" + ref.repo + "@" + ref.hash);
    if (res->status != 200) throw TransportError("unexpected HTTP status " + std::to_string(res->status));

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("bad commit payload: ") + e.what());
    }
    std::map<std::string, std::string> pre;
    if (doc.contains("pre"))
        for (const auto& [path, content] : doc["pre"].items()) pre.emplace(path, content.get<std::string>());
    return bundle_from_diff(ref.owner + "/" + ref.repo, ref.hash, doc.value("message", std::string()),
                            doc.value("diff", std::string()), pre);
}

}  // namespace scopy::ingest
