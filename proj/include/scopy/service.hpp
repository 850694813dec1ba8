#pragma once

// JSON HTTP service over a Store, consumed by the triage client.
//
//   GET  /api/candidates?status=&origin=&source=
//   GET  /api/commits/{id}
//   POST /api/commits/{id}/votes        {annotator, label[, expected_votes]}
//   GET  /api/commits/{id}/consensus
//   GET  /api/stats/{composition|efficiency|patterns|repos|cwe}
//   POST /api/ingest                    JSON or multipart diff payload
//
// Errors are {"error": code, "message": text} with 400/403/404/409/422.

#include "scopy/keywords.hpp"
#include "scopy/patterns.hpp"
#include "scopy/store.hpp"

#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace scopy::service {

struct ServiceOptions {
    keywords::KeywordSet keywords = keywords::default_keywords();
    patterns::SecureApiTable apis = patterns::default_secure_apis();
    std::size_t threads = 8;
};

class Service {
public:
    Service(store::Store& store, ServiceOptions opts = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves until stop(). Port 0 picks a free port; see port().
    bool bind(const std::string& host, int port);
    void listen();  // blocks
    void stop();
    int port() const { return port_; }

    httplib::Server& server();

private:
    void routes();

    store::Store& store_;
    ServiceOptions opts_;
    std::unique_ptr<httplib::Server> server_;
    int port_ = 0;
};

/// HTTP status for a toolkit error code.
int http_status(const std::string& error_code);

}  // namespace scopy::service
