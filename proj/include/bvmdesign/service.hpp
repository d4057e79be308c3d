#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bvmdesign/pipeline.hpp"

namespace bvmdesign {

struct HttpResult {
    int status = 200;
    nlohmann::json body;
    std::vector<std::pair<std::string, std::string>> headers;
};

struct ServiceOptions {
    std::string base_dir = ".";  ///< relative artifact paths resolve against this
    bool interactive = true;     ///< cap sample sizes at the interactive budget
};

/// Routing and session management without any socket code, so every
/// endpoint can be exercised directly.
class Service {
  public:
    explicit Service(ServiceOptions options = {});

    HttpResult handle(const std::string& method, const std::string& path, const std::string& body,
                      const std::string& origin = "") const;

    std::size_t session_count() const;

  private:
    struct Session {
        std::string id;
        std::unique_ptr<Evaluator> evaluator;
        std::optional<CostSpec> cost;
        nlohmann::json metadata;
    };

    HttpResult create_session(const nlohmann::json& body) const;
    HttpResult get_session(const std::string& id) const;
    HttpResult evaluate(const std::string& id, const nlohmann::json& body) const;
    HttpResult curve(const std::string& id, const nlohmann::json& body) const;
    std::shared_ptr<const Session> find(const std::string& id) const;
    std::string resolve(const std::string& path) const;

    ServiceOptions options_;
    mutable std::shared_mutex mutex_;
    mutable std::map<std::string, std::shared_ptr<const Session>> sessions_;
    mutable std::atomic<std::uint64_t> next_id_{1};
};

/// True for http(s)://localhost[:port] and http(s)://127.0.0.1[:port].
bool is_local_origin(const std::string& origin);

/// Blocking HTTP/1.1 server around a Service.
class HttpServer {
  public:
    explicit HttpServer(const Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and returns the bound port (port 0 picks a free one).
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace bvmdesign
