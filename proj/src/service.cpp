#include "bvmdesign/service.hpp"

#include <filesystem>
#include <mutex>
#include <regex>

#include <httplib.h>

#include "bvmdesign/error.hpp"
#include "bvmdesign/io.hpp"

namespace bvmdesign {

namespace {

HttpResult error_result(int status, const std::string& message) { return {status, {{"error", message}}, {}}; }

HttpResult design_error_result(const DesignError& e) {
    nlohmann::json fields = nlohmann::json::array();
    for (const auto& [field, message] : e.fields()) fields.push_back({{"field", field}, {"message", message}});
    return {422, {{"error", "invalid design"}, {"fields", fields}}, {}};
}

}  // namespace

bool is_local_origin(const std::string& origin) {
    static const std::regex re(R"(^https?://(localhost|127\.0\.0\.1|\[::1\])(:[0-9]{1,5})?$)");
    return std::regex_match(origin, re);
}

Service::Service(ServiceOptions options) : options_(std::move(options)) {}

std::size_t Service::session_count() const {
    std::shared_lock lock(mutex_);
    return sessions_.size();
}

std::string Service::resolve(const std::string& path) const {
    const std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(options_.base_dir) / p).string();
}

std::shared_ptr<const Service::Session> Service::find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

HttpResult Service::handle(const std::string& method, const std::string& path, const std::string& body,
                           const std::string& origin) const {
    HttpResult res;
    if (method == "OPTIONS") {
        res.status = 204;
        res.body = nullptr;
    } else {
        static const std::regex session_re(R"(^/sessions/([A-Za-z0-9_-]+)$)");
        static const std::regex action_re(R"(^/sessions/([A-Za-z0-9_-]+)/(evaluate|curve)$)");
        std::smatch m;
        try {
            nlohmann::json doc;
            if (method == "POST") {
                try {
                    doc = body.empty() ? nlohmann::json::object() : nlohmann::json::parse(body);
                } catch (const nlohmann::json::exception&) {
                    return error_result(400, "request body is not valid JSON");
                }
                if (!doc.is_object()) return error_result(400, "request body must be a JSON object");
            }
            if (path == "/healthz" && method == "GET") {
                res = {200, {{"status", "ok"}, {"sessions", session_count()}}, {}};
            } else if (path == "/sessions" && method == "POST") {
                res = create_session(doc);
            } else if (std::regex_match(path, m, session_re) && method == "GET") {
                res = get_session(m[1]);
            } else if (std::regex_match(path, m, action_re) && method == "POST") {
                res = m[2] == "evaluate" ? evaluate(m[1], doc) : curve(m[1], doc);
            } else if (path == "/healthz" || path == "/sessions" || std::regex_match(path, session_re) ||
                       std::regex_match(path, action_re)) {
                res = error_result(405, "method not allowed");
            } else {
                res = error_result(404, "no such endpoint");
            }
        } catch (const DesignError& e) {
            res = design_error_result(e);
        } catch (const ConfigError& e) {
            res = error_result(422, e.what());
        } catch (const NumericalError& e) {
            res = error_result(500, e.what());
        } catch (const std::exception& e) {
            res = error_result(500, e.what());
        }
    }
    if (!origin.empty() && is_local_origin(origin)) {
        res.headers.emplace_back("Access-Control-Allow-Origin", origin);
        res.headers.emplace_back("Vary", "Origin");
        res.headers.emplace_back("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.headers.emplace_back("Access-Control-Allow-Headers", "Content-Type");
    }
    return res;
}

HttpResult Service::create_session(const nlohmann::json& body) const {
    if (!body.contains("config")) return error_result(400, "missing 'config' (study document or path)");
    if (!body.contains("ensemble")) return error_result(400, "missing 'ensemble' (ensemble document or path)");
    StudyConfig study;
    std::shared_ptr<const BartPosterior> ensemble;
    try {
        const auto& c = body["config"];
        study = c.is_string() ? load_study_config(resolve(c.get<std::string>())) : parse_study_config(c);
        const auto& e = body["ensemble"];
        ensemble = std::make_shared<const BartPosterior>(
            e.is_string() ? load_ensemble(resolve(e.get<std::string>())) : BartPosterior::from_json(e));
    } catch (const ConfigError& e) {
        return error_result(400, e.what());
    }
    EvaluationSettings settings = study.document.contains("evaluation")
                                      ? EvaluationSettings::from_json(study.document["evaluation"])
                                      : EvaluationSettings{};
    if (options_.interactive) settings = EvaluationSettings::interactive(settings);
    if (body.contains("evaluation")) settings = EvaluationSettings::from_json(body["evaluation"], settings);

    auto session = std::make_shared<Session>();
    session->id = "s" + std::to_string(next_id_.fetch_add(1));
    try {
        session->evaluator = std::make_unique<Evaluator>(study, ensemble, settings);
    } catch (const ConfigError& e) {
        return error_result(400, e.what());
    }
    if (study.document.contains("cost")) session->cost = CostSpec::from_json(study.document["cost"]);
    const auto& prepared = session->evaluator->prepared();
    session->metadata = {{"id", session->id},
                         {"model", study.spec->id()},
                         {"parameters", study.spec->parameter_names()},
                         {"psi0", study.spec.psi0()},
                         {"design_prior", design_prior_to_json(study.design_prior)},
                         {"evaluation", settings.to_json()},
                         {"lambda_states", prepared.states},
                         {"extrapolated", prepared.outside_box}};
    if (session->cost) session->metadata["cost"] = session->cost->to_json();
    nlohmann::json meta = session->metadata;
    {
        std::unique_lock lock(mutex_);
        sessions_[session->id] = std::move(session);
    }
    return {201, meta, {}};
}

HttpResult Service::get_session(const std::string& id) const {
    const auto s = find(id);
    if (!s) return error_result(404, "no session '" + id + "'");
    return {200, s->metadata, {}};
}

namespace {

TrialDesign design_from_body(const nlohmann::json& body, double psi0) {
    const nlohmann::json& d = body.contains("design") ? body["design"] : body;
    return TrialDesign::from_json(d, psi0);
}

}  // namespace

HttpResult Service::evaluate(const std::string& id, const nlohmann::json& body) const {
    const auto s = find(id);
    if (!s) return error_result(404, "no session '" + id + "'");
    const TrialDesign design = design_from_body(body, s->evaluator->study().spec.psi0());
    design.validate();
    std::optional<CostSpec> cost = s->cost;
    if (body.contains("cost")) cost = body["cost"].is_null() ? std::nullopt : std::optional(CostSpec::from_json(body["cost"]));
    return {200, s->evaluator->evaluate(design, cost).to_json(), {}};
}

HttpResult Service::curve(const std::string& id, const nlohmann::json& body) const {
    const auto s = find(id);
    if (!s) return error_result(404, "no session '" + id + "'");
    const auto& study = s->evaluator->study();
    const TrialDesign design = design_from_body(body, study.spec.psi0());
    design.validate();
    std::vector<double> grid;
    if (body.contains("grid")) {
        if (!body["grid"].is_array()) return error_result(422, "grid must be an array of numbers");
        try {
            grid = body["grid"].get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
            return error_result(422, "grid must be an array of numbers");
        }
        if (grid.empty()) return error_result(422, "grid must not be empty");
    } else {
        grid = default_psi_grid(study.spec, study.design_prior);
    }
    return {200, curve_to_json(design, s->evaluator->curve(grid, design)), {}};
}

// ------------------------------------------------------------------ server

struct HttpServer::Impl {
    explicit Impl(const Service& s) : service(s) {}
    const Service& service;
    httplib::Server server;
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {
    const auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        const auto result =
            impl_->service.handle(req.method, req.path, req.body, req.get_header_value("Origin"));
        res.status = result.status;
        for (const auto& [k, v] : result.headers) res.set_header(k, v);
        if (!result.body.is_null()) res.set_content(result.body.dump(), "application/json");
    };
    auto& s = impl_->server;
    s.Get(".*", handler).Post(".*", handler).Put(".*", handler).Patch(".*", handler);
    s.Delete(".*", handler).Options(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw ConfigError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace bvmdesign
