#include "redkit/annotation_http.hpp"

#include <httplib.h>

namespace redkit::annotation {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::string bearer_token(const httplib::Request& req) {
    const std::string header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.rfind(prefix, 0) == 0) return header.substr(prefix.size());
    if (req.has_param("token")) return req.get_param_value("token");
    return {};
}

/// Runs `fn` with the caller's annotator id and maps library errors to HTTP statuses.
template <typename Fn>
httplib::Server::Handler guarded(Service& service, Fn fn) {
    return [&service, fn](const httplib::Request& req, httplib::Response& res) {
        try {
            const std::string annotator = service.authenticate(bearer_token(req));
            send_json(res, 200, fn(annotator, req));
        } catch (const AuthError& e) {
            send_json(res, 401, {{"error", e.what()}});
        } catch (const NotFoundError& e) {
            send_json(res, 404, {{"error", e.what()}});
        } catch (const ConflictError& e) {
            send_json(res, 409, {{"error", e.what()}});
        } catch (const ValidationError& e) {
            send_json(res, 400, {{"error", e.what()}});
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
        }
    };
}

} // namespace

std::unique_ptr<httplib::Server> make_server(Service& service) {
    auto server = std::make_unique<httplib::Server>();
    server->Get("/api/next", guarded(service, [&service](const std::string& who, const httplib::Request&) {
                    json item = service.next_item(who);
                    return item.is_null() ? json{{"done", true}} : item;
                }));
    server->Post("/api/submit", guarded(service, [&service](const std::string& who, const httplib::Request& req) {
                     const json body = json::parse(req.body);
                     return service.submit(who, body.at("instance_id").get<std::string>(),
                                           action_from_string(body.at("action").get<std::string>()),
                                           body.value("payload", ""));
                 }));
    server->Get("/api/progress", guarded(service, [&service](const std::string& who, const httplib::Request&) {
                    return service.progress(who);
                }));
    server->Get("/api/agreement", guarded(service, [&service](const std::string&, const httplib::Request&) {
                    return service.agreement();
                }));
    if (service.config().ui_dir && !server->set_mount_point("/", service.config().ui_dir->string()))
        throw PreconditionError("UI directory not found: " + service.config().ui_dir->string());
    return server;
}

void serve(Service& service) {
    auto server = make_server(service);
    if (!server->listen(service.config().host, service.config().port))
        throw Error("cannot listen on " + service.config().host + ":" + std::to_string(service.config().port));
}

} // namespace redkit::annotation
