#pragma once

#include <memory>

#include "redkit/annotation.hpp"

namespace httplib {
class Server;
}

namespace redkit::annotation {

/// Routes: GET /api/next, POST /api/submit, GET /api/progress, GET /api/agreement.
/// Requests carry "Authorization: Bearer <token>". Errors map to 401 (token),
/// 400 (validation), 404 (unknown instance) and 409 (conflict). When the config
/// names a UI directory it is served at "/".
std::unique_ptr<httplib::Server> make_server(Service& service);

/// Blocks until the server stops.
void serve(Service& service);

} // namespace redkit::annotation
