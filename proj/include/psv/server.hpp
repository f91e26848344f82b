#pragma once

// HTTP + WebSocket front end for a live Session.

#include "psv/session.hpp"

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

namespace psv::gateway {

struct ServeOptions {
    std::string host = "127.0.0.1";
    unsigned short port = 8080;   ///< 0 picks a free port
};

/// Serves the console page on "/", the latest telemetry frame on "/snapshot" and the
/// telemetry/command stream on "/ws" (WebSocket upgrade).
class Server {
public:
    Server(Session& session, ServeOptions options);
    ~Server();

    /// Binds and starts accepting. Returns the bound port.
    unsigned short start();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// The bundled single-page console.
const std::string& console_page();

}  // namespace psv::gateway
