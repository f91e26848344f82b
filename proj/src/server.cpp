#include "psv/server.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace psv::gateway {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

const std::string& console_page() {
    static const std::string page = R"html(<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>PSV power console</title>
<style>
body { background: #0d1620; color: #cfe3f1; font: 14px/1.4 monospace; margin: 1.5em; }
table { border-collapse: collapse; margin-bottom: 1em; }
td, th { border: 1px solid #2a4358; padding: 2px 8px; text-align: right; }
button, select, input { background: #1b2c3b; color: #cfe3f1; border: 1px solid #2a4358; margin: 2px; }
#log { height: 12em; overflow-y: auto; border: 1px solid #2a4358; padding: 4px; }
.nack { color: #ff8a80; }
</style>
</head>
<body>
<h3>PSV power console <span id="t"></span></h3>
<div id="status">connecting</div>
<table id="gens"></table>
<div id="ess"></div>
<div id="adv"></div>
<p>
<select id="mission">
<option>cruising</option><option>dynamic-positioning</option><option>naval-warfare</option><option>at-port</option>
</select>
<button onclick="send('set_mission', {mission: val('mission')})">Set mission</button>
<button onclick="send('inject_event', {type: 'bus-isolation', bus: 'B2'})">Isolate B2</button>
<button onclick="send('approve_shed', {})">Approve shed</button>
<button onclick="send('pause', {})">Pause</button>
<button onclick="send('resume', {})">Resume</button>
<button onclick="send('snapshot', {})">Snapshot</button>
</p>
<div id="log"></div>
<script>
const VERSION = 1;
let seq = 0;
const client = 'console-' + Math.floor(Math.random() * 1e6);
const ws = new WebSocket('ws://' + location.host + '/ws?client=' + client);
function val(id) { return document.getElementById(id).value; }
function log(text, cls) {
  const d = document.createElement('div'); d.textContent = text; if (cls) d.className = cls;
  const l = document.getElementById('log'); l.prepend(d);
}
function send(kind, payload) { ws.send(JSON.stringify({kind, seq: ++seq, client, payload})); }
ws.onopen = () => { document.getElementById('status').textContent = 'connected'; };
ws.onclose = () => { document.getElementById('status').textContent = 'disconnected'; };
ws.onmessage = (m) => {
  const f = JSON.parse(m.data);
  if (f.version !== VERSION) { document.getElementById('status').textContent = 'schema version mismatch'; return; }
  if (f.type === 'ack' || f.type === 'nack') {
    log(f.type + ' #' + f.seq + ' ' + f.kind + (f.type === 'ack' ? ' at t=' + f.applied_t : ': ' + f.reason),
        f.type === 'nack' ? 'nack' : '');
    return;
  }
  document.getElementById('t').textContent = 't=' + f.t.toFixed(3) + ' s  ' + f.mission + '  ' + f.mode;
  let rows = '<tr><th>unit</th><th>P kW</th><th>rpm</th><th>ref</th><th>SFOC</th><th>1800 rpm</th></tr>';
  for (const g of f.gens) {
    rows += '<tr><td>' + g.id + '</td><td>' + g.p_kw.toFixed(1) + '</td><td>' + g.omega_rpm.toFixed(0) +
            '</td><td>' + g.omega_ref_rpm.toFixed(0) + '</td><td>' + g.sfoc.toFixed(1) + '</td><td>' +
            g.sfoc_fixed.toFixed(1) + '</td></tr>';
  }
  document.getElementById('gens').innerHTML = rows;
  document.getElementById('ess').textContent = 'ESS ' + f.ess.p_kw.toFixed(1) + ' kW  SOC ' +
      (100 * f.ess.soc).toFixed(2) + '%  ' + f.ess.mode + '  bus V ' + f.bus_v_min.toFixed(4) + '..' + f.bus_v_max.toFixed(4);
  document.getElementById('adv').textContent = f.advisories.map(a => a.text).join(' | ');
  for (const e of f.events) log('t=' + e.t.toFixed(3) + ' ' + e.kind + ' ' + e.detail);
};
</script>
</body>
</html>
)html";
    return page;
}

struct Server::Impl {
    Session& session;
    ServeOptions options;
    net::io_context ioc;
    std::unique_ptr<tcp::acceptor> acceptor;
    std::thread accept_thread;
    std::atomic<bool> stopping{false};
    std::mutex conn_mutex;
    std::vector<std::thread> connections;
    std::atomic<int> next_id{1};

    Impl(Session& s, ServeOptions o) : session(s), options(std::move(o)) {}

    static std::string query_client(const std::string& target) {
        const auto q = target.find("client=");
        if (q == std::string::npos) return "";
        auto v = target.substr(q + 7);
        const auto amp = v.find('&');
        return amp == std::string::npos ? v : v.substr(0, amp);
    }

    void serve_ws(tcp::socket socket, http::request<http::string_body> req) {
        websocket::stream<tcp::socket> ws(std::move(socket));
        ws.accept(req);
        ws.text(true);
        std::string client = query_client(std::string(req.target()));
        if (client.empty()) client = "conn-" + std::to_string(next_id++);
        auto sub = session.subscribe(client);
        const auto latest = session.latest_frame();
        try {
            if (!latest.empty()) ws.write(net::buffer(latest));
            while (!stopping) {
                if (ws.next_layer().available() > 0) {
                    beast::flat_buffer buf;
                    ws.read(buf);
                    const auto text = beast::buffers_to_string(buf.data());
                    auto parsed = parse_command(text);
                    if (auto* reason = std::get_if<std::string>(&parsed)) {
                        Ack nack;
                        nack.client = client;
                        nack.reason = *reason;
                        ws.write(net::buffer(nack.to_json().dump()));
                    } else {
                        auto cmd = std::get<Command>(parsed);
                        cmd.client = client;
                        const auto ack = session.submit(cmd);
                        (void)ack;
                    }
                }
                std::deque<std::string> acks;
                {
                    std::lock_guard<std::mutex> lock(sub->ack_mutex);
                    acks.swap(sub->acks);
                }
                for (const auto& a : acks) ws.write(net::buffer(a));
                if (auto f = sub->frames.pop(20)) ws.write(net::buffer(*f));
            }
            ws.close(websocket::close_code::going_away);
        } catch (const std::exception&) {
            // Client went away; the session is unaffected.
        }
        session.unsubscribe(sub);
    }

    void serve_http(tcp::socket& socket, const http::request<http::string_body>& req) {
        http::response<http::string_body> res;
        res.version(req.version());
        res.keep_alive(false);
        const std::string target(req.target());
        if (req.method() == http::verb::get && (target == "/" || target == "/index.html")) {
            res.result(http::status::ok);
            res.set(http::field::content_type, "text/html; charset=utf-8");
            res.body() = console_page();
        } else if (req.method() == http::verb::get && target == "/snapshot") {
            res.result(http::status::ok);
            res.set(http::field::content_type, "application/json");
            res.body() = session.latest_frame();
        } else {
            res.result(http::status::not_found);
            res.set(http::field::content_type, "text/plain");
            res.body() = "not found\n";
        }
        res.prepare_payload();
        beast::error_code ec;
        http::write(socket, res, ec);
        socket.shutdown(tcp::socket::shutdown_send, ec);
    }

    void handle(tcp::socket socket) {
        try {
            beast::flat_buffer buf;
            http::request<http::string_body> req;
            http::read(socket, buf, req);
            if (websocket::is_upgrade(req)) {
                serve_ws(std::move(socket), std::move(req));
            } else {
                serve_http(socket, req);
            }
        } catch (const std::exception& e) {
            if (std::getenv("PSV_LOG")) std::cerr << "connection: " << e.what() << "\n";
        }
    }

    void accept_loop() {
        while (!stopping) {
            tcp::socket socket(ioc);
            beast::error_code ec;
            acceptor->accept(socket, ec);
            if (ec || stopping) break;
            std::lock_guard<std::mutex> lock(conn_mutex);
            connections.emplace_back([this, s = std::move(socket)]() mutable { handle(std::move(s)); });
        }
    }
};

Server::Server(Session& session, ServeOptions options) : impl_(std::make_unique<Impl>(session, std::move(options))) {}

Server::~Server() { stop(); }

unsigned short Server::start() {
    auto& i = *impl_;
    const auto address = net::ip::make_address(i.options.host);
    i.acceptor = std::make_unique<tcp::acceptor>(i.ioc);
    tcp::endpoint ep(address, i.options.port);
    i.acceptor->open(ep.protocol());
    i.acceptor->set_option(net::socket_base::reuse_address(true));
    i.acceptor->bind(ep);
    i.acceptor->listen();
    const auto port = i.acceptor->local_endpoint().port();
    i.accept_thread = std::thread([&i] { i.accept_loop(); });
    return port;
}

void Server::stop() {
    if (!impl_) return;
    auto& i = *impl_;
    if (i.stopping.exchange(true)) return;
    beast::error_code ec;
    if (i.acceptor) {
        // Wake the blocking accept with a throwaway connection.
        try {
            tcp::socket poke(i.ioc);
            poke.connect(i.acceptor->local_endpoint(), ec);
        } catch (...) {
        }
        i.acceptor->close(ec);
    }
    if (i.accept_thread.joinable()) i.accept_thread.join();
    std::lock_guard<std::mutex> lock(i.conn_mutex);
    for (auto& t : i.connections) {
        if (t.joinable()) t.join();
    }
}

}  // namespace psv::gateway
