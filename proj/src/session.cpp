#include "psv/session.hpp"

#include "psv/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

namespace psv::gateway {

using json = nlohmann::json;

const char* to_string(CommandKind kind) {
    switch (kind) {
        case CommandKind::SetMission: return "set_mission";
        case CommandKind::InjectEvent: return "inject_event";
        case CommandKind::ApproveShed: return "approve_shed";
        case CommandKind::SetLoad: return "set_load";
        case CommandKind::Pause: return "pause";
        case CommandKind::Resume: return "resume";
        case CommandKind::Snapshot: return "snapshot";
    }
    return "snapshot";
}

std::optional<CommandKind> command_kind_from_string(const std::string& s) {
    for (auto k : {CommandKind::SetMission, CommandKind::InjectEvent, CommandKind::ApproveShed, CommandKind::SetLoad,
                   CommandKind::Pause, CommandKind::Resume, CommandKind::Snapshot}) {
        if (s == to_string(k)) return k;
    }
    return std::nullopt;
}

ordered_json Ack::to_json() const {
    ordered_json j;
    j["type"] = ok ? "ack" : "nack";
    j["version"] = kTelemetryVersion;
    j["client"] = client;
    j["seq"] = seq;
    j["kind"] = kind;
    if (ok) {
        j["applied_t"] = applied_t;
    } else {
        j["reason"] = reason;
    }
    if (!data.is_null()) j["data"] = data;
    return j;
}

std::variant<Command, std::string> parse_command(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        return std::string("malformed JSON: ") + e.what();
    }
    if (!j.is_object()) return std::string("command must be an object");
    Command c;
    if (!j.contains("kind") || !j.at("kind").is_string()) return std::string("missing command kind");
    const auto kind = command_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) return "unknown command kind '" + j.at("kind").get<std::string>() + "'";
    c.kind = *kind;
    if (!j.contains("seq") || !j.at("seq").is_number_integer()) return std::string("missing integer seq");
    c.seq = j.at("seq").get<std::int64_t>();
    if (j.contains("client")) {
        if (!j.at("client").is_string()) return std::string("client must be a string");
        c.client = j.at("client").get<std::string>();
    }
    if (j.contains("payload")) {
        if (!j.at("payload").is_object()) return std::string("payload must be an object");
        c.payload = j.at("payload");
    }
    return c;
}

// =============================================================================
// FrameQueue
// =============================================================================

void FrameQueue::push(std::string frame) {
    {
        std::lock_guard<std::mutex> lock(m_);
        if (closed_) return;
        if (q_.size() >= capacity_) {
            q_.pop_front();
            ++dropped_;
        }
        q_.push_back(std::move(frame));
    }
    cv_.notify_one();
}

std::optional<std::string> FrameQueue::pop(int timeout_ms) {
    std::unique_lock<std::mutex> lock(m_);
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    auto f = std::move(q_.front());
    q_.pop_front();
    return f;
}

void FrameQueue::close() {
    {
        std::lock_guard<std::mutex> lock(m_);
        closed_ = true;
    }
    cv_.notify_all();
}

// =============================================================================
// Session
// =============================================================================

namespace {

std::ostream& null_stream() {
    static std::ostream s(nullptr);
    return s;
}

}  // namespace

Session::Session(const simcore::Scenario& scenario, const simcore::RunOptions& run, SessionOptions options)
    : state_(simcore::init_state(scenario, run)), options_(options) {
    const auto& sim = state_.scenario.sim;
    duration_ = sim.duration;
    steps_total_ = static_cast<std::int64_t>(std::llround(duration_ / sim.dt));
    telemetry_every_ = std::max(1, static_cast<int>(std::lround(1.0 / (std::max(1e-3, sim.telemetry_hz) * sim.dt))));
    std::vector<std::string> gen_ids;
    std::vector<std::string> bus_ids;
    for (const auto& g : state_.scenario.fleet) gen_ids.push_back(g.id);
    for (const auto& b : state_.scenario.network.buses) bus_ids.push_back(b.id);
    writer_ = std::make_unique<TraceWriter>(options_.trace_out ? *options_.trace_out : null_stream(), gen_ids, bus_ids,
                                            state_.scenario.name);
}

void Session::deliver(const Ack& ack) {
    acks_.push_back(ack);
    const auto text = ack.to_json().dump();
    for (const auto& s : subs_) {
        if (s->client != ack.client) continue;
        std::lock_guard<std::mutex> lock(s->ack_mutex);
        s->acks.push_back(text);
    }
}

Ack Session::submit(const Command& c) {
    std::lock_guard<std::mutex> lock(mutex_);
    Ack ack;
    ack.client = c.client;
    ack.seq = c.seq;
    ack.kind = to_string(c.kind);
    const auto it = last_seq_.find(c.client);
    if (it != last_seq_.end() && c.seq <= it->second) {
        ack.reason = "sequence number must increase (last " + std::to_string(it->second) + ")";
        deliver(ack);
        return ack;
    }
    last_seq_[c.client] = c.seq;
    pending_.push_back(c);
    ack.ok = true;
    return ack;
}

std::shared_ptr<Subscriber> Session::subscribe(const std::string& client) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto s = std::make_shared<Subscriber>(client, options_.frame_buffer);
    subs_.push_back(s);
    return s;
}

void Session::unsubscribe(const std::shared_ptr<Subscriber>& sub) {
    std::lock_guard<std::mutex> lock(mutex_);
    subs_.erase(std::remove(subs_.begin(), subs_.end(), sub), subs_.end());
    sub->frames.close();
}

std::optional<std::string> Session::apply(const Command& c, Ack& ack) {
    const double now = state_.t;
    ack.applied_t = now;
    auto queue = [&](simcore::ContingencyEvent ev) -> std::optional<std::string> {
        ev.origin = c.client.empty() ? "operator" : c.client;
        ev.command_seq = c.seq;
        if (ev.at < now) ev.at = now;
        ack.applied_t = ev.at;
        try {
            simcore::inject(state_, ev);
        } catch (const Error& e) {
            return std::string(e.what());
        }
        return std::nullopt;
    };
    try {
        switch (c.kind) {
            case CommandKind::SetMission: {
                json e{{"type", "mission-change"}};
                if (c.payload.contains("mission")) e["mission"] = c.payload.at("mission");
                return queue(parse_event_text(e.dump(), state_.scenario, now));
            }
            case CommandKind::InjectEvent:
                return queue(parse_event_text(c.payload.dump(), state_.scenario, now));
            case CommandKind::ApproveShed: {
                json e{{"type", "shed-approval"}};
                if (c.payload.contains("shed")) e["shed"] = c.payload.at("shed");
                if (!c.payload.contains("shed") && !state_.active.shed) {
                    return std::string("no shed advisory to approve");
                }
                return queue(parse_event_text(e.dump(), state_.scenario, now));
            }
            case CommandKind::SetLoad: {
                json e{{"type", "load-step"}, {"loads", c.payload.value("loads", json::object())}};
                if (c.payload.contains("ramp_s")) e["ramp_s"] = c.payload.at("ramp_s");
                return queue(parse_event_text(e.dump(), state_.scenario, now));
            }
            case CommandKind::Pause:
                paused_ = true;
                break;
            case CommandKind::Resume:
                paused_ = false;
                break;
            case CommandKind::Snapshot:
                ack.data = snapshot();
                break;
        }
    } catch (const ScenarioError& e) {
        return std::string(e.what());
    }
    command_events_.push_back({now, "command", to_string(c.kind), c.seq});
    state_.step_events.push_back(command_events_.back());
    return std::nullopt;
}

bool Session::tick() {
    std::lock_guard<std::mutex> lock(mutex_);
    if (state_.step_index >= steps_total_ || state_.halted) return false;
    // Commands queued for this boundary; their trace notes ride on the next record.
    std::vector<simcore::TraceEvent> notes;
    while (!pending_.empty()) {
        const auto c = pending_.front();
        pending_.pop_front();
        Ack ack;
        ack.client = c.client;
        ack.seq = c.seq;
        ack.kind = to_string(c.kind);
        const auto before = state_.step_events.size();
        if (auto reason = apply(c, ack)) {
            ack.ok = false;
            ack.reason = *reason;
            ack.applied_t = -1.0;
        } else {
            ack.ok = true;
        }
        for (std::size_t i = before; i < state_.step_events.size(); ++i) notes.push_back(state_.step_events[i]);
        deliver(ack);
    }
    if (paused_) {
        pending_notes_.insert(pending_notes_.end(), notes.begin(), notes.end());
        return true;
    }
    auto record = simcore::step(state_);
    record.events.insert(record.events.begin(), notes.begin(), notes.end());
    record.events.insert(record.events.begin(), pending_notes_.begin(), pending_notes_.end());
    pending_notes_.clear();
    writer_->write(record);
    const bool due = state_.step_index % telemetry_every_ == 0 || !record.events.empty();
    if (due) publish(record);
    return state_.step_index < steps_total_ && !state_.halted;
}

void Session::publish(const simcore::TraceRecord& record) {
    latest_frame_ = telemetry_frame(state_, record, ++frame_seq_).dump();
    for (const auto& s : subs_) s->frames.push(latest_frame_);
}

void Session::run(const std::atomic<bool>& stop) {
    using clock = std::chrono::steady_clock;
    auto wall0 = clock::now();
    double sim0 = time();
    bool was_paused = paused_;
    while (!stop) {
        const bool more = tick();
        if (!more) break;
        if (paused_) {
            was_paused = true;
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
            continue;
        }
        if (was_paused) {
            wall0 = clock::now();
            sim0 = time();
            was_paused = false;
        }
        const double rf = state_.scenario.sim.realtime_factor;
        if (rf > 0) {
            std::this_thread::sleep_until(wall0 + std::chrono::duration_cast<clock::duration>(
                                                      std::chrono::duration<double>((time() - sim0) / rf)));
        }
    }
}

double Session::time() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return state_.t;
}

std::uint64_t Session::trace_digest() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return writer_->digest();
}

std::vector<Ack> Session::acks() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return acks_;
}

std::vector<simcore::TraceEvent> Session::command_events() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return command_events_;
}

std::string Session::latest_frame() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return latest_frame_;
}

ordered_json Session::snapshot() const {
    ordered_json j;
    j["t"] = state_.t;
    j["paused"] = paused_.load();
    j["mission"] = loads::to_string(state_.scenario.mission);
    j["schedule"] = schedule_json(state_.active, state_.scenario.fleet);
    ordered_json queued = ordered_json::array();
    for (const auto& e : state_.queue) {
        ordered_json o;
        o["t"] = e.at;
        o["kind"] = simcore::to_string(e.kind);
        queued.push_back(o);
    }
    j["queued_events"] = queued;
    if (state_.scenario.ess) j["soc"] = state_.scenario.ess->battery.soc;
    return j;
}

}  // namespace psv::gateway
