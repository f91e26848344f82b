#pragma once

// Live simulation session: operator commands, acks and decimated telemetry.

#include "psv/simcore.hpp"
#include "psv/trace.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace psv::gateway {

enum class CommandKind { SetMission, InjectEvent, ApproveShed, SetLoad, Pause, Resume, Snapshot };

const char* to_string(CommandKind kind);
std::optional<CommandKind> command_kind_from_string(const std::string& s);

struct Command {
    CommandKind kind = CommandKind::Snapshot;
    nlohmann::json payload = nlohmann::json::object();
    std::string client;
    std::int64_t seq = 0;
};

struct Ack {
    bool ok = false;
    std::string client;
    std::int64_t seq = -1;
    std::string kind;
    double applied_t = -1.0;     ///< step boundary at which it took effect
    std::string reason;          ///< set on negative acks
    ordered_json data;           ///< snapshot payload

    ordered_json to_json() const;
};

/// Parses a wire message into a command. Returns the reason on failure.
std::variant<Command, std::string> parse_command(const std::string& text);

/// Bounded queue that drops the oldest entry when full.
class FrameQueue {
public:
    explicit FrameQueue(std::size_t capacity) : capacity_(capacity) {}
    void push(std::string frame);
    /// Waits up to `timeout_ms` for a frame.
    std::optional<std::string> pop(int timeout_ms);
    std::size_t dropped() const { return dropped_; }
    void close();
    bool closed() const { return closed_; }

private:
    std::size_t capacity_;
    std::deque<std::string> q_;
    std::mutex m_;
    std::condition_variable cv_;
    std::size_t dropped_ = 0;
    bool closed_ = false;
};

struct Subscriber {
    Subscriber(std::string c, std::size_t capacity) : client(std::move(c)), frames(capacity) {}
    std::string client;
    FrameQueue frames;
    /// Acks are never dropped.
    std::deque<std::string> acks;
    std::mutex ack_mutex;
};

struct SessionOptions {
    std::size_t frame_buffer = 64;
    std::ostream* trace_out = nullptr;  ///< full-rate trace when set
};

class Session {
public:
    Session(const simcore::Scenario& scenario, const simcore::RunOptions& run = {}, SessionOptions options = {});

    /// Validates and queues a command; the ack arrives once it is applied.
    /// Malformed or out-of-order commands get an immediate negative ack.
    Ack submit(const Command& command);

    std::shared_ptr<Subscriber> subscribe(const std::string& client);
    void unsubscribe(const std::shared_ptr<Subscriber>& sub);

    /// Applies pending commands and advances one step unless paused.
    /// Returns false once the run is over.
    bool tick();

    /// Paced loop until the duration elapses or `stop` is set.
    void run(const std::atomic<bool>& stop);

    bool paused() const { return paused_; }
    double time() const;
    std::uint64_t trace_digest() const;
    std::vector<Ack> acks() const;
    /// Trace events carrying a command sequence, for audits.
    std::vector<simcore::TraceEvent> command_events() const;
    ordered_json snapshot() const;
    /// Most recent telemetry frame, empty before the first step.
    std::string latest_frame() const;

private:
    void deliver(const Ack& ack);
    void publish(const simcore::TraceRecord& record);
    std::optional<std::string> apply(const Command& c, Ack& ack);

    simcore::SimState state_;
    SessionOptions options_;
    double duration_ = 0.0;
    std::int64_t steps_total_ = 0;
    int telemetry_every_ = 1;
    mutable std::mutex mutex_;
    std::deque<Command> pending_;
    std::map<std::string, std::int64_t> last_seq_;
    std::vector<std::shared_ptr<Subscriber>> subs_;
    std::vector<Ack> acks_;
    std::vector<simcore::TraceEvent> command_events_;
    std::vector<simcore::TraceEvent> pending_notes_;  ///< commands applied while paused
    std::unique_ptr<TraceWriter> writer_;
    std::uint64_t frame_seq_ = 0;
    std::string latest_frame_;
    std::atomic<bool> paused_{false};
};

}  // namespace psv::gateway
