#pragma once

// Trace file, schedule summary and telemetry frame encodings.

#include "psv/scenario.hpp"
#include "psv/simcore.hpp"

#include <json.hpp>

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace psv::gateway {

inline constexpr int kTraceVersion = 1;
inline constexpr int kTelemetryVersion = 1;

using ordered_json = nlohmann::ordered_json;

/// First line of a trace file: schema, version, unit and bus ids.
ordered_json trace_header(const simcore::SimTrace& trace, const std::string& scenario_name);

/// One trace line. Field order is part of the format.
ordered_json record_json(const simcore::TraceRecord& record, const std::vector<std::string>& gen_ids);

void write_trace(std::ostream& out, const simcore::SimTrace& trace, const std::string& scenario_name);

/// Streaming writer: header on construction, one line per record.
class TraceWriter {
public:
    TraceWriter(std::ostream& out, const std::vector<std::string>& gen_ids,
                const std::vector<std::string>& bus_ids, const std::string& scenario_name);
    void write(const simcore::TraceRecord& record);
    std::uint64_t digest() const { return hash_; }

private:
    void emit(const std::string& line);

    std::ostream& out_;
    std::vector<std::string> gen_ids_;
    std::uint64_t hash_ = 14695981039346656037ull;
};

/// FNV-1a over bytes, chainable.
std::uint64_t fnv1a(const std::string& bytes, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t v);

// =============================================================================
// Summaries
// =============================================================================

struct SummaryOptions {
    bool compare_fixed_speed = false;
    double fixed_speed_rpm = 1800.0;
};

/// Column names of the schedule summary.
std::vector<std::string> summary_columns(const std::vector<std::string>& gen_ids, const SummaryOptions& options);

/// One row per schedule: time, per-unit P and speed, ESS, mode, SFOC and,
/// with the comparison flag, the fleet SFOC at fixed speed.
std::vector<std::string> summary_row(double t, const dispatch::Schedule& schedule,
                                     const std::vector<dispatch::GenUnit>& fleet, const SummaryOptions& options);

/// Fleet SFOC of a schedule at its speed setpoints, or at `fixed_rpm` when positive.
double schedule_sfoc(const dispatch::Schedule& schedule, const std::vector<dispatch::GenUnit>& fleet,
                     double fixed_rpm = 0.0);

std::string format_table(const std::vector<std::string>& columns, const std::vector<std::vector<std::string>>& rows);

ordered_json schedule_json(const dispatch::Schedule& schedule, const std::vector<dispatch::GenUnit>& fleet);

// =============================================================================
// Telemetry
// =============================================================================

/// Decimated live frame for the operator console.
ordered_json telemetry_frame(const simcore::SimState& state, const simcore::TraceRecord& record,
                             std::uint64_t frame_seq);

}  // namespace psv::gateway
