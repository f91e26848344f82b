#pragma once

// Scenario and case files: JSON parsing with line/field diagnostics.

#include "psv/errors.hpp"
#include "psv/simcore.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace psv::gateway {

struct Diagnostic {
    std::string file;
    int line = 0;           ///< 1-based, 0 when unknown
    int column = 0;
    std::string field;      ///< JSON pointer, empty for syntax errors
    std::string message;

    std::string str() const;
};

class ScenarioError : public Error {
public:
    explicit ScenarioError(std::vector<Diagnostic> diagnostics);
    std::vector<Diagnostic> diagnostics;
};

/// Reads a scenario file. Relative paths inside it resolve against its
/// directory. Throws ScenarioError.
simcore::Scenario load_scenario(const std::filesystem::path& path);

/// Parses scenario text; `base_dir` anchors relative references.
simcore::Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                                 const std::string& file_label = "<scenario>");

/// Network section alone, either inline or from its own file.
grid::NetworkModel load_network(const std::filesystem::path& path);

/// Single event object in scenario-file form; the time defaults to `now`.
/// Throws ScenarioError.
simcore::ContingencyEvent parse_event_text(const std::string& text, const simcore::Scenario& scenario,
                                           double now);

/// 1-based line of the value addressed by a JSON pointer, 0 if absent.
int locate_line(const std::string& text, const std::string& pointer);

// =============================================================================
// One-shot solves
// =============================================================================

struct CaseRow {
    std::string label;              ///< "pre" or "post"
    dispatch::Schedule schedule;
    std::vector<std::string> loads; ///< ids in scenario order
    std::vector<double> load_kw;
};

/// Solves the scenario's initial state and, when it has events, the state
/// after applying all of them at once. Shed approvals without explicit
/// entries take the advisory of the unapproved post-event solve.
std::vector<CaseRow> solve_case(const simcore::Scenario& scenario);

/// Applies events statically to a copy of the scenario. Collected shed
/// entries are returned through `approved`.
simcore::Scenario apply_events(const simcore::Scenario& scenario,
                               std::vector<std::pair<std::string, double>>& approved,
                               bool& wants_advisory_shed);

/// 0 feasible, 2 overload-relaxed, 3 infeasible.
int exit_code(dispatch::ScheduleMode mode);

}  // namespace psv::gateway
