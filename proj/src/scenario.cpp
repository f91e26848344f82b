#include "psv/scenario.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace psv::gateway {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string Diagnostic::str() const {
    std::ostringstream ss;
    ss << file;
    if (line > 0) {
        ss << ":" << line;
        if (column > 0) ss << ":" << column;
    }
    ss << ": ";
    if (!field.empty()) ss << field << ": ";
    ss << message;
    return ss.str();
}

namespace {

std::string joined(const std::vector<Diagnostic>& d) {
    std::string out;
    for (const auto& x : d) {
        if (!out.empty()) out += "\n";
        out += x.str();
    }
    return out.empty() ? "invalid scenario" : out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ScenarioError({Diagnostic{path.string(), 0, 0, "", "cannot open file"}});
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::pair<int, int> line_col(const std::string& text, std::size_t offset) {
    int line = 1;
    int col = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

std::string escape_token(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else out += c;
    }
    return out;
}

/// Re-tokenizes JSON text to find the line of a pointer.
class Locator {
public:
    explicit Locator(const std::string& text) : t_(text) {}

    int find(const std::string& pointer) {
        target_ = pointer;
        found_ = 0;
        pos_ = 0;
        line_ = 1;
        try {
            skip_ws();
            value("");
        } catch (const std::exception&) {
        }
        return found_;
    }

private:
    const std::string& t_;
    std::size_t pos_ = 0;
    int line_ = 1;
    std::string target_;
    int found_ = 0;

    void skip_ws() {
        while (pos_ < t_.size() && std::isspace(static_cast<unsigned char>(t_[pos_]))) {
            if (t_[pos_] == '\n') ++line_;
            ++pos_;
        }
    }
    std::string string() {
        std::string s;
        ++pos_;
        while (pos_ < t_.size() && t_[pos_] != '"') {
            if (t_[pos_] == '\\' && pos_ + 1 < t_.size()) {
                s += t_[pos_ + 1];
                pos_ += 2;
                continue;
            }
            s += t_[pos_++];
        }
        ++pos_;
        return s;
    }
    void value(const std::string& path) {
        skip_ws();
        if (found_ == 0 && path == target_) found_ = line_;
        if (pos_ >= t_.size()) throw std::runtime_error("eof");
        const char c = t_[pos_];
        if (c == '{') {
            ++pos_;
            skip_ws();
            if (t_[pos_] == '}') {
                ++pos_;
                return;
            }
            while (true) {
                skip_ws();
                const int key_line = line_;
                const std::string key = string();
                const std::string child = path + "/" + escape_token(key);
                if (found_ == 0 && child == target_) found_ = key_line;
                skip_ws();
                ++pos_;  // ':'
                value(child);
                skip_ws();
                if (t_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                ++pos_;  // '}'
                return;
            }
        }
        if (c == '[') {
            ++pos_;
            skip_ws();
            if (t_[pos_] == ']') {
                ++pos_;
                return;
            }
            for (int i = 0;; ++i) {
                value(path + "/" + std::to_string(i));
                skip_ws();
                if (t_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                ++pos_;
                return;
            }
        }
        if (c == '"') {
            string();
            return;
        }
        while (pos_ < t_.size() && t_[pos_] != ',' && t_[pos_] != '}' && t_[pos_] != ']' &&
               !std::isspace(static_cast<unsigned char>(t_[pos_]))) {
            ++pos_;
        }
    }
};

/// Typed field access that records diagnostics instead of throwing.
class Reader {
public:
    Reader(std::string file, const std::string& text) : file_(std::move(file)), text_(text) {}

    void error(const std::string& pointer, const std::string& message) {
        Diagnostic d;
        d.file = file_;
        d.field = pointer.empty() ? "/" : pointer;
        d.line = pointer.empty() ? 0 : locator().find(pointer);
        d.message = message;
        diags_.push_back(d);
    }

    double number(const json& obj, const std::string& key, const std::string& path, double fallback,
                  bool required = false) {
        const auto p = path + "/" + key;
        if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) {
            if (required) error(p, "required number missing");
            return fallback;
        }
        if (!obj.at(key).is_number()) {
            error(p, "expected a number");
            return fallback;
        }
        return obj.at(key).get<double>();
    }

    int integer(const json& obj, const std::string& key, const std::string& path, int fallback) {
        const auto p = path + "/" + key;
        if (!obj.is_object() || !obj.contains(key)) return fallback;
        if (!obj.at(key).is_number_integer()) {
            error(p, "expected an integer");
            return fallback;
        }
        return obj.at(key).get<int>();
    }

    bool boolean(const json& obj, const std::string& key, const std::string& path, bool fallback) {
        const auto p = path + "/" + key;
        if (!obj.is_object() || !obj.contains(key)) return fallback;
        if (!obj.at(key).is_boolean()) {
            error(p, "expected true or false");
            return fallback;
        }
        return obj.at(key).get<bool>();
    }

    std::string text(const json& obj, const std::string& key, const std::string& path,
                     const std::string& fallback = "", bool required = false) {
        const auto p = path + "/" + key;
        if (!obj.is_object() || !obj.contains(key)) {
            if (required) error(p, "required string missing");
            return fallback;
        }
        if (!obj.at(key).is_string()) {
            error(p, "expected a string");
            return fallback;
        }
        return obj.at(key).get<std::string>();
    }

    const json* array(const json& obj, const std::string& key, const std::string& path, bool required = false) {
        if (!obj.is_object() || !obj.contains(key)) {
            if (required) error(path + "/" + key, "required array missing");
            return nullptr;
        }
        if (!obj.at(key).is_array()) {
            error(path + "/" + key, "expected an array");
            return nullptr;
        }
        return &obj.at(key);
    }

    const json* object(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.is_object() || !obj.contains(key)) return nullptr;
        if (!obj.at(key).is_object()) {
            error(path + "/" + key, "expected an object");
            return nullptr;
        }
        return &obj.at(key);
    }

    /// Rejects keys outside `allowed` so typos do not pass silently.
    void known_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
        if (!obj.is_object()) {
            error(path, "expected an object");
            return;
        }
        for (const auto& [k, _] : obj.items()) {
            const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; });
            if (!ok) error(path + "/" + escape_token(k), "unknown field");
        }
    }

    std::vector<Diagnostic>& diagnostics() { return diags_; }

private:
    Locator& locator() {
        if (!loc_) loc_ = std::make_unique<Locator>(text_);
        return *loc_;
    }

    std::string file_;
    const std::string& text_;
    std::unique_ptr<Locator> loc_;
    std::vector<Diagnostic> diags_;
};

json parse_json(const std::string& text, const std::string& label) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        std::string msg = e.what();
        const auto cut = msg.find("syntax error");
        if (cut != std::string::npos) msg = msg.substr(cut);
        throw ScenarioError({Diagnostic{label, line, col, "", msg}});
    }
}

grid::NetworkModel parse_network_json(const json& j, Reader& r, const std::string& path,
                                      std::vector<std::vector<std::string>>* hint) {
    grid::NetworkModel net;
    r.known_keys(j, path, {"base_voltage_v", "base_power_kva", "buses", "branches", "partition_hint", "description"});
    net.base_voltage_v = r.number(j, "base_voltage_v", path, 1500.0);
    net.base_power_kva = r.number(j, "base_power_kva", path, 10000.0);
    std::set<std::string> ids;
    if (const auto* buses = r.array(j, "buses", path, true)) {
        for (std::size_t i = 0; i < buses->size(); ++i) {
            const auto& b = (*buses)[i];
            const auto p = path + "/buses/" + std::to_string(i);
            r.known_keys(b, p, {"id", "kind", "p_max_kw", "p_min_kw", "q_rating_kvar", "v_setpoint", "v_min", "v_max"});
            grid::Bus bus;
            bus.id = r.text(b, "id", p, "", true);
            if (!bus.id.empty() && !ids.insert(bus.id).second) r.error(p + "/id", "duplicate bus id");
            try {
                bus.kind = grid::bus_kind_from_string(r.text(b, "kind", p, "junction"));
            } catch (const Error& e) {
                r.error(p + "/kind", e.what());
            }
            bus.p_max_kw = r.number(b, "p_max_kw", p, 0.0);
            bus.p_min_kw = r.number(b, "p_min_kw", p, 0.0);
            if (b.is_object() && b.contains("q_rating_kvar") && !b.at("q_rating_kvar").is_null()) {
                bus.q_rating_kvar = r.number(b, "q_rating_kvar", p, 0.0);
            }
            bus.v_setpoint = r.number(b, "v_setpoint", p, 1.0);
            bus.v_min = r.number(b, "v_min", p, std::min(0.95, bus.v_setpoint));
            bus.v_max = r.number(b, "v_max", p, std::max(1.05, bus.v_setpoint));
            if (bus.p_min_kw > bus.p_max_kw && bus.p_max_kw >= 0) r.error(p + "/p_min_kw", "p_min exceeds p_max");
            if (!(bus.v_min <= bus.v_setpoint && bus.v_setpoint <= bus.v_max)) {
                r.error(p + "/v_setpoint", "setpoint outside [v_min, v_max]");
            }
            net.buses.push_back(bus);
        }
    }
    std::set<std::string> branch_ids;
    if (const auto* branches = r.array(j, "branches", path, true)) {
        for (std::size_t i = 0; i < branches->size(); ++i) {
            const auto& b = (*branches)[i];
            const auto p = path + "/branches/" + std::to_string(i);
            r.known_keys(b, p, {"id", "from", "to", "r_mohm", "x_mohm", "rating_kva", "derating"});
            grid::Branch br;
            br.id = r.text(b, "id", p, "", true);
            if (!br.id.empty() && !branch_ids.insert(br.id).second) r.error(p + "/id", "duplicate branch id");
            br.from_bus = r.text(b, "from", p, "", true);
            br.to_bus = r.text(b, "to", p, "", true);
            if (!br.from_bus.empty() && !ids.count(br.from_bus)) r.error(p + "/from", "unknown bus '" + br.from_bus + "'");
            if (!br.to_bus.empty() && !ids.count(br.to_bus)) r.error(p + "/to", "unknown bus '" + br.to_bus + "'");
            if (br.from_bus == br.to_bus && !br.from_bus.empty()) r.error(p + "/to", "branch endpoints must differ");
            br.r_mohm = r.number(b, "r_mohm", p, 0.0, true);
            if (!(br.r_mohm > 0)) r.error(p + "/r_mohm", "resistance must be positive");
            if (b.is_object() && b.contains("x_mohm") && !b.at("x_mohm").is_null()) {
                br.x_mohm = r.number(b, "x_mohm", p, 0.0);
            }
            br.rating_kva = r.number(b, "rating_kva", p, 0.0, true);
            if (!(br.rating_kva > 0)) r.error(p + "/rating_kva", "rating must be positive");
            br.derating = r.number(b, "derating", p, 1.25);
            net.branches.push_back(br);
        }
    }
    if (hint) {
        if (const auto* h = r.array(j, "partition_hint", path)) {
            for (std::size_t g = 0; g < h->size(); ++g) {
                std::vector<std::string> group;
                const auto& arr = (*h)[g];
                if (!arr.is_array()) {
                    r.error(path + "/partition_hint/" + std::to_string(g), "expected an array of bus ids");
                    continue;
                }
                for (std::size_t k = 0; k < arr.size(); ++k) {
                    const auto p = path + "/partition_hint/" + std::to_string(g) + "/" + std::to_string(k);
                    if (!arr[k].is_string() || !ids.count(arr[k].get<std::string>())) {
                        r.error(p, "unknown bus");
                        continue;
                    }
                    group.push_back(arr[k].get<std::string>());
                }
                hint->push_back(group);
            }
        }
    }
    return net;
}

fs::path resolve(const fs::path& base, const std::string& rel) {
    fs::path p(rel);
    return p.is_absolute() ? p : base / p;
}

simcore::ContingencyEvent parse_event(const json& e, Reader& r, const std::string& p,
                                      const simcore::Scenario& s) {
    simcore::ContingencyEvent ev;
    r.known_keys(e, p, {"t", "type", "loads", "ramp_s", "bus", "unit", "mission", "shed", "note"});
    ev.at = r.number(e, "t", p, 0.0, true);
    if (ev.at < 0) r.error(p + "/t", "event time must be non-negative");
    const auto type = r.text(e, "type", p, "", true);
    try {
        ev.kind = simcore::event_kind_from_string(type);
    } catch (const Error& err) {
        r.error(p + "/type", err.what());
        return ev;
    }
    auto has_load = [&](const std::string& id) {
        return std::any_of(s.loads.begin(), s.loads.end(), [&](const loads::LoadUnit& l) { return l.id == id; });
    };
    switch (ev.kind) {
        case simcore::EventKind::LoadStep: {
            const auto* l = r.object(e, "loads", p);
            if (!l || l->empty()) {
                r.error(p + "/loads", "load-step needs a loads object");
                break;
            }
            for (const auto& [id, v] : l->items()) {
                const auto lp = p + "/loads/" + escape_token(id);
                if (!has_load(id)) r.error(lp, "unknown load '" + id + "'");
                if (!v.is_number()) {
                    r.error(lp, "expected a number");
                    continue;
                }
                if (v.get<double>() < 0) r.error(lp, "setpoint must be non-negative");
                ev.loads[id] = v.get<double>();
            }
            ev.ramp_s = r.number(e, "ramp_s", p, 0.0);
            if (ev.ramp_s < 0) r.error(p + "/ramp_s", "ramp must be non-negative");
            break;
        }
        case simcore::EventKind::BusIsolation:
            ev.target = r.text(e, "bus", p, "", true);
            if (!ev.target.empty() && !s.network.find_bus(ev.target)) r.error(p + "/bus", "unknown bus '" + ev.target + "'");
            break;
        case simcore::EventKind::EssUnavailable:
            if (!s.ess) r.error(p + "/type", "scenario has no ESS");
            break;
        case simcore::EventKind::GenTrip: {
            ev.target = r.text(e, "unit", p, "", true);
            const bool ok = std::any_of(s.fleet.begin(), s.fleet.end(),
                                        [&](const dispatch::GenUnit& g) { return g.id == ev.target; });
            if (!ev.target.empty() && !ok) r.error(p + "/unit", "unknown unit '" + ev.target + "'");
            break;
        }
        case simcore::EventKind::MissionChange:
            ev.target = r.text(e, "mission", p, "", true);
            try {
                loads::mission_from_string(ev.target);
            } catch (const Error& err) {
                r.error(p + "/mission", err.what());
            }
            break;
        case simcore::EventKind::ShedApproval:
            if (const auto* sh = r.object(e, "shed", p)) {
                for (const auto& [id, v] : sh->items()) {
                    const auto lp = p + "/shed/" + escape_token(id);
                    if (!has_load(id)) r.error(lp, "unknown load '" + id + "'");
                    if (!v.is_number() || v.get<double>() < 0) {
                        r.error(lp, "expected a non-negative number");
                        continue;
                    }
                    ev.shed.emplace_back(id, v.get<double>());
                }
            }
            break;
    }
    return ev;
}

}  // namespace

ScenarioError::ScenarioError(std::vector<Diagnostic> d)
    : Error(ErrorKind::Validation, joined(d)), diagnostics(std::move(d)) {}

int locate_line(const std::string& text, const std::string& pointer) {
    Locator loc(text);
    return loc.find(pointer);
}

simcore::ContingencyEvent parse_event_text(const std::string& text, const simcore::Scenario& scenario,
                                           double now) {
    auto j = parse_json(text, "<event>");
    if (j.is_object() && !j.contains("t")) j["t"] = now;
    const auto normalized = j.dump(1);
    Reader r("<event>", normalized);
    auto ev = parse_event(j, r, "", scenario);
    if (!r.diagnostics().empty()) throw ScenarioError(r.diagnostics());
    return ev;
}

grid::NetworkModel load_network(const fs::path& path) {
    const auto text = read_file(path);
    const auto j = parse_json(text, path.string());
    Reader r(path.string(), text);
    auto net = parse_network_json(j, r, "", nullptr);
    if (!r.diagnostics().empty()) throw ScenarioError(r.diagnostics());
    net.validate();
    return net;
}

simcore::Scenario load_scenario(const fs::path& path) {
    const auto text = read_file(path);
    return parse_scenario(text, path.parent_path(), path.string());
}

simcore::Scenario parse_scenario(const std::string& text, const fs::path& base_dir, const std::string& label) {
    const json j = parse_json(text, label);
    Reader r(label, text);
    simcore::Scenario s;
    r.known_keys(j, "", {"name", "description", "network", "sfoc_map", "engine", "governor", "converter", "fleet",
                         "ess", "loads", "mission", "irradiance", "dispatch", "sim", "events", "notes"});
    s.name = r.text(j, "name", "", "scenario");
    s.description = r.text(j, "description", "");

    // Network, inline or by reference.
    if (!j.is_object() || !j.contains("network")) {
        r.error("/network", "required network missing");
    } else if (j.at("network").is_string()) {
        const auto npath = resolve(base_dir, j.at("network").get<std::string>());
        try {
            const auto ntext = read_file(npath);
            const auto nj = parse_json(ntext, npath.string());
            Reader nr(npath.string(), ntext);
            s.network = parse_network_json(nj, nr, "", &s.partition_hint);
            for (auto& d : nr.diagnostics()) r.diagnostics().push_back(d);
        } catch (const ScenarioError& e) {
            for (const auto& d : e.diagnostics) r.diagnostics().push_back(d);
        }
    } else if (j.at("network").is_object()) {
        s.network = parse_network_json(j.at("network"), r, "/network", &s.partition_hint);
    } else {
        r.error("/network", "expected a file path or an object");
    }
    if (!r.diagnostics().empty()) throw ScenarioError(r.diagnostics());
    try {
        s.network.validate();
    } catch (const Error& e) {
        r.error("/network", e.what());
        throw ScenarioError(r.diagnostics());
    }
    auto bus_known = [&](const std::string& id) { return s.network.find_bus(id).has_value(); };

    // Shared engine model.
    std::shared_ptr<const powertrain::SfocMap> map;
    {
        const auto rel = r.text(j, "sfoc_map", "", "", true);
        if (!rel.empty()) {
            try {
                map = std::make_shared<const powertrain::SfocMap>(powertrain::SfocMap::load(resolve(base_dir, rel).string()));
            } catch (const Error& e) {
                r.error("/sfoc_map", e.what());
            }
        }
    }
    double tau_mech = 1.0;
    double loss_fraction = 0.02;
    powertrain::DieselEngineParams eng_overrides;
    const json empty = json::object();
    const json& ej = j.contains("engine") ? j.at("engine") : empty;
    if (j.contains("engine")) {
        r.known_keys(ej, "/engine", {"tau_mech_s", "loss_fraction", "tau_pm", "t_d", "k_pm", "omega_min_rpm", "omega_max_rpm", "stall_rpm"});
        tau_mech = r.number(ej, "tau_mech_s", "/engine", tau_mech);
        loss_fraction = r.number(ej, "loss_fraction", "/engine", loss_fraction);
    }
    powertrain::GovernorParams gov;
    if (const auto* g = r.object(j, "governor", "")) {
        r.known_keys(*g, "/governor", {"kp", "ki", "u_min", "u_max"});
        gov.kp = r.number(*g, "kp", "/governor", gov.kp);
        gov.ki = r.number(*g, "ki", "/governor", gov.ki);
        gov.u_min = r.number(*g, "u_min", "/governor", gov.u_min);
        gov.u_max = r.number(*g, "u_max", "/governor", gov.u_max);
    }
    powertrain::ConverterPlant conv;
    if (const auto* c = r.object(j, "converter", "")) {
        r.known_keys(*c, "/converter", {"c_dc", "response_time", "i_max", "v_nominal"});
        conv.c_dc = r.number(*c, "c_dc", "/converter", conv.c_dc);
        conv.response_time = r.number(*c, "response_time", "/converter", conv.response_time);
        conv.i_max = r.number(*c, "i_max", "/converter", conv.i_max);
        conv.v_nominal = r.number(*c, "v_nominal", "/converter", conv.v_nominal);
        if (!(conv.c_dc > 0)) r.error("/converter/c_dc", "must be positive");
        if (!(conv.response_time > 0)) r.error("/converter/response_time", "must be positive");
    }
    conv.v_dc = conv.v_nominal;

    if (const auto* fleet = r.array(j, "fleet", "", true)) {
        std::set<std::string> ids;
        for (std::size_t i = 0; i < fleet->size(); ++i) {
            const auto& g = (*fleet)[i];
            const auto p = "/fleet/" + std::to_string(i);
            r.known_keys(g, p, {"id", "bus", "rated_kw", "p_min_kw", "available"});
            dispatch::GenUnit u;
            u.id = r.text(g, "id", p, "", true);
            if (!u.id.empty() && !ids.insert(u.id).second) r.error(p + "/id", "duplicate unit id");
            u.bus = r.text(g, "bus", p, "", true);
            if (!u.bus.empty() && !bus_known(u.bus)) r.error(p + "/bus", "unknown bus '" + u.bus + "'");
            u.rated_kw = r.number(g, "rated_kw", p, 2048.0);
            if (!(u.rated_kw > 0)) r.error(p + "/rated_kw", "must be positive");
            u.p_min_kw = r.number(g, "p_min_kw", p, 0.0);
            u.available = r.boolean(g, "available", p, true);
            u.sfoc = map;
            u.engine = powertrain::DieselEngineParams::sized(u.rated_kw, tau_mech, loss_fraction);
            u.engine.tau_pm = r.number(ej, "tau_pm", "/engine", u.engine.tau_pm);
            u.engine.t_d = r.number(ej, "t_d", "/engine", u.engine.t_d);
            u.engine.k_pm = r.number(ej, "k_pm", "/engine", u.engine.k_pm);
            u.engine.omega_min_rpm = r.number(ej, "omega_min_rpm", "/engine", u.engine.omega_min_rpm);
            u.engine.omega_max_rpm = r.number(ej, "omega_max_rpm", "/engine", u.engine.omega_max_rpm);
            u.engine.stall_rpm = r.number(ej, "stall_rpm", "/engine", u.engine.stall_rpm);
            u.governor = gov;
            u.converter = conv;
            s.fleet.push_back(u);
        }
        if (fleet->empty()) r.error("/fleet", "at least one generator required");
    }

    if (const auto* e = r.object(j, "ess", "")) {
        const std::string p = "/ess";
        r.known_keys(*e, p, {"id", "bus", "p_rating_kw", "soc", "soc_min", "available", "grid_charge_allowed",
                             "f_p", "charging_latched", "pv_modules", "capacity_ah", "v_nom"});
        storage::EssUnit ess;
        ess.id = r.text(*e, "id", p, "ESS");
        ess.bus = r.text(*e, "bus", p, "", true);
        if (!ess.bus.empty() && !bus_known(ess.bus)) r.error(p + "/bus", "unknown bus '" + ess.bus + "'");
        ess.p_rating_kw = r.number(*e, "p_rating_kw", p, ess.p_rating_kw);
        ess.battery.soc = r.number(*e, "soc", p, ess.battery.soc);
        if (ess.battery.soc < 0 || ess.battery.soc > 1) r.error(p + "/soc", "must lie in [0, 1]");
        ess.battery.soc_min = r.number(*e, "soc_min", p, ess.battery.soc_min);
        ess.battery.capacity_ah = r.number(*e, "capacity_ah", p, ess.battery.capacity_ah);
        ess.battery.v_nom = r.number(*e, "v_nom", p, ess.battery.v_nom);
        ess.unavailable = !r.boolean(*e, "available", p, true);
        ess.grid_charge_allowed = r.boolean(*e, "grid_charge_allowed", p, false);
        ess.charging_latched = r.boolean(*e, "charging_latched", p, false);
        ess.f_p = r.number(*e, "f_p", p, 0.0);
        const int modules = r.integer(*e, "pv_modules", p, ess.pv.modules_total);
        if (modules != ess.pv.modules_total) {
            ess.pv.modules_total = modules;
            ess.pv.n_p = std::max(1, modules / std::max(1, ess.pv.n_s));
        }
        s.ess = ess;
    }

    if (const auto* ls = r.array(j, "loads", "", true)) {
        std::set<std::string> ids;
        for (std::size_t i = 0; i < ls->size(); ++i) {
            const auto& l = (*ls)[i];
            const auto p = "/loads/" + std::to_string(i);
            r.known_keys(l, p, {"id", "bus", "class", "rated", "power_factor", "setpoint_kw", "behind_converter", "pulse"});
            loads::LoadUnit u;
            u.id = r.text(l, "id", p, "", true);
            if (!u.id.empty() && !ids.insert(u.id).second) r.error(p + "/id", "duplicate load id");
            u.bus = r.text(l, "bus", p, "", true);
            if (!u.bus.empty() && !bus_known(u.bus)) r.error(p + "/bus", "unknown bus '" + u.bus + "'");
            try {
                u.cls = loads::load_class_from_string(r.text(l, "class", p, "", true));
            } catch (const Error& e) {
                r.error(p + "/class", e.what());
            }
            u.rated = r.number(l, "rated", p, 0.0, true);
            u.power_factor = r.number(l, "power_factor", p, 0.8);
            u.setpoint_kw = r.number(l, "setpoint_kw", p, 0.0);
            if (u.setpoint_kw < 0) r.error(p + "/setpoint_kw", "must be non-negative");
            if (u.setpoint_kw > u.rated_kw() + 1e-9) r.error(p + "/setpoint_kw", "exceeds the load rating");
            u.behind_converter = r.boolean(l, "behind_converter", p, u.is_hotel());
            if (const auto* pu = r.object(l, "pulse", p)) {
                simcore::PulseSpec ps;
                ps.amplitude_kw = r.number(*pu, "amplitude_kw", p + "/pulse", 0.0, true);
                ps.width_s = r.number(*pu, "width_s", p + "/pulse", 0.0, true);
                ps.period_s = r.number(*pu, "period_s", p + "/pulse", 0.0, true);
                if (!(ps.period_s > 0) || ps.width_s < 0 || ps.width_s > ps.period_s) {
                    r.error(p + "/pulse", "need 0 <= width_s <= period_s and period_s > 0");
                }
                s.pulses[u.id] = ps;
            }
            s.loads.push_back(u);
        }
    }

    try {
        s.mission = loads::mission_from_string(r.text(j, "mission", "", "cruising"));
    } catch (const Error& e) {
        r.error("/mission", e.what());
    }

    if (const auto* irr = r.array(j, "irradiance", "")) {
        for (std::size_t i = 0; i < irr->size(); ++i) {
            const auto p = "/irradiance/" + std::to_string(i);
            simcore::IrradiancePoint pt;
            pt.t = r.number((*irr)[i], "t", p, 0.0, true);
            pt.w_m2 = r.number((*irr)[i], "w_m2", p, 0.0, true);
            if (pt.w_m2 < 0) r.error(p + "/w_m2", "must be non-negative");
            if (!s.irradiance.empty() && pt.t < s.irradiance.back().t) r.error(p + "/t", "breakpoints must be time ordered");
            s.irradiance.push_back(pt);
        }
    }

    if (const auto* d = r.object(j, "dispatch", "")) {
        const std::string p = "/dispatch";
        r.known_keys(*d, p, {"dg_reserve_kw", "overload_factor", "overload_weight", "reserve_weight",
                             "converter_efficiency", "f_p", "loss_tolerance_kw", "max_outer_iterations",
                             "max_iterations", "zero_dispatch", "idle_speed_rpm"});
        auto& o = s.dispatch;
        o.dg_reserve_kw = r.number(*d, "dg_reserve_kw", p, o.dg_reserve_kw);
        o.overload_factor = r.number(*d, "overload_factor", p, o.overload_factor);
        o.overload_weight = r.number(*d, "overload_weight", p, o.overload_weight);
        o.reserve_weight = r.number(*d, "reserve_weight", p, o.reserve_weight);
        o.converter_efficiency = r.number(*d, "converter_efficiency", p, o.converter_efficiency);
        o.f_p = r.number(*d, "f_p", p, o.f_p);
        o.loss_tolerance_kw = r.number(*d, "loss_tolerance_kw", p, o.loss_tolerance_kw);
        o.max_outer_iterations = r.integer(*d, "max_outer_iterations", p, o.max_outer_iterations);
        o.max_iterations = r.integer(*d, "max_iterations", p, o.max_iterations);
        o.idle_speed_rpm = r.number(*d, "idle_speed_rpm", p, o.idle_speed_rpm);
        const auto zd = r.text(*d, "zero_dispatch", p, "idle");
        if (zd == "idle") o.zero_dispatch = dispatch::ZeroDispatch::Idle;
        else if (zd == "stop") o.zero_dispatch = dispatch::ZeroDispatch::Stop;
        else r.error(p + "/zero_dispatch", "expected idle or stop");
        if (!(o.overload_factor >= 1.0)) r.error(p + "/overload_factor", "must be at least 1");
        if (!(o.converter_efficiency > 0 && o.converter_efficiency <= 1)) r.error(p + "/converter_efficiency", "must lie in (0, 1]");
    }

    if (const auto* sim = r.object(j, "sim", "")) {
        const std::string p = "/sim";
        r.known_keys(*sim, p, {"dt", "schedule_period", "duration", "partitions", "workers", "seed",
                               "trace_decimation", "realtime_factor", "telemetry_hz", "r_t_ohm", "coupling_delay",
                               "ess_ramp_kw_s"});
        auto& o = s.sim;
        o.dt = r.number(*sim, "dt", p, o.dt);
        o.schedule_period = r.number(*sim, "schedule_period", p, o.schedule_period);
        o.duration = r.number(*sim, "duration", p, o.duration);
        o.partitions = r.integer(*sim, "partitions", p, o.partitions);
        o.workers = r.integer(*sim, "workers", p, o.workers);
        o.seed = static_cast<std::uint64_t>(r.integer(*sim, "seed", p, 0));
        o.trace_decimation = r.integer(*sim, "trace_decimation", p, o.trace_decimation);
        o.realtime_factor = r.number(*sim, "realtime_factor", p, o.realtime_factor);
        o.telemetry_hz = r.number(*sim, "telemetry_hz", p, o.telemetry_hz);
        o.r_t_ohm = r.number(*sim, "r_t_ohm", p, o.r_t_ohm);
        o.coupling_delay = r.integer(*sim, "coupling_delay", p, o.coupling_delay);
        o.ess_ramp_kw_s = r.number(*sim, "ess_ramp_kw_s", p, o.ess_ramp_kw_s);
        if (!(o.dt >= 1e-5 && o.dt <= 0.1)) r.error(p + "/dt", "must lie in [1e-5, 0.1] s");
        if (!(o.schedule_period >= o.dt)) r.error(p + "/schedule_period", "must be at least dt");
        if (o.duration < 0) r.error(p + "/duration", "must be non-negative");
        if (o.partitions < 1 || o.partitions > static_cast<int>(s.network.buses.size())) {
            r.error(p + "/partitions", "must lie in [1, bus count]");
        }
        if (o.workers < 1) r.error(p + "/workers", "must be at least 1");
        if (o.trace_decimation < 1) r.error(p + "/trace_decimation", "must be at least 1");
        if (o.coupling_delay < 1) r.error(p + "/coupling_delay", "must be at least 1");
        if (!(o.r_t_ohm > 0)) r.error(p + "/r_t_ohm", "must be positive");
        if (o.realtime_factor < 0) r.error(p + "/realtime_factor", "must be non-negative");
        if (!(o.ess_ramp_kw_s > 0)) r.error(p + "/ess_ramp_kw_s", "must be positive");
    }

    if (const auto* ev = r.array(j, "events", "")) {
        for (std::size_t i = 0; i < ev->size(); ++i) {
            s.events.push_back(parse_event((*ev)[i], r, "/events/" + std::to_string(i), s));
        }
    }

    if (!r.diagnostics().empty()) throw ScenarioError(r.diagnostics());
    try {
        s.validate();
    } catch (const Error& e) {
        r.error("", e.what());
        throw ScenarioError(r.diagnostics());
    }
    return s;
}

// =============================================================================
// One-shot solves
// =============================================================================

int exit_code(dispatch::ScheduleMode mode) {
    switch (mode) {
        case dispatch::ScheduleMode::Feasible: return 0;
        case dispatch::ScheduleMode::OverloadRelaxed: return 2;
        case dispatch::ScheduleMode::Infeasible: return 3;
    }
    return 3;
}

simcore::Scenario apply_events(const simcore::Scenario& scenario,
                               std::vector<std::pair<std::string, double>>& approved, bool& wants_advisory) {
    simcore::Scenario s = scenario;
    wants_advisory = false;
    auto events = s.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const simcore::ContingencyEvent& a, const simcore::ContingencyEvent& b) { return a.at < b.at; });
    for (const auto& e : events) {
        switch (e.kind) {
            case simcore::EventKind::LoadStep:
                for (auto& l : s.loads) {
                    const auto it = e.loads.find(l.id);
                    if (it != e.loads.end()) l.setpoint_kw = it->second;
                }
                break;
            case simcore::EventKind::BusIsolation:
                s.network.isolated_buses.insert(e.target);
                for (auto& g : s.fleet) {
                    if (g.bus == e.target) g.available = false;
                }
                if (s.ess && s.ess->bus == e.target) s.ess->unavailable = true;
                for (auto& l : s.loads) {
                    if (l.bus == e.target) l.setpoint_kw = 0.0;
                }
                break;
            case simcore::EventKind::EssUnavailable:
                if (s.ess) s.ess->unavailable = true;
                break;
            case simcore::EventKind::GenTrip:
                for (auto& g : s.fleet) {
                    if (g.id == e.target) g.available = false;
                }
                break;
            case simcore::EventKind::MissionChange: s.mission = loads::mission_from_string(e.target); break;
            case simcore::EventKind::ShedApproval:
                if (e.shed.empty()) wants_advisory = true;
                for (const auto& entry : e.shed) approved.push_back(entry);
                break;
        }
    }
    s.events.clear();
    return s;
}

std::vector<CaseRow> solve_case(const simcore::Scenario& scenario) {
    auto row = [&](const std::string& label, const simcore::Scenario& s, const dispatch::Schedule* warm,
                   const std::vector<std::pair<std::string, double>>& shed) {
        CaseRow r;
        r.label = label;
        r.schedule = dispatch::solve_opf(s.network, s.fleet, s.ess, s.loads, loads::mission_profile(s.mission),
                                         s.dispatch, warm, shed);
        r.schedule.solve_time = 0.0;
        for (const auto& l : s.loads) {
            r.loads.push_back(l.id);
            double kw = l.setpoint_kw;
            for (const auto& [id, amount] : shed) {
                if (id == l.id) kw = std::max(0.0, kw - amount);
            }
            r.load_kw.push_back(kw);
        }
        return r;
    };
    std::vector<CaseRow> rows;
    rows.push_back(row("pre", scenario, nullptr, {}));
    rows.back().schedule.id = 1;
    if (scenario.events.empty()) return rows;
    std::vector<std::pair<std::string, double>> approved;
    bool advisory = false;
    const auto post = apply_events(scenario, approved, advisory);
    if (advisory) {
        const auto probe = row("post", post, &rows.front().schedule, approved);
        if (probe.schedule.shed) {
            for (const auto& entry : probe.schedule.shed->entries) approved.push_back(entry);
        }
    }
    rows.push_back(row("post", post, &rows.front().schedule, approved));
    rows.back().schedule.id = 2;
    return rows;
}

}  // namespace psv::gateway
