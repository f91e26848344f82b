#pragma once

#include "psv/dispatch.hpp"
#include "psv/powertrain.hpp"
#include "psv/scenario.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace psv::test {

inline std::filesystem::path source_dir() { return PSV_SOURCE_DIR; }

inline std::filesystem::path scenario_path(const std::string& name) {
    return source_dir() / "scenarios" / (name + ".json");
}

inline simcore::Scenario scenario(const std::string& name) {
    return gateway::load_scenario(scenario_path(name));
}

inline std::shared_ptr<const powertrain::SfocMap> sfoc_map() {
    static const auto map = std::make_shared<const powertrain::SfocMap>(
        powertrain::SfocMap::load((source_dir() / "data" / "sfoc_anchors.txt").string()));
    return map;
}

/// A single 2048 kW generator train on the bundled SFOC map.
inline dispatch::GenUnit gen_unit(const std::string& id, const std::string& bus) {
    dispatch::GenUnit g;
    g.id = id;
    g.bus = bus;
    g.sfoc = sfoc_map();
    return g;
}

}  // namespace psv::test
