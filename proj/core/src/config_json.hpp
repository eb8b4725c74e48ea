#pragma once

// Internal JSON (de)serialization helpers shared by network/dataset/train.
// Not installed; the public surface stays free of the vendored json header.

#include "json.hpp"
#include "scm/dataset.hpp"
#include "scm/network.hpp"

namespace scm::detail {

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

}  // namespace scm::detail
