#pragma once

#include <string>

#include "revnet/train.hpp"

namespace revnet {

/// Flat key=value config text ('#' comments, blank lines ignored); one key
/// per TrainConfig field. Unknown keys are errors.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);

/// Applies one "key=value" override on top of a parsed config.
void apply_override(TrainConfig& cfg, const std::string& assignment);

/// Round-trippable serialization of a config (covers the ArchSpec).
std::string serialize_config(const TrainConfig& cfg);

}  // namespace revnet
