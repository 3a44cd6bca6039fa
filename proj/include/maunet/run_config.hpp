#pragma once

#include <string>

#include "maunet/configs.hpp"

namespace maunet {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    bool operator==(const RunConfig&) const = default;
};

// Flat key=value text, one setting per line, '#' comments. Unknown keys are an
// error. Keys not present keep their defaults; parse(serialize(c)) == c.
RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& config);

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& config);

}  // namespace maunet
