#pragma once

#include <string>
#include <vector>

#include "davel/decode.hpp"
#include "davel/model_config.hpp"
#include "davel/trainer.hpp"

namespace davel::cli {

// Merged configuration: model + train + decode + paths, loaded from one JSON
// file with repeatable dotted-path overrides. Unknown keys are rejected; the
// fully resolved form reproduces the run when fed back verbatim.
struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    infer::DecodeConfig decode;
    struct Paths {
        std::string annotations;
        std::string features;
        std::string out;
    } paths;
};

RunConfig load_run_config(const std::string& config_path /* empty = defaults */,
                          const std::vector<std::string>& overrides /* key=value */);

std::string run_config_to_json(const RunConfig& cfg);
void echo_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace davel::cli
