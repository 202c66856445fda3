#pragma once

// Run configuration: strict sectioned key/value text files covering the
// environment, model, training loop, and ordering strategy, plus top-level
// run identity (seed, step budget, output directory). Parsing is strict —
// unknown sections or keys, duplicates, and malformed values are all errors
// that name the offending key — and serialize() round-trips exactly.

#include "plmarl/envs.hpp"
#include "plmarl/trainer.hpp"

#include <filesystem>
#include <string>

namespace plmarl {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";
    envs::EnvSpec env;
    ModelConfig model;  // agent/action/observation dims are derived from env
    TrainConfig train;
    OrderingStrategy strategy;

    // Sync the model's environment-derived dimensions and validate every
    // section. Throws ConfigError naming the offending field.
    void finalize();
};

// Parse configuration text. Throws ConfigError on any violation.
RunConfig parse_config(const std::string& text);

// Canonical text form; parse_config(serialize_config(c)) == c field-for-field.
std::string serialize_config(const RunConfig& cfg);

RunConfig load_config(const std::filesystem::path& path);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace plmarl
