// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "virl/credit.hpp"
#include "virl/datapipe.hpp"
#include "virl/reward.hpp"
#include "virl/sim.hpp"
#include "virl/trace.hpp"

namespace virl {

struct PathsConfig {
    std::string out_dir = "out";
    std::string traces;
    std::string tasks;
    std::string records;

    friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

/// Every knob of a run. One seed drives all stochastic behaviour; modules
/// derive labeled sub-seeds from it.
struct RunConfig {
    std::uint64_t seed = 0;

    FidelityParams fidelity;
    RedundancyParams redundancy;
    ThresholdSchedule schedule;
    bool use_schedule = true;
    RewardOptions reward;

    ModulatorParams modulator;
    sim::CreditOptions credit;

    sim::SimConfig sim;
    /// Reward modes trained by `train-sim`, one log each.
    std::vector<RewardMode> train_modes = {RewardMode::outcome_only, RewardMode::naive_stepwise, RewardMode::virl};
    int dump_last_iterations = 0;

    datapipe::PipelineConfig datapipe;
    TraceConfig trace;
    PathsConfig paths;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses and validates. Unknown keys, type errors and range violations are
/// all collected; throws virl::Error("invalid-config") listing every one.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Full effective config; config_from_json(config_to_json(c)) == c.
nlohmann::ordered_json config_to_json(const RunConfig& c);

/// Range checks only (no JSON); returns one "section.field: reason" line per problem.
std::vector<std::string> config_problems(const RunConfig& c);

/// Experiment settings for one reward mode.
sim::ExperimentConfig experiment_config(const RunConfig& c, RewardMode mode);

}  // namespace virl
