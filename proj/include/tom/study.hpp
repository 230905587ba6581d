#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tom/interpret.hpp"

namespace tom {

enum class RunMode { no_cw, cw, cw_transfer };
std::string run_mode_name(RunMode m);
RunMode run_mode_from_name(const std::string& name);  // throws ConfigError

// Every scientific parameter of a run. Loaded from one JSON file; only the output
// directory may be overridden from the environment (TOM_OUTPUT_DIR) or the command line.
struct RunConfig {
    ScenarioConfig scenario;
    std::uint64_t map_seed = 7;
    std::uint64_t agent_seed = 1;
    std::uint64_t split_seed = 3;
    std::uint64_t dataset_seed = 5;
    std::uint64_t training_seed = 2;
    int trajectories = 75;
    int mission_ticks = kDefaultMissionTicks;
    double test_fraction = 0.2;
    double profile_noise = 0.05;
    double eps = kDefaultForgetfulness;
    int stride = 8;
    int m = 4;
    double lambda = 0.5;
    std::array<int, 3> channels{8, 16, 16};
    double eps_eig = kDefaultEigClamp;
    int iam_epochs = 3;
    int dm_epochs = 4;
    int batch = 32;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    AlignOptions align;
    int concept_set = 1;
    RunMode mode = RunMode::no_cw;
    std::string output_dir = "runs/desk";
};

// Parses the JSON text; unknown keys and out-of-range values raise ConfigError.
// A relative "scenario_path" is resolved against `base_dir`.
RunConfig run_config_from_json(const std::string& text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);
// Canonical JSON of the scientific fields (output_dir excluded).
std::string run_config_to_json(const RunConfig& config);
// FNV-1a-64 of the canonical JSON, hex.
std::string config_hash(const RunConfig& config);

ModelConfig iam_model_config(const RunConfig& config);
ModelConfig dm_model_config(const RunConfig& config, bool concept_whitening);
TrainOptions iam_train_options(const RunConfig& config);
TrainOptions dm_train_options(const RunConfig& config);

// Everything derived from the trajectories that training and evaluation share.
struct StudyData {
    Map map;
    std::vector<Trajectory> trajectories;
    Split split;
    std::vector<std::vector<Visit>> visits;
    BeliefCache cache;  // training split only
};

Map study_map(const RunConfig& config);
std::vector<Trajectory> study_trajectories(const RunConfig& config, const Map& map);
StudyData prepare_study(const RunConfig& config, Map map, std::vector<Trajectory> trajectories);

// Checkpoint file names inside the output directory.
std::string iam_checkpoint_name();
std::string dm_checkpoint_name(RunMode mode, int concept_set);
std::string run_tag(RunMode mode, int concept_set);

}  // namespace tom
