#include "tom/study.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tom {

using nlohmann::json;

std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::no_cw: return "no_cw";
        case RunMode::cw: return "cw";
        case RunMode::cw_transfer: return "cw_transfer";
    }
    return "?";
}

RunMode run_mode_from_name(const std::string& name) {
    if (name == "no_cw") return RunMode::no_cw;
    if (name == "cw") return RunMode::cw;
    if (name == "cw_transfer") return RunMode::cw_transfer;
    throw ConfigError("unknown mode '" + name + "' (expected no_cw, cw or cw_transfer)");
}

namespace {

// Rejects keys outside `allowed` so typos in a config never pass silently.
void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

ScenarioConfig scenario_from(const json& j) {
    check_keys(j,
               {"width", "height", "room_cols", "room_rows", "victims", "critical_victims", "door_fraction",
                "closed_door_fraction", "extra_connections", "rubble", "levers", "critical_expiry_ticks",
                "noncritical_expiry_ticks", "max_retries"},
               "scenario");
    ScenarioConfig s;
    read(j, "width", s.width);
    read(j, "height", s.height);
    read(j, "room_cols", s.room_cols);
    read(j, "room_rows", s.room_rows);
    read(j, "victims", s.victims);
    read(j, "critical_victims", s.critical_victims);
    read(j, "door_fraction", s.door_fraction);
    read(j, "closed_door_fraction", s.closed_door_fraction);
    read(j, "extra_connections", s.extra_connections);
    read(j, "rubble", s.rubble);
    read(j, "levers", s.levers);
    read(j, "critical_expiry_ticks", s.critical_expiry_ticks);
    read(j, "noncritical_expiry_ticks", s.noncritical_expiry_ticks);
    read(j, "max_retries", s.max_retries);
    return s;
}

json scenario_to(const ScenarioConfig& s) {
    return {{"width", s.width},
            {"height", s.height},
            {"room_cols", s.room_cols},
            {"room_rows", s.room_rows},
            {"victims", s.victims},
            {"critical_victims", s.critical_victims},
            {"door_fraction", s.door_fraction},
            {"closed_door_fraction", s.closed_door_fraction},
            {"extra_connections", s.extra_connections},
            {"rubble", s.rubble},
            {"levers", s.levers},
            {"critical_expiry_ticks", s.critical_expiry_ticks},
            {"noncritical_expiry_ticks", s.noncritical_expiry_ticks},
            {"max_retries", s.max_retries}};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string set_name(int set) { return set == 1 ? "I" : set == 2 ? "II" : "III"; }

void validate(const RunConfig& c) {
    require(c.trajectories >= 1, "trajectories must be positive");
    require(c.mission_ticks >= 1, "mission_ticks must be positive");
    require(c.test_fraction > 0.0 && c.test_fraction < 1.0, "test_fraction must lie in (0, 1)");
    require(c.profile_noise >= 0.0 && c.profile_noise <= 1.0, "profile_noise must lie in [0, 1]");
    require(c.eps >= 0.0 && c.eps <= 1.0, "eps must lie in [0, 1]");
    require(c.stride >= 1, "stride must be positive");
    require(c.m >= 1, "m must be positive");
    require(c.lambda >= 0.0 && c.lambda <= 1.0, "lambda must lie in [0, 1]");
    for (int ch : c.channels) require(ch >= 1, "channel widths must be positive");
    require(c.eps_eig > 0.0, "eps_eig must be positive");
    require(c.iam_epochs >= 1 && c.dm_epochs >= 1, "epoch counts must be positive");
    require(c.batch >= 2, "batch must be at least 2");
    require(c.lr > 0.0, "lr must be positive");
    require(c.momentum >= 0.0 && c.momentum < 1.0, "momentum must lie in [0, 1)");
    require(c.weight_decay >= 0.0, "weight_decay must be non-negative");
    require(c.align.every >= 1 && c.align.iterations >= 1 && c.align.max_samples >= 2, "bad alignment options");
    require(c.scenario.width % 8 == 0 && c.scenario.height % 8 == 0,
            "scenario width and height must be multiples of 8 (three 2x2 poolings)");
    require(static_cast<int>(concept_set(c.concept_set).size()) <= c.channels[2],
            "concept count exceeds the latent width");
}

}  // namespace

RunConfig run_config_from_json(const std::string& text, const std::string& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j,
               {"scenario", "scenario_path", "seeds", "trajectories", "mission_ticks", "test_fraction",
                "profile_noise", "eps", "stride", "m", "lambda", "model", "training", "alignment", "concept_set",
                "mode", "output_dir"},
               "config");
    RunConfig c;
    if (j.contains("scenario") && j.contains("scenario_path"))
        throw ConfigError("give either scenario or scenario_path, not both");
    if (j.contains("scenario")) c.scenario = scenario_from(j.at("scenario"));
    if (j.contains("scenario_path")) {
        std::filesystem::path p = j.at("scenario_path").get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        json s;
        try {
            s = json::parse(read_file(p.string()));
        } catch (const json::parse_error& e) {
            throw ConfigError("scenario file is not valid JSON: " + std::string(e.what()));
        }
        c.scenario = scenario_from(s);
    }
    if (j.contains("seeds")) {
        const json& s = j.at("seeds");
        check_keys(s, {"map", "agents", "split", "dataset", "training"}, "seeds");
        read(s, "map", c.map_seed);
        read(s, "agents", c.agent_seed);
        read(s, "split", c.split_seed);
        read(s, "dataset", c.dataset_seed);
        read(s, "training", c.training_seed);
    }
    read(j, "trajectories", c.trajectories);
    read(j, "mission_ticks", c.mission_ticks);
    read(j, "test_fraction", c.test_fraction);
    read(j, "profile_noise", c.profile_noise);
    read(j, "eps", c.eps);
    read(j, "stride", c.stride);
    read(j, "m", c.m);
    read(j, "lambda", c.lambda);
    if (j.contains("model")) {
        const json& s = j.at("model");
        check_keys(s, {"channels", "eps_eig"}, "model");
        read(s, "channels", c.channels);
        read(s, "eps_eig", c.eps_eig);
    }
    if (j.contains("training")) {
        const json& s = j.at("training");
        check_keys(s, {"iam_epochs", "dm_epochs", "batch", "lr", "momentum", "weight_decay"}, "training");
        read(s, "iam_epochs", c.iam_epochs);
        read(s, "dm_epochs", c.dm_epochs);
        read(s, "batch", c.batch);
        read(s, "lr", c.lr);
        read(s, "momentum", c.momentum);
        read(s, "weight_decay", c.weight_decay);
    }
    if (j.contains("alignment")) {
        const json& s = j.at("alignment");
        check_keys(s, {"every", "iterations", "max_samples"}, "alignment");
        read(s, "every", c.align.every);
        read(s, "iterations", c.align.iterations);
        read(s, "max_samples", c.align.max_samples);
    }
    if (j.contains("concept_set")) {
        const json& s = j.at("concept_set");
        c.concept_set = concept_set_from_name(s.is_string() ? s.get<std::string>() : std::to_string(s.get<int>()));
    }
    if (j.contains("mode")) c.mode = run_mode_from_name(j.at("mode").get<std::string>());
    read(j, "output_dir", c.output_dir);
    validate(c);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    const std::filesystem::path p(path);
    return run_config_from_json(read_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

std::string run_config_to_json(const RunConfig& c) {
    const json j = {
        {"scenario", scenario_to(c.scenario)},
        {"seeds",
         {{"map", c.map_seed},
          {"agents", c.agent_seed},
          {"split", c.split_seed},
          {"dataset", c.dataset_seed},
          {"training", c.training_seed}}},
        {"trajectories", c.trajectories},
        {"mission_ticks", c.mission_ticks},
        {"test_fraction", c.test_fraction},
        {"profile_noise", c.profile_noise},
        {"eps", c.eps},
        {"stride", c.stride},
        {"m", c.m},
        {"lambda", c.lambda},
        {"model", {{"channels", c.channels}, {"eps_eig", c.eps_eig}}},
        {"training",
         {{"iam_epochs", c.iam_epochs},
          {"dm_epochs", c.dm_epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}}},
        {"alignment",
         {{"every", c.align.every}, {"iterations", c.align.iterations}, {"max_samples", c.align.max_samples}}},
        {"concept_set", set_name(c.concept_set)},
        {"mode", run_mode_name(c.mode)},
    };
    return j.dump(2);
}

std::string config_hash(const RunConfig& c) {
    const std::string s = run_config_to_json(c);
    return hex64(fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()}));
}

ModelConfig iam_model_config(const RunConfig& c) {
    ModelConfig m;
    m.kind = ModelKind::inverse_action;
    m.width = c.scenario.width;
    m.height = c.scenario.height;
    m.channels = c.channels;
    m.eps_eig = c.eps_eig;
    m.seed = derive_seed(c.training_seed, 1);
    return m;
}

ModelConfig dm_model_config(const RunConfig& c, bool concept_whitening) {
    ModelConfig m = iam_model_config(c);
    m.kind = ModelKind::desire;
    m.concept_whitening = concept_whitening;
    m.seed = derive_seed(c.training_seed, concept_whitening ? 3 : 2);
    return m;
}

namespace {

TrainOptions options(const RunConfig& c, int epochs, std::uint64_t stream) {
    TrainOptions o;
    o.epochs = epochs;
    o.batch = c.batch;
    o.lr = c.lr;
    o.momentum = c.momentum;
    o.weight_decay = c.weight_decay;
    o.seed = derive_seed(c.training_seed, stream);
    return o;
}

}  // namespace

TrainOptions iam_train_options(const RunConfig& c) { return options(c, c.iam_epochs, 11); }
TrainOptions dm_train_options(const RunConfig& c) { return options(c, c.dm_epochs, 12); }

Map study_map(const RunConfig& c) { return generate_map(c.scenario, c.map_seed); }

std::vector<Trajectory> study_trajectories(const RunConfig& c, const Map& map) {
    return simulate_trajectories(map, default_profiles(c.profile_noise), c.trajectories, c.agent_seed,
                                 c.mission_ticks);
}

StudyData prepare_study(const RunConfig& c, Map map, std::vector<Trajectory> trajectories) {
    StudyData d;
    d.map = std::move(map);
    d.trajectories = std::move(trajectories);
    for (const auto& t : d.trajectories)
        if (t.width != d.map.width() || t.height != d.map.height() || t.map_id != d.map.id)
            throw ConfigError("trajectory does not belong to map " + d.map.id);
    d.split = split_trajectories(static_cast<int>(d.trajectories.size()), c.test_fraction, c.split_seed);
    for (const auto& t : d.trajectories) d.visits.push_back(find_visits(d.map, t));
    d.cache = build_belief_cache(d.trajectories, d.split.train, c.eps, c.stride, c.mission_ticks);
    return d;
}

std::string iam_checkpoint_name() { return "iam.ckpt"; }

std::string run_tag(RunMode mode, int concept_set) {
    if (mode == RunMode::no_cw) return "no_cw";
    return run_mode_name(mode) + "_set" + set_name(concept_set);
}

std::string dm_checkpoint_name(RunMode mode, int concept_set) { return "dm_" + run_tag(mode, concept_set) + ".ckpt"; }

}  // namespace tom
