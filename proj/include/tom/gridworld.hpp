#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tom/common.hpp"

namespace tom {

// Search-and-rescue simulator: block types, map generation, dynamics, observation,
// and the scripted agents that produce training trajectories.

enum class BlockType : std::uint8_t {
    air = 0,
    wall,
    door_closed,
    door_open,
    opening,
    lever,
    victim_noncritical,
    victim_critical,
};

inline constexpr int kNumBlockTypes = 8;
// Observation-only marker for cells outside line of sight. Never a belief category.
inline constexpr std::uint8_t kUnseen = 0xff;

// Simulation clock: 0.5 s per tick.
inline constexpr int kTicksPerMinute = 120;
inline constexpr int kDefaultMissionTicks = 1200;
inline constexpr int kCriticalTriageTicks = 30;
inline constexpr int kNoncriticalTriageTicks = 15;
inline constexpr int kCriticalPoints = 30;
inline constexpr int kNoncriticalPoints = 10;

char block_code(BlockType t);
BlockType block_from_code(char c);
std::string_view block_name(BlockType t);

inline bool is_victim(BlockType t) {
    return t == BlockType::victim_noncritical || t == BlockType::victim_critical;
}
inline bool is_door(BlockType t) { return t == BlockType::door_closed || t == BlockType::door_open; }
// Victims, doors and openings are the locations-of-interest used as intents.
inline bool is_location_of_interest(BlockType t) {
    return is_victim(t) || is_door(t) || t == BlockType::opening;
}
// Cells an agent can stand on.
inline bool is_walkable(BlockType t) {
    return t == BlockType::air || t == BlockType::door_open || t == BlockType::opening;
}
// Cells that stop line of sight.
inline bool blocks_sight(BlockType t) { return t == BlockType::wall || t == BlockType::door_closed; }

enum class Facing : std::uint8_t { north = 0, east, south, west };

inline Vec2i facing_delta(Facing f) {
    constexpr std::array<Vec2i, 4> d{{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};
    return d[static_cast<int>(f)];
}
inline Facing turn_left(Facing f) { return static_cast<Facing>((static_cast<int>(f) + 3) % 4); }
inline Facing turn_right(Facing f) { return static_cast<Facing>((static_cast<int>(f) + 1) % 4); }

enum class Action : std::uint8_t {
    move_forward = 0,
    left_turn,
    right_turn,
    toggle_door,
    toggle_lever,
    triage,
    none,
};

inline constexpr int kNumActions = 7;
std::string_view action_name(Action a);

struct Pose {
    Vec2i pos;
    Facing facing = Facing::north;

    Vec2i ahead() const {
        const Vec2i d = facing_delta(facing);
        return {pos.x + d.x, pos.y + d.y};
    }
    friend bool operator==(const Pose&, const Pose&) = default;
};

struct Victim {
    Vec2i pos;
    bool critical = false;
    // Last tick at which the victim can still be triaged.
    int expiry_tick = 0;
};

struct Map {
    std::string id;
    Grid<BlockType> grid;
    std::vector<Victim> victims;
    Pose spawn;
    // Derived on construction/load: room id per cell (-1 for walls, doors, openings)
    // and victim index per cell (-1 elsewhere).
    Grid<int> room_of;
    Grid<int> victim_at;
    int num_rooms = 0;

    int width() const { return grid.width(); }
    int height() const { return grid.height(); }

    // Rebuilds room_of / victim_at from grid and victims; checks registry consistency.
    void index();
};

struct ScenarioConfig {
    int width = 24;
    int height = 24;
    int room_cols = 3;
    int room_rows = 3;
    int victims = 34;
    int critical_victims = 10;
    double door_fraction = 0.6;          // share of room connections that are doors
    double closed_door_fraction = 0.5;   // share of doors that start closed
    int extra_connections = 3;           // links added beyond the spanning tree
    int rubble = 6;                      // interior wall blocks (rubble/fire folded into wall)
    int levers = 2;
    int critical_expiry_ticks = 5 * kTicksPerMinute;
    int noncritical_expiry_ticks = 10 * kTicksPerMinute;
    int max_retries = 64;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

class SeedExhaustedError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

Map generate_map(const ScenarioConfig& config, std::uint64_t seed);

// Builds a map from rows of block codes (see block_code); victims are registered from the
// grid with the given expiries. Used by fixtures and the JSON map format.
Map map_from_rows(std::string id, const std::vector<std::string>& rows, Pose spawn,
                  int critical_expiry_ticks = 5 * kTicksPerMinute,
                  int noncritical_expiry_ticks = 10 * kTicksPerMinute);

std::string map_to_json(const Map& map);
Map map_from_json(const std::string& text);
void save_map(const Map& map, const std::string& path);
Map load_map(const std::string& path);

// Mutable part of the world.
struct WorldState {
    enum class VictimStatus : std::uint8_t { alive, triaged, expired };

    Grid<BlockType> grid;
    std::vector<VictimStatus> victims;
    int score = 0;
    int critical_saved = 0;
    int noncritical_saved = 0;
    int triage_victim = -1;  // victim receiving consecutive triage ticks
    int triage_ticks = 0;

    friend bool operator==(const WorldState&, const WorldState&) = default;
};

WorldState initial_world(const Map& map);

struct StepResult {
    WorldState world;
    Pose pose;
};

// Applies one action at `tick`, then expires victims whose deadline has passed so the
// returned state is valid for tick + 1. Illegal actions degrade to no-ops.
StepResult step(const Map& map, const WorldState& world, const Pose& pose, Action action, int tick);

struct Observation {
    Grid<std::uint8_t> visible;  // BlockType value or kUnseen
    std::uint8_t beep = 0;       // 0 none, 1 non-critical, 2 critical
    Pose pose;
    int tick = 0;

    friend bool operator==(const Observation&, const Observation&) = default;
};

// Line of sight from the centre of `from` to the centre of `to`: blocked iff the open
// segment passes through the interior of a sight-blocking cell other than `to`.
bool line_of_sight(const Grid<BlockType>& grid, Vec2i from, Vec2i to);

int beep_at(const Map& map, const WorldState& world, Vec2i pos);

Observation observe(const Map& map, const WorldState& world, const Pose& pose, int tick);

// --- Scripted agents ---

enum class Strategy : std::uint8_t { nearest_victim = 0, critical_first, signal_aware };
std::string_view strategy_name(Strategy s);
Strategy strategy_from_name(std::string_view name);

struct AgentProfile {
    int id = 0;
    Strategy strategy = Strategy::nearest_victim;
    double noise = 0.0;

    friend bool operator==(const AgentProfile&, const AgentProfile&) = default;
};

struct TrajectoryStep {
    Observation observation;
    Action action = Action::none;

    friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

struct Trajectory {
    std::string map_id;
    AgentProfile profile;
    std::uint64_t seed = 0;
    int width = 0;
    int height = 0;
    std::vector<TrajectoryStep> steps;
    // Set when the agent ran out of reachable targets and idled to mission end.
    bool stalled = false;
    int final_score = 0;

    int ticks() const { return static_cast<int>(steps.size()); }
    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

Trajectory run_scripted_agent(const Map& map, const AgentProfile& profile, std::uint64_t seed,
                              int mission_ticks = kDefaultMissionTicks);

struct ReplayReport {
    bool identical = true;
    int first_mismatch_tick = -1;
    int final_score = 0;
};

// Re-simulates the stored actions from the spawn pose and compares every observation.
ReplayReport replay(const Map& map, const Trajectory& trajectory);

// World state at each tick of a trajectory (index t = state observed at tick t).
std::vector<WorldState> replay_states(const Map& map, const Trajectory& trajectory);

}  // namespace tom
