#pragma once

#include <random>
#include <vector>

#include "tom/belief.hpp"

namespace tom {

enum class CellKind : std::uint8_t { traversable = 0, blocked, door };

// Crisp planning grid. `blocks` keeps the argmax block type so goals can be interpreted
// (stand on a passable goal, face a blocked one).
struct OccupancyGrid {
    Grid<CellKind> kind;
    Grid<BlockType> blocks;

    int width() const { return kind.width(); }
    int height() const { return kind.height(); }
};

OccupancyGrid occupancy_from_blocks(const Grid<BlockType>& blocks);

// Per-cell argmax over block types (ties -> lowest index), then mapped to occupancy.
OccupancyGrid collapse(const BeliefState& belief);

inline constexpr int kMoveCost = 1;
inline constexpr int kTurnCost = 1;
inline constexpr int kToggleCost = 1;

struct Path {
    std::vector<Pose> poses;  // empty when unreachable; {start} when already at the goal
    int cost = 0;

    bool empty() const { return poses.empty(); }
    int steps() const { return poses.empty() ? 0 : static_cast<int>(poses.size()) - 1; }
};

// A goal on a traversable or door cell is reached by standing on it; a goal on a blocked
// cell is reached by standing next to it and facing it.
bool goal_reached(const OccupancyGrid& grid, const Pose& pose, Vec2i goal);

// Minimum-cost pose path: moves and turns cost 1, entering a closed door costs an extra
// toggle. Manhattan-distance heuristic, FIFO tie-breaking among equal f.
Path astar(const OccupancyGrid& grid, const Pose& start, Vec2i goal);

// The single action that realizes the first step of `path` toward `goal`.
Action first_action(const OccupancyGrid& grid, const Pose& start, Vec2i goal, const Path& path);

Action plan_action(const OccupancyGrid& grid, const Pose& start, Vec2i goal);

// Rule-based action model f(b, z).
Action action_model(const BeliefState& belief, Vec2i intent);

// Cell-level shortest distances from `from` (door cells cost a toggle extra); -1 when
// unreachable. Used by scripted agents to rank targets.
Grid<int> distance_map(const OccupancyGrid& grid, Vec2i from);

struct IntentPrior {
    Grid<double> probs;
    bool fallback_uniform = false;
};

// Mass 1/max(d, 1) on believed victims, doors and openings, d = L1 distance to the agent;
// uniform over the grid when no such cell is believed.
IntentPrior intent_prior(const BeliefState& belief);

Vec2i sample_intent(const IntentPrior& prior, std::mt19937_64& rng);

}  // namespace tom
