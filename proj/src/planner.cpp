#include "tom/planner.hpp"

#include <algorithm>
#include <limits>
#include <queue>

namespace tom {

namespace {

CellKind kind_of(BlockType t) {
    if (t == BlockType::door_closed) return CellKind::door;
    if (is_walkable(t)) return CellKind::traversable;
    return CellKind::blocked;
}

int heuristic(const OccupancyGrid& grid, Vec2i p, Vec2i goal) {
    const int d = manhattan(p, goal);
    if (grid.kind.at(goal) == CellKind::blocked) return d > 0 ? d - 1 : 0;
    return d;
}

int state_index(const OccupancyGrid& g, const Pose& p) {
    return (p.pos.y * g.width() + p.pos.x) * 4 + static_cast<int>(p.facing);
}

Pose state_pose(const OccupancyGrid& g, int s) {
    const int cell = s / 4;
    return {{cell % g.width(), cell / g.width()}, static_cast<Facing>(s % 4)};
}

// Rotation from `from` to `to`: +1 right, -1 left, 2 half turn, 0 none.
int rotation(Facing from, Facing to) {
    const int diff = (static_cast<int>(to) - static_cast<int>(from) + 4) % 4;
    return diff == 3 ? -1 : diff;
}

Action turn_toward(Facing current, Facing target) {
    // Half turns start with a left turn.
    return rotation(current, target) == 1 ? Action::right_turn : Action::left_turn;
}

Facing direction_to(Vec2i from, Vec2i to) {
    if (to.y < from.y) return Facing::north;
    if (to.x > from.x) return Facing::east;
    if (to.y > from.y) return Facing::south;
    return Facing::west;
}

}  // namespace

OccupancyGrid occupancy_from_blocks(const Grid<BlockType>& blocks) {
    OccupancyGrid g{Grid<CellKind>(blocks.width(), blocks.height()), blocks};
    for (std::size_t i = 0; i < blocks.size(); ++i) g.kind[i] = kind_of(blocks[i]);
    return g;
}

OccupancyGrid collapse(const BeliefState& belief) {
    Grid<BlockType> blocks(belief.width, belief.height, BlockType::air);
    for (int y = 0; y < belief.height; ++y) {
        for (int x = 0; x < belief.width; ++x) {
            const double* cell = belief.cell(x, y);
            int best = 0;
            for (int k = 1; k < belief.num_types; ++k) {
                if (cell[k] > cell[best]) best = k;
            }
            blocks.at(x, y) = static_cast<BlockType>(best);
        }
    }
    return occupancy_from_blocks(blocks);
}

bool goal_reached(const OccupancyGrid& grid, const Pose& pose, Vec2i goal) {
    if (grid.kind.at(goal) != CellKind::blocked) return pose.pos == goal;
    return pose.ahead() == goal;
}

Path astar(const OccupancyGrid& grid, const Pose& start, Vec2i goal) {
    Path path;
    if (!grid.kind.in_bounds(start.pos) || !grid.kind.in_bounds(goal)) return path;

    const int n_states = grid.width() * grid.height() * 4;
    constexpr int kInf = std::numeric_limits<int>::max();
    std::vector<int> g_cost(n_states, kInf);
    std::vector<int> parent(n_states, -1);
    std::vector<char> closed(n_states, 0);

    struct Entry {
        int f;
        long long order;
        int state;
        bool operator>(const Entry& o) const { return f != o.f ? f > o.f : order > o.order; }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    long long order = 0;

    const int s0 = state_index(grid, start);
    g_cost[s0] = 0;
    open.push({heuristic(grid, start.pos, goal), order++, s0});
    int found = -1;
    while (!open.empty()) {
        const Entry e = open.top();
        open.pop();
        if (closed[e.state]) continue;
        closed[e.state] = 1;
        const Pose p = state_pose(grid, e.state);
        if (goal_reached(grid, p, goal)) {
            found = e.state;
            break;
        }
        // Successors in fixed order: forward, left turn, right turn.
        Pose next[3];
        int cost[3];
        int count = 0;
        const Vec2i ahead = p.ahead();
        if (grid.kind.in_bounds(ahead) && grid.kind.at(ahead) != CellKind::blocked) {
            next[count] = {ahead, p.facing};
            cost[count++] = kMoveCost + (grid.kind.at(ahead) == CellKind::door ? kToggleCost : 0);
        }
        next[count] = {p.pos, turn_left(p.facing)};
        cost[count++] = kTurnCost;
        next[count] = {p.pos, turn_right(p.facing)};
        cost[count++] = kTurnCost;
        for (int i = 0; i < count; ++i) {
            const int s = state_index(grid, next[i]);
            if (closed[s]) continue;
            const int g = g_cost[e.state] + cost[i];
            if (g < g_cost[s]) {
                g_cost[s] = g;
                parent[s] = e.state;
                open.push({g + heuristic(grid, next[i].pos, goal), order++, s});
            }
        }
    }
    if (found < 0) return path;
    for (int s = found; s >= 0; s = parent[s]) path.poses.push_back(state_pose(grid, s));
    std::reverse(path.poses.begin(), path.poses.end());
    path.cost = g_cost[found];
    return path;
}

Action first_action(const OccupancyGrid& grid, const Pose& start, Vec2i goal, const Path& path) {
    if (path.empty()) return Action::none;
    if (path.steps() == 0) {
        if (grid.kind.at(goal) != CellKind::blocked) return Action::none;
        const BlockType target = grid.blocks.at(goal);
        if (is_victim(target)) return Action::triage;
        if (target == BlockType::lever) return Action::toggle_lever;
        return Action::none;
    }
    // Direction of the first translation; if the path only turns, the final facing.
    Facing wanted = path.poses.back().facing;
    for (const Pose& p : path.poses) {
        if (p.pos != start.pos) {
            wanted = direction_to(start.pos, p.pos);
            break;
        }
    }
    if (wanted != start.facing) return turn_toward(start.facing, wanted);
    if (grid.kind.at(start.ahead()) == CellKind::door) return Action::toggle_door;
    return Action::move_forward;
}

Action plan_action(const OccupancyGrid& grid, const Pose& start, Vec2i goal) {
    return first_action(grid, start, goal, astar(grid, start, goal));
}

Action action_model(const BeliefState& belief, Vec2i intent) {
    return plan_action(collapse(belief), belief.pose, intent);
}

Grid<int> distance_map(const OccupancyGrid& grid, Vec2i from) {
    Grid<int> dist(grid.width(), grid.height(), -1);
    if (!grid.kind.in_bounds(from)) return dist;
    using Item = std::pair<int, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    const auto start = grid.kind.index(from.x, from.y);
    dist[start] = 0;
    open.push({0, static_cast<int>(start)});
    while (!open.empty()) {
        const auto [d, i] = open.top();
        open.pop();
        if (d > dist[i]) continue;
        const Vec2i c = grid.kind.coord(i);
        for (int f = 0; f < 4; ++f) {
            const Vec2i delta = facing_delta(static_cast<Facing>(f));
            const Vec2i n{c.x + delta.x, c.y + delta.y};
            if (!grid.kind.in_bounds(n) || grid.kind.at(n) == CellKind::blocked) continue;
            const int nd = d + kMoveCost + (grid.kind.at(n) == CellKind::door ? kToggleCost : 0);
            const auto ni = grid.kind.index(n.x, n.y);
            if (dist[ni] < 0 || nd < dist[ni]) {
                dist[ni] = nd;
                open.push({nd, static_cast<int>(ni)});
            }
        }
    }
    return dist;
}

IntentPrior intent_prior(const BeliefState& belief) {
    IntentPrior prior{Grid<double>(belief.width, belief.height, 0.0), false};
    const OccupancyGrid occ = collapse(belief);
    double total = 0.0;
    for (int y = 0; y < belief.height; ++y) {
        for (int x = 0; x < belief.width; ++x) {
            if (!is_location_of_interest(occ.blocks.at(x, y))) continue;
            const int d = std::max(manhattan({x, y}, belief.pose.pos), 1);
            prior.probs.at(x, y) = 1.0 / d;
            total += 1.0 / d;
        }
    }
    if (total == 0.0) {
        prior.fallback_uniform = true;
        std::fill(prior.probs.cells().begin(), prior.probs.cells().end(), 1.0 / prior.probs.size());
        return prior;
    }
    for (double& v : prior.probs.cells()) v /= total;
    return prior;
}

Vec2i sample_intent(const IntentPrior& prior, std::mt19937_64& rng) {
    const auto& w = prior.probs.cells();
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    return prior.probs.coord(pick(rng));
}

}  // namespace tom
