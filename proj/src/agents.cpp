#include <algorithm>
#include <limits>

#include "tom/gridworld.hpp"
#include "tom/planner.hpp"

namespace tom {

namespace {

enum class TargetKind { none, victim, explore, location };

struct Target {
    TargetKind kind = TargetKind::none;
    Vec2i cell;
    int room = -1;
};

// Scripted stand-in for a human participant. The agent is briefed on the building layout
// (walls, doors, openings, levers) but learns victims only by seeing them.
class ScriptedAgent {
  public:
    ScriptedAgent(const Map& map, const AgentProfile& profile, std::uint64_t seed)
        : map_(map), profile_(profile), rng_(seed), knowledge_(map.grid),
          visited_(map.num_rooms, 0), beep_heard_(map.num_rooms, -1) {
        for (auto& cell : knowledge_.cells()) {
            if (is_victim(cell)) cell = BlockType::air;
        }
    }

    bool stalled() const { return stalled_; }

    Action decide(const Observation& o) {
        learn(o);
        const OccupancyGrid occ = occupancy_from_blocks(knowledge_);
        for (int attempt = 0; attempt < 4; ++attempt) {
            if (!valid(target_, o)) target_ = choose(o, occ);
            if (target_.kind == TargetKind::none) {
                stalled_ = true;
                return Action::none;
            }
            const Vec2i goal = goal_cell(target_, o, occ);
            const Path path = astar(occ, o.pose, goal);
            if (!path.empty()) {
                const Action a = first_action(occ, o.pose, goal, path);
                if (a != Action::none) return a;
            }
            // Unreachable or already satisfied without an interaction: pick something else.
            target_ = {};
        }
        return Action::none;
    }

  private:
    void learn(const Observation& o) {
        for (std::size_t i = 0; i < knowledge_.size(); ++i) {
            if (o.visible[i] != kUnseen) knowledge_[i] = static_cast<BlockType>(o.visible[i]);
        }
        const int room = map_.room_of.at(o.pose.pos);
        if (room >= 0) visited_[room] = 1;
        // A beep heard next to a passage is attributed to the unvisited rooms behind it.
        for (int oy = -1; oy <= 1; ++oy) {
            for (int ox = -1; ox <= 1; ++ox) {
                if (std::abs(ox) + std::abs(oy) > 1) continue;
                const Vec2i c{o.pose.pos.x + ox, o.pose.pos.y + oy};
                if (!map_.grid.in_bounds(c)) continue;
                const BlockType t = map_.grid.at(c);
                if (!is_door(t) && t != BlockType::opening) continue;
                for (int f = 0; f < 4; ++f) {
                    const Vec2i d = facing_delta(static_cast<Facing>(f));
                    const Vec2i n{c.x + d.x, c.y + d.y};
                    if (!map_.grid.in_bounds(n)) continue;
                    const int r = map_.room_of.at(n);
                    if (r >= 0 && !visited_[r]) beep_heard_[r] = o.beep;
                }
            }
        }
    }

    bool valid(const Target& t, const Observation& o) const {
        switch (t.kind) {
            case TargetKind::none:
                return false;
            case TargetKind::victim:
                return is_victim(knowledge_.at(t.cell));
            case TargetKind::explore:
                return map_.room_of.at(o.pose.pos) != t.room;
            case TargetKind::location:
                if (is_victim(map_.grid.at(t.cell))) return is_victim(knowledge_.at(t.cell));
                return o.pose.pos != t.cell;
        }
        return false;
    }

    Vec2i goal_cell(const Target& t, const Observation& o, const OccupancyGrid& occ) const {
        if (t.kind != TargetKind::explore) return t.cell;
        // Closest reachable walkable cell of the room.
        const Grid<int> dist = distance_map(occ, o.pose.pos);
        Vec2i best = t.cell;
        int best_d = std::numeric_limits<int>::max();
        for (int y = 0; y < map_.height(); ++y) {
            for (int x = 0; x < map_.width(); ++x) {
                if (map_.room_of.at(x, y) != t.room || occ.kind.at(x, y) != CellKind::traversable) continue;
                const int d = dist.at(x, y);
                if (d >= 0 && d < best_d) {
                    best_d = d;
                    best = {x, y};
                }
            }
        }
        return best;
    }

    // Distance to stand next to a victim at `cell`.
    static int victim_distance(const Grid<int>& dist, Vec2i cell) {
        int best = -1;
        for (int f = 0; f < 4; ++f) {
            const Vec2i d = facing_delta(static_cast<Facing>(f));
            const Vec2i n{cell.x + d.x, cell.y + d.y};
            if (!dist.in_bounds(n) || dist.at(n) < 0) continue;
            if (best < 0 || dist.at(n) < best) best = dist.at(n);
        }
        return best;
    }

    Target choose(const Observation& o, const OccupancyGrid& occ) {
        const Grid<int> dist = distance_map(occ, o.pose.pos);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        if (profile_.noise > 0.0 && unit(rng_) < profile_.noise) {
            std::vector<Vec2i> known;
            for (int y = 0; y < map_.height(); ++y) {
                for (int x = 0; x < map_.width(); ++x) {
                    if (is_location_of_interest(knowledge_.at(x, y)) && Vec2i{x, y} != o.pose.pos)
                        known.push_back({x, y});
                }
            }
            if (!known.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, known.size() - 1);
                return {TargetKind::location, known[pick(rng_)], -1};
            }
        }

        const bool triage_aware = profile_.strategy != Strategy::nearest_victim;
        Target best_critical, best_any;
        int d_critical = std::numeric_limits<int>::max();
        int d_any = std::numeric_limits<int>::max();
        for (int y = 0; y < map_.height(); ++y) {
            for (int x = 0; x < map_.width(); ++x) {
                const BlockType t = knowledge_.at(x, y);
                if (!is_victim(t)) continue;
                const int d = victim_distance(dist, {x, y});
                if (d < 0) continue;
                const bool critical = t == BlockType::victim_critical;
                if (critical && triage_aware) {
                    const int vi = map_.victim_at.at(x, y);
                    const bool feasible = o.tick + d + kCriticalTriageTicks <= map_.victims[vi].expiry_tick;
                    if (!feasible) continue;
                    if (d < d_critical) {
                        d_critical = d;
                        best_critical = {TargetKind::victim, {x, y}, -1};
                    }
                }
                if (d < d_any) {
                    d_any = d;
                    best_any = {TargetKind::victim, {x, y}, -1};
                }
            }
        }
        if (triage_aware && best_critical.kind != TargetKind::none) return best_critical;

        // Rooms not yet entered, ranked by beep evidence (signal-aware agents) then distance.
        const int current_room = map_.room_of.at(o.pose.pos);
        Target explore;
        std::pair<int, int> explore_key{std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
        std::vector<int> room_distance(map_.num_rooms, -1);
        for (int y = 0; y < map_.height(); ++y) {
            for (int x = 0; x < map_.width(); ++x) {
                const int r = map_.room_of.at(x, y);
                const int d = dist.at(x, y);
                if (r < 0 || d < 0) continue;
                if (room_distance[r] < 0 || d < room_distance[r]) room_distance[r] = d;
            }
        }
        for (int r = 0; r < map_.num_rooms; ++r) {
            if (visited_[r] || room_distance[r] < 0) continue;
            int rank = 0;
            if (profile_.strategy == Strategy::signal_aware) {
                constexpr int kRankByBeep[] = {3, 1, 0};  // heard 0, 1, 2
                rank = beep_heard_[r] < 0 ? 2 : kRankByBeep[beep_heard_[r]];
            }
            const std::pair<int, int> key{rank, room_distance[r]};
            if (key < explore_key) {
                explore_key = key;
                explore = {TargetKind::explore, {}, r};
            }
        }
        // Signal-aware agents enter rooms that beeped critical before known non-critical victims.
        if (profile_.strategy == Strategy::signal_aware && explore.kind != TargetKind::none && explore_key.first == 0)
            return explore;
        if (best_any.kind != TargetKind::none) return best_any;
        if (explore.kind != TargetKind::none) return explore;

        // Everything explored and nothing known: wander to another reachable room.
        std::vector<int> others;
        for (int r = 0; r < map_.num_rooms; ++r) {
            if (r != current_room && room_distance[r] >= 0) others.push_back(r);
        }
        if (others.empty()) return {};
        std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
        return {TargetKind::explore, {}, others[pick(rng_)]};
    }

    const Map& map_;
    AgentProfile profile_;
    std::mt19937_64 rng_;
    Grid<BlockType> knowledge_;
    std::vector<char> visited_;
    std::vector<int> beep_heard_;
    Target target_;
    bool stalled_ = false;
};

}  // namespace

Trajectory run_scripted_agent(const Map& map, const AgentProfile& profile, std::uint64_t seed, int mission_ticks) {
    if (mission_ticks <= 0) throw ConfigError("mission_ticks must be positive");
    if (profile.noise < 0.0 || profile.noise > 1.0) throw ConfigError("noise rate must lie in [0, 1]");
    Trajectory traj;
    traj.map_id = map.id;
    traj.profile = profile;
    traj.seed = seed;
    traj.width = map.width();
    traj.height = map.height();
    traj.steps.reserve(mission_ticks);

    ScriptedAgent agent(map, profile, seed);
    WorldState world = initial_world(map);
    Pose pose = map.spawn;
    for (int t = 0; t < mission_ticks; ++t) {
        Observation o = observe(map, world, pose, t);
        const Action a = agent.decide(o);
        traj.steps.push_back({std::move(o), a});
        StepResult r = step(map, world, pose, a, t);
        world = std::move(r.world);
        pose = r.pose;
    }
    traj.stalled = agent.stalled();
    traj.final_score = world.score;
    return traj;
}

}  // namespace tom
