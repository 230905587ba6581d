#include "tom/gridworld.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include <json.hpp>

namespace tom {

namespace {

constexpr std::array<char, kNumBlockTypes> kCodes{'.', '#', '+', '/', 'o', 'L', 'v', 'C'};
constexpr std::array<std::string_view, kNumBlockTypes> kBlockNames{
    "air", "wall", "door_closed", "door_open", "opening", "lever", "victim_noncritical", "victim_critical"};
constexpr std::array<std::string_view, kNumActions> kActionNames{
    "move_forward", "left_turn", "right_turn", "toggle_door", "toggle_lever", "triage", "none"};
constexpr std::array<std::string_view, 3> kStrategyNames{"nearest_victim", "critical_first", "signal_aware"};
constexpr std::array<std::string_view, 4> kFacingNames{"north", "east", "south", "west"};

struct DisjointSets {
    std::vector<int> parent;
    explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[b] = a;
        return true;
    }
};

std::vector<int> partition_lines(int extent, int parts) {
    std::vector<int> lines(parts + 1);
    for (int i = 0; i <= parts; ++i) {
        lines[i] = static_cast<int>(std::lround(static_cast<double>(i) * (extent - 1) / parts));
    }
    return lines;
}

Facing facing_from_name(std::string_view name) {
    for (int i = 0; i < 4; ++i) {
        if (kFacingNames[i] == name) return static_cast<Facing>(i);
    }
    throw std::invalid_argument("unknown facing: " + std::string(name));
}

// Every victim and lever must be reachable from spawn (adjacent walkable cell), as must
// every door and opening.
bool layout_connected(const Grid<BlockType>& grid, Vec2i spawn) {
    Grid<char> seen(grid.width(), grid.height(), 0);
    std::queue<Vec2i> frontier;
    seen.at(spawn) = 1;
    frontier.push(spawn);
    while (!frontier.empty()) {
        const Vec2i c = frontier.front();
        frontier.pop();
        for (int f = 0; f < 4; ++f) {
            const Vec2i d = facing_delta(static_cast<Facing>(f));
            const Vec2i n{c.x + d.x, c.y + d.y};
            if (!grid.in_bounds(n) || seen.at(n)) continue;
            const BlockType t = grid.at(n);
            if (is_walkable(t) || is_door(t)) {
                seen.at(n) = 1;
                frontier.push(n);
            }
        }
    }
    for (int y = 0; y < grid.height(); ++y) {
        for (int x = 0; x < grid.width(); ++x) {
            const BlockType t = grid.at(x, y);
            if (is_walkable(t) || is_door(t)) {
                if (!seen.at(x, y)) return false;
            } else if (is_victim(t) || t == BlockType::lever) {
                bool reachable = false;
                for (int f = 0; f < 4 && !reachable; ++f) {
                    const Vec2i d = facing_delta(static_cast<Facing>(f));
                    const Vec2i n{x + d.x, y + d.y};
                    reachable = grid.in_bounds(n) && seen.at(n) && is_walkable(grid.at(n));
                }
                if (!reachable) return false;
            }
        }
    }
    return true;
}

}  // namespace

char block_code(BlockType t) { return kCodes[static_cast<int>(t)]; }

BlockType block_from_code(char c) {
    for (int i = 0; i < kNumBlockTypes; ++i) {
        if (kCodes[i] == c) return static_cast<BlockType>(i);
    }
    throw std::invalid_argument(std::string("unknown block code '") + c + "'");
}

std::string_view block_name(BlockType t) { return kBlockNames[static_cast<int>(t)]; }
std::string_view action_name(Action a) { return kActionNames[static_cast<int>(a)]; }
std::string_view strategy_name(Strategy s) { return kStrategyNames[static_cast<int>(s)]; }

Strategy strategy_from_name(std::string_view name) {
    for (int i = 0; i < 3; ++i) {
        if (kStrategyNames[i] == name) return static_cast<Strategy>(i);
    }
    throw ConfigError("unknown agent strategy: " + std::string(name));
}

void Map::index() {
    const int w = grid.width();
    const int h = grid.height();
    for (int x = 0; x < w; ++x) {
        if (grid.at(x, 0) != BlockType::wall || grid.at(x, h - 1) != BlockType::wall)
            throw std::invalid_argument("map border must be wall");
    }
    for (int y = 0; y < h; ++y) {
        if (grid.at(0, y) != BlockType::wall || grid.at(w - 1, y) != BlockType::wall)
            throw std::invalid_argument("map border must be wall");
    }

    victim_at = Grid<int>(w, h, -1);
    for (std::size_t i = 0; i < victims.size(); ++i) {
        const Victim& v = victims[i];
        if (!grid.in_bounds(v.pos)) throw std::invalid_argument("victim out of bounds");
        const BlockType expected = v.critical ? BlockType::victim_critical : BlockType::victim_noncritical;
        if (grid.at(v.pos) != expected) throw std::invalid_argument("victim registry disagrees with grid");
        victim_at.at(v.pos) = static_cast<int>(i);
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (is_victim(grid[i]) && victim_at[i] < 0) throw std::invalid_argument("unregistered victim block");
    }

    // Rooms: 4-connected components of cells that are not walls, doors or openings.
    room_of = Grid<int>(w, h, -1);
    num_rooms = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const BlockType t = grid.at(x, y);
            if (room_of.at(x, y) >= 0 || t == BlockType::wall || is_door(t) || t == BlockType::opening) continue;
            std::queue<Vec2i> frontier;
            frontier.push({x, y});
            room_of.at(x, y) = num_rooms;
            while (!frontier.empty()) {
                const Vec2i c = frontier.front();
                frontier.pop();
                for (int f = 0; f < 4; ++f) {
                    const Vec2i d = facing_delta(static_cast<Facing>(f));
                    const Vec2i n{c.x + d.x, c.y + d.y};
                    if (!grid.in_bounds(n) || room_of.at(n) >= 0) continue;
                    const BlockType nt = grid.at(n);
                    if (nt == BlockType::wall || is_door(nt) || nt == BlockType::opening) continue;
                    room_of.at(n) = num_rooms;
                    frontier.push(n);
                }
            }
            ++num_rooms;
        }
    }
    if (!grid.in_bounds(spawn.pos) || !is_walkable(grid.at(spawn.pos)))
        throw std::invalid_argument("spawn must be on a walkable cell");
}

Map generate_map(const ScenarioConfig& cfg, std::uint64_t seed) {
    if (cfg.width < 5 || cfg.height < 5) throw ConfigError("map must be at least 5x5");
    if (cfg.room_cols < 1 || cfg.room_rows < 1) throw ConfigError("room grid must be at least 1x1");
    if (cfg.victims < 0 || cfg.critical_victims < 0 || cfg.critical_victims > cfg.victims)
        throw ConfigError("invalid victim counts");
    if (cfg.rubble < 0 || cfg.levers < 0) throw ConfigError("invalid rubble/lever counts");

    const std::vector<int> xs = partition_lines(cfg.width, cfg.room_cols);
    const std::vector<int> ys = partition_lines(cfg.height, cfg.room_rows);
    int floor_cells = 0;
    for (int c = 0; c < cfg.room_cols; ++c) {
        for (int r = 0; r < cfg.room_rows; ++r) {
            const int rw = xs[c + 1] - xs[c] - 1;
            const int rh = ys[r + 1] - ys[r] - 1;
            if (rw < 2 || rh < 2) throw ConfigError("rooms too small for the map size");
            floor_cells += rw * rh;
        }
    }
    // One cell is reserved for the spawn.
    if (cfg.victims + cfg.rubble + cfg.levers + 1 > floor_cells)
        throw ConfigError("victim count exceeds available floor cells (" + std::to_string(floor_cells) + ")");

    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        Grid<BlockType> grid(cfg.width, cfg.height, BlockType::air);
        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                const bool on_x = std::find(xs.begin(), xs.end(), x) != xs.end();
                const bool on_y = std::find(ys.begin(), ys.end(), y) != ys.end();
                if (on_x || on_y) grid.at(x, y) = BlockType::wall;
            }
        }

        struct Link {
            int a, b;
            bool vertical_wall;  // rooms side by side, wall runs north-south
        };
        std::vector<Link> links;
        auto room_id = [&](int c, int r) { return r * cfg.room_cols + c; };
        for (int r = 0; r < cfg.room_rows; ++r) {
            for (int c = 0; c < cfg.room_cols; ++c) {
                if (c + 1 < cfg.room_cols) links.push_back({room_id(c, r), room_id(c + 1, r), true});
                if (r + 1 < cfg.room_rows) links.push_back({room_id(c, r), room_id(c, r + 1), false});
            }
        }
        std::shuffle(links.begin(), links.end(), rng);
        DisjointSets sets(cfg.room_cols * cfg.room_rows);
        std::vector<Link> chosen;
        std::vector<Link> spare;
        for (const Link& l : links) {
            (sets.unite(l.a, l.b) ? chosen : spare).push_back(l);
        }
        for (int i = 0; i < cfg.extra_connections && i < static_cast<int>(spare.size()); ++i) chosen.push_back(spare[i]);

        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (const Link& l : chosen) {
            const int ca = l.a % cfg.room_cols, ra = l.a / cfg.room_cols;
            int fixed, lo, hi;
            if (l.vertical_wall) {
                fixed = xs[ca + 1];
                lo = ys[ra] + 1;
                hi = ys[ra + 1] - 1;
            } else {
                fixed = ys[ra + 1];
                lo = xs[ca] + 1;
                hi = xs[ca + 1] - 1;
            }
            std::uniform_int_distribution<int> pick(lo, hi);
            const int at = pick(rng);
            const bool door = unit(rng) < cfg.door_fraction;
            BlockType kind = BlockType::opening;
            if (door) kind = unit(rng) < cfg.closed_door_fraction ? BlockType::door_closed : BlockType::door_open;
            const int span = (!door && at + 1 <= hi && unit(rng) < 0.5) ? 2 : 1;
            for (int s = 0; s < span; ++s) {
                if (l.vertical_wall) grid.at(fixed, at + s) = kind;
                else grid.at(at + s, fixed) = kind;
            }
        }

        // Candidate interior cells keep doorways clear.
        std::vector<Vec2i> candidates;
        for (int y = 1; y < cfg.height - 1; ++y) {
            for (int x = 1; x < cfg.width - 1; ++x) {
                if (grid.at(x, y) != BlockType::air) continue;
                bool near_passage = false;
                for (int f = 0; f < 4; ++f) {
                    const Vec2i d = facing_delta(static_cast<Facing>(f));
                    const BlockType n = grid.at(x + d.x, y + d.y);
                    near_passage = near_passage || is_door(n) || n == BlockType::opening;
                }
                if (!near_passage) candidates.push_back({x, y});
            }
        }
        if (static_cast<int>(candidates.size()) < cfg.victims + cfg.rubble + cfg.levers + 1) continue;
        std::shuffle(candidates.begin(), candidates.end(), rng);

        std::size_t next = 0;
        for (int i = 0; i < cfg.rubble; ++i) grid.at(candidates[next++]) = BlockType::wall;
        for (int i = 0; i < cfg.levers; ++i) grid.at(candidates[next++]) = BlockType::lever;
        std::vector<Victim> victims;
        for (int i = 0; i < cfg.victims; ++i) {
            const bool critical = i < cfg.critical_victims;
            const Vec2i p = candidates[next++];
            grid.at(p) = critical ? BlockType::victim_critical : BlockType::victim_noncritical;
            victims.push_back({p, critical, critical ? cfg.critical_expiry_ticks : cfg.noncritical_expiry_ticks});
        }
        std::uniform_int_distribution<int> facing(0, 3);
        const Pose spawn{candidates[next++], static_cast<Facing>(facing(rng))};

        if (!layout_connected(grid, spawn.pos)) continue;

        Map map;
        map.id = "map-" + hex64(seed);
        map.grid = std::move(grid);
        map.victims = std::move(victims);
        map.spawn = spawn;
        map.index();
        return map;
    }
    throw SeedExhaustedError("no connected layout after " + std::to_string(cfg.max_retries) +
                             " attempts for seed " + std::to_string(seed));
}

Map map_from_rows(std::string id, const std::vector<std::string>& rows, Pose spawn, int critical_expiry_ticks,
                  int noncritical_expiry_ticks) {
    if (rows.empty() || rows.front().empty()) throw std::invalid_argument("empty map rows");
    const int w = static_cast<int>(rows.front().size());
    const int h = static_cast<int>(rows.size());
    Map map;
    map.id = std::move(id);
    map.grid = Grid<BlockType>(w, h);
    for (int y = 0; y < h; ++y) {
        if (static_cast<int>(rows[y].size()) != w) throw std::invalid_argument("ragged map rows");
        for (int x = 0; x < w; ++x) {
            const BlockType t = block_from_code(rows[y][x]);
            map.grid.at(x, y) = t;
            if (is_victim(t)) {
                const bool critical = t == BlockType::victim_critical;
                map.victims.push_back({{x, y}, critical, critical ? critical_expiry_ticks : noncritical_expiry_ticks});
            }
        }
    }
    map.spawn = spawn;
    map.index();
    return map;
}

std::string map_to_json(const Map& map) {
    nlohmann::json j;
    j["format"] = "tom-map";
    j["version"] = 1;
    j["id"] = map.id;
    j["width"] = map.width();
    j["height"] = map.height();
    nlohmann::json rows = nlohmann::json::array();
    for (int y = 0; y < map.height(); ++y) {
        std::string row;
        for (int x = 0; x < map.width(); ++x) row.push_back(block_code(map.grid.at(x, y)));
        rows.push_back(row);
    }
    j["rows"] = rows;
    j["spawn"] = {{"x", map.spawn.pos.x}, {"y", map.spawn.pos.y},
                  {"facing", kFacingNames[static_cast<int>(map.spawn.facing)]}};
    nlohmann::json victims = nlohmann::json::array();
    for (const Victim& v : map.victims) {
        victims.push_back({{"x", v.pos.x}, {"y", v.pos.y}, {"critical", v.critical}, {"expiry_tick", v.expiry_tick}});
    }
    j["victims"] = victims;
    return j.dump(1);
}

Map map_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "tom-map") throw std::invalid_argument("not a map file");
    if (j.at("version") != 1) throw std::invalid_argument("unsupported map version");
    Map map;
    map.id = j.at("id").get<std::string>();
    const int w = j.at("width");
    const int h = j.at("height");
    const auto rows = j.at("rows").get<std::vector<std::string>>();
    if (static_cast<int>(rows.size()) != h) throw std::invalid_argument("row count mismatch");
    map.grid = Grid<BlockType>(w, h);
    for (int y = 0; y < h; ++y) {
        if (static_cast<int>(rows[y].size()) != w) throw std::invalid_argument("row width mismatch");
        for (int x = 0; x < w; ++x) map.grid.at(x, y) = block_from_code(rows[y][x]);
    }
    map.spawn = {{j.at("spawn").at("x"), j.at("spawn").at("y")},
                 facing_from_name(j.at("spawn").at("facing").get<std::string>())};
    for (const auto& v : j.at("victims")) {
        map.victims.push_back({{v.at("x"), v.at("y")}, v.at("critical"), v.at("expiry_tick")});
    }
    map.index();
    return map;
}

void save_map(const Map& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << map_to_json(map) << '\n';
}

Map load_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return map_from_json(ss.str());
}

WorldState initial_world(const Map& map) {
    WorldState w;
    w.grid = map.grid;
    w.victims.assign(map.victims.size(), WorldState::VictimStatus::alive);
    return w;
}

StepResult step(const Map& map, const WorldState& world, const Pose& pose, Action action, int tick) {
    StepResult r{world, pose};
    WorldState& w = r.world;
    Pose& p = r.pose;
    const Vec2i ahead = p.ahead();
    const bool ahead_ok = w.grid.in_bounds(ahead);
    bool triaging = false;

    switch (action) {
        case Action::move_forward:
            if (ahead_ok && is_walkable(w.grid.at(ahead))) p.pos = ahead;
            break;
        case Action::left_turn:
            p.facing = turn_left(p.facing);
            break;
        case Action::right_turn:
            p.facing = turn_right(p.facing);
            break;
        case Action::toggle_door:
            if (ahead_ok && w.grid.at(ahead) == BlockType::door_closed) w.grid.at(ahead) = BlockType::door_open;
            else if (ahead_ok && w.grid.at(ahead) == BlockType::door_open) w.grid.at(ahead) = BlockType::door_closed;
            break;
        case Action::toggle_lever:
            // Levers carry no mechanism in this building.
            break;
        case Action::triage: {
            if (!ahead_ok) break;
            const int vi = map.victim_at.at(ahead);
            if (vi < 0 || w.victims[vi] != WorldState::VictimStatus::alive) break;
            const Victim& v = map.victims[vi];
            if (tick > v.expiry_tick) break;
            triaging = true;
            if (w.triage_victim == vi) {
                ++w.triage_ticks;
            } else {
                w.triage_victim = vi;
                w.triage_ticks = 1;
            }
            const int needed = v.critical ? kCriticalTriageTicks : kNoncriticalTriageTicks;
            if (w.triage_ticks >= needed) {
                w.victims[vi] = WorldState::VictimStatus::triaged;
                w.grid.at(v.pos) = BlockType::air;
                if (v.critical) {
                    w.score += kCriticalPoints;
                    ++w.critical_saved;
                } else {
                    w.score += kNoncriticalPoints;
                    ++w.noncritical_saved;
                }
                w.triage_victim = -1;
                w.triage_ticks = 0;
            }
            break;
        }
        case Action::none:
            break;
    }
    if (!triaging) {
        w.triage_victim = -1;
        w.triage_ticks = 0;
    }

    for (std::size_t i = 0; i < map.victims.size(); ++i) {
        if (w.victims[i] == WorldState::VictimStatus::alive && map.victims[i].expiry_tick < tick + 1) {
            w.victims[i] = WorldState::VictimStatus::expired;
            w.grid.at(map.victims[i].pos) = BlockType::air;
            if (w.triage_victim == static_cast<int>(i)) {
                w.triage_victim = -1;
                w.triage_ticks = 0;
            }
        }
    }
    return r;
}

bool line_of_sight(const Grid<BlockType>& grid, Vec2i from, Vec2i to) {
    // Walk the cells whose interior the centre-to-centre segment crosses. Boundary
    // crossings are compared exactly in doubled integer coordinates; an exact corner
    // crossing steps diagonally without entering either side cell.
    const int dx = std::abs(to.x - from.x);
    const int dy = std::abs(to.y - from.y);
    const int sx = to.x > from.x ? 1 : -1;
    const int sy = to.y > from.y ? 1 : -1;
    int x = from.x;
    int y = from.y;
    int i = 0;  // vertical boundaries crossed
    int j = 0;  // horizontal boundaries crossed
    while (i < dx || j < dy) {
        // Next vertical boundary at t = (2i+1)/(2dx), horizontal at (2j+1)/(2dy).
        const long long tx = i < dx ? static_cast<long long>(2 * i + 1) * dy : -1;
        const long long ty = j < dy ? static_cast<long long>(2 * j + 1) * dx : -1;
        if (j >= dy || (i < dx && tx < ty)) {
            x += sx;
            ++i;
        } else if (i >= dx || ty < tx) {
            y += sy;
            ++j;
        } else {
            x += sx;
            y += sy;
            ++i;
            ++j;
        }
        if (x == to.x && y == to.y) return true;
        if (blocks_sight(grid.at(x, y))) return false;
    }
    return true;
}

int beep_at(const Map& map, const WorldState& world, Vec2i pos) {
    int beep = 0;
    for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
            if (std::abs(ox) + std::abs(oy) > 1) continue;
            const Vec2i c{pos.x + ox, pos.y + oy};
            if (!world.grid.in_bounds(c)) continue;
            const BlockType t = map.grid.at(c);
            if (!is_door(t) && t != BlockType::opening) continue;
            for (int f = 0; f < 4; ++f) {
                const Vec2i d = facing_delta(static_cast<Facing>(f));
                const Vec2i n{c.x + d.x, c.y + d.y};
                if (!world.grid.in_bounds(n)) continue;
                const int room = map.room_of.at(n);
                if (room < 0) continue;
                for (std::size_t v = 0; v < map.victims.size(); ++v) {
                    if (world.victims[v] != WorldState::VictimStatus::alive) continue;
                    if (map.room_of.at(map.victims[v].pos) != room) continue;
                    beep = std::max(beep, map.victims[v].critical ? 2 : 1);
                }
            }
        }
    }
    return beep;
}

Observation observe(const Map& map, const WorldState& world, const Pose& pose, int tick) {
    Observation o;
    o.visible = Grid<std::uint8_t>(world.grid.width(), world.grid.height(), kUnseen);
    for (int y = 0; y < world.grid.height(); ++y) {
        for (int x = 0; x < world.grid.width(); ++x) {
            if (line_of_sight(world.grid, pose.pos, {x, y}))
                o.visible.at(x, y) = static_cast<std::uint8_t>(world.grid.at(x, y));
        }
    }
    o.beep = static_cast<std::uint8_t>(beep_at(map, world, pose.pos));
    o.pose = pose;
    o.tick = tick;
    return o;
}

ReplayReport replay(const Map& map, const Trajectory& trajectory) {
    ReplayReport report;
    WorldState world = initial_world(map);
    Pose pose = map.spawn;
    for (int t = 0; t < trajectory.ticks(); ++t) {
        const TrajectoryStep& s = trajectory.steps[t];
        if (observe(map, world, pose, t) != s.observation) {
            report.identical = false;
            report.first_mismatch_tick = t;
            break;
        }
        StepResult r = step(map, world, pose, s.action, t);
        world = std::move(r.world);
        pose = r.pose;
    }
    report.final_score = world.score;
    return report;
}

std::vector<WorldState> replay_states(const Map& map, const Trajectory& trajectory) {
    std::vector<WorldState> states;
    states.reserve(trajectory.steps.size());
    WorldState world = initial_world(map);
    Pose pose = map.spawn;
    for (int t = 0; t < trajectory.ticks(); ++t) {
        states.push_back(world);
        StepResult r = step(map, world, pose, trajectory.steps[t].action, t);
        world = std::move(r.world);
        pose = r.pose;
    }
    return states;
}

}  // namespace tom
