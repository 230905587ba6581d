#include <doctest.h>

#include <queue>
#include <random>

#include "tom/planner.hpp"

using namespace tom;

namespace {

// Plain Dijkstra over (x, y, facing) used as the cost oracle for A*.
int dijkstra_cost(const OccupancyGrid& g, Pose start, Vec2i goal) {
    const int w = g.width(), h = g.height();
    std::vector<int> dist(static_cast<std::size_t>(w) * h * 4, -1);
    auto id = [&](Pose p) { return (p.pos.y * w + p.pos.x) * 4 + static_cast<int>(p.facing); };
    using Item = std::pair<int, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    dist[id(start)] = 0;
    open.push({0, id(start)});
    const bool blocked_goal = g.kind.at(goal) == CellKind::blocked;
    while (!open.empty()) {
        auto [d, s] = open.top();
        open.pop();
        if (d > dist[s]) continue;
        const Pose p{{(s / 4) % w, (s / 4) / w}, static_cast<Facing>(s % 4)};
        const Vec2i dv = facing_delta(p.facing);
        const Vec2i ahead{p.pos.x + dv.x, p.pos.y + dv.y};
        if (blocked_goal ? ahead == goal : p.pos == goal) return d;
        std::vector<std::pair<Pose, int>> next;
        if (g.kind.in_bounds(ahead) && g.kind.at(ahead) != CellKind::blocked)
            next.push_back({{ahead, p.facing}, g.kind.at(ahead) == CellKind::door ? 2 : 1});
        next.push_back({{p.pos, static_cast<Facing>((static_cast<int>(p.facing) + 1) % 4)}, 1});
        next.push_back({{p.pos, static_cast<Facing>((static_cast<int>(p.facing) + 3) % 4)}, 1});
        for (auto [q, c] : next) {
            const int qi = id(q);
            if (dist[qi] < 0 || d + c < dist[qi]) {
                dist[qi] = d + c;
                open.push({d + c, qi});
            }
        }
    }
    return -1;
}

Grid<BlockType> random_blocks(int w, int h, std::mt19937_64& rng) {
    Grid<BlockType> g(w, h, BlockType::air);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& c : g.cells()) {
        const double r = u(rng);
        if (r < 0.25) c = BlockType::wall;
        else if (r < 0.32) c = BlockType::door_closed;
        else if (r < 0.36) c = BlockType::victim_noncritical;
        else if (r < 0.40) c = BlockType::opening;
    }
    return g;
}

BeliefState belief_from_rows(const std::vector<std::string>& rows, Pose pose) {
    const int h = static_cast<int>(rows.size()), w = static_cast<int>(rows[0].size());
    BeliefState b = init_belief(w, h);
    Observation o;
    o.visible = Grid<std::uint8_t>(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) o.visible.at(x, y) = static_cast<std::uint8_t>(block_from_code(rows[y][x]));
    o.pose = pose;
    return integrate(b, o);
}

}  // namespace

TEST_CASE("collapse maps argmax block types to occupancy") {
    BeliefState b = init_belief(3, 1);
    b.probs.assign(b.probs.size(), 0.0);
    b.p(0, 0, static_cast<int>(BlockType::wall)) = 1.0;
    b.p(1, 0, static_cast<int>(BlockType::wall)) = 0.4;
    b.p(1, 0, static_cast<int>(BlockType::air)) = 0.6;
    b.p(2, 0, static_cast<int>(BlockType::door_closed)) = 1.0;
    const OccupancyGrid g = collapse(b);
    CHECK(g.kind.at(0, 0) == CellKind::blocked);
    CHECK(g.kind.at(1, 0) == CellKind::traversable);
    CHECK(g.kind.at(2, 0) == CellKind::door);
    // A perfect tie resolves to air.
    CHECK(collapse(init_belief(1, 1)).blocks.at(0, 0) == BlockType::air);
}

TEST_CASE("A* trivial paths") {
    const OccupancyGrid g = occupancy_from_blocks(Grid<BlockType>(7, 1, BlockType::air));
    const Path here = astar(g, {{2, 0}, Facing::east}, {2, 0});
    CHECK(here.steps() == 0);
    CHECK(here.cost == 0);
    const Path line = astar(g, {{0, 0}, Facing::east}, {5, 0});
    CHECK(line.cost == 5);
    CHECK(line.steps() == 5);
}

TEST_CASE("A* cost equals the Dijkstra oracle on random grids") {
    std::mt19937_64 rng(2024);
    int mismatches = 0, reachable = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const OccupancyGrid g = occupancy_from_blocks(random_blocks(16, 16, rng));
        Pose start{{static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)}, static_cast<Facing>(rng() % 4)};
        if (g.kind.at(start.pos) == CellKind::blocked) start.pos = {0, 0};
        const Vec2i goal{static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)};
        const Path p = astar(g, start, goal);
        const int oracle = dijkstra_cost(g, start, goal);
        const int cost = p.empty() ? -1 : p.cost;
        mismatches += cost != oracle;
        reachable += oracle >= 0;
        if (!p.empty()) {
            // The path is a chain of legal unit transitions whose costs add up.
            int total = 0;
            for (std::size_t i = 1; i < p.poses.size(); ++i) {
                const Pose& a = p.poses[i - 1];
                const Pose& b = p.poses[i];
                if (a.pos == b.pos) {
                    CHECK((b.facing == turn_left(a.facing) || b.facing == turn_right(a.facing)));
                    total += kTurnCost;
                } else {
                    CHECK(b.pos == a.ahead());
                    CHECK(b.facing == a.facing);
                    total += g.kind.at(b.pos) == CellKind::door ? kMoveCost + kToggleCost : kMoveCost;
                }
            }
            CHECK(total == p.cost);
            CHECK(goal_reached(g, p.poses.back(), goal));
        }
    }
    CHECK(mismatches == 0);
    CHECK(reachable > 50);
}

TEST_CASE("action model examples") {
    SUBCASE("adjacent victim ahead -> triage") {
        const BeliefState b = belief_from_rows({"#####", "#.v.#", "#####"}, {{1, 1}, Facing::east});
        CHECK(action_model(b, {2, 1}) == Action::triage);
    }
    SUBCASE("intent behind -> half turn starts left") {
        const BeliefState b = belief_from_rows({"#######", "#.....#", "#######"}, {{3, 1}, Facing::east});
        CHECK(action_model(b, {1, 1}) == Action::left_turn);
    }
    SUBCASE("intent to the right -> right turn") {
        const BeliefState b = belief_from_rows({"#####", "#...#", "#...#", "#...#", "#####"}, {{2, 1}, Facing::east});
        CHECK(action_model(b, {2, 3}) == Action::right_turn);
    }
    SUBCASE("closed door ahead -> toggle") {
        const BeliefState b = belief_from_rows({"#####", "#.+.#", "#####"}, {{1, 1}, Facing::east});
        CHECK(action_model(b, {3, 1}) == Action::toggle_door);
    }
    SUBCASE("walled-off intent -> none") {
        const BeliefState b = belief_from_rows({"#######", "#..#.v#", "#######"}, {{1, 1}, Facing::east});
        CHECK(action_model(b, {5, 1}) == Action::none);
    }
    SUBCASE("already standing on a passable intent -> none") {
        const BeliefState b = belief_from_rows({"#####", "#.o.#", "#####"}, {{2, 1}, Facing::east});
        CHECK(action_model(b, {2, 1}) == Action::none);
    }
}

TEST_CASE("action model outputs are always legal to execute") {
    std::mt19937_64 rng(5);
    const Map m = generate_map(ScenarioConfig{}, 5);
    WorldState w = initial_world(m);
    Pose pose = m.spawn;
    BeliefState b = init_belief(m.width(), m.height());
    for (int t = 0; t < 200; ++t) {
        b = update(b, observe(m, w, pose, t), kDefaultForgetfulness);
        const Vec2i z = sample_intent(intent_prior(b), rng);
        const Action a = action_model(b, z);
        CHECK(static_cast<int>(a) < kNumActions);
        const StepResult r = step(m, w, pose, a, t);
        w = r.world;
        pose = r.pose;
        CHECK(is_walkable(w.grid.at(pose.pos)));
    }
}

TEST_CASE("intent prior weights locations of interest by inverse distance") {
    // Victims at L1 distance 2 and 4.
    const BeliefState b = belief_from_rows({"#########", "#v.....v#", "#########"}, {{3, 1}, Facing::east});
    const IntentPrior p = intent_prior(b);
    CHECK_FALSE(p.fallback_uniform);
    CHECK(p.probs.at(1, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(p.probs.at(7, 1) == doctest::Approx(1.0 / 3.0));
    double total = 0.0;
    for (double v : p.probs.cells()) total += v;
    CHECK(total == doctest::Approx(1.0));

    const BeliefState empty = belief_from_rows({"####", "#..#", "####"}, {{1, 1}, Facing::east});
    const IntentPrior u = intent_prior(empty);
    CHECK(u.fallback_uniform);
    for (double v : u.probs.cells()) CHECK(v == doctest::Approx(1.0 / 12.0));

    // A location of interest under the agent gets weight 1.
    const BeliefState on = belief_from_rows({"#####", "#o..#", "#..v#", "#####"}, {{1, 1}, Facing::east});
    const IntentPrior q = intent_prior(on);
    CHECK(q.probs.at(1, 1) / q.probs.at(3, 2) == doctest::Approx(3.0));
}

TEST_CASE("intent sampling matches the prior and is reproducible") {
    const BeliefState b = belief_from_rows({"#########", "#v.....v#", "#########"}, {{3, 1}, Facing::east});
    const IntentPrior p = intent_prior(b);
    std::mt19937_64 rng(99);
    int left = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) left += sample_intent(p, rng) == Vec2i{1, 1};
    CHECK(std::abs(left / static_cast<double>(n) - 2.0 / 3.0) < 0.01);

    std::mt19937_64 a(7), c(7);
    for (int i = 0; i < 50; ++i) CHECK(sample_intent(p, a) == sample_intent(p, c));

    IntentPrior single{Grid<double>(3, 3, 0.0), false};
    single.probs.at(2, 1) = 1.0;
    for (int i = 0; i < 20; ++i) CHECK(sample_intent(single, a) == Vec2i{2, 1});
}
