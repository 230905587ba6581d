#include <doctest.h>

#include <random>

#include "tom/belief.hpp"
#include "tom/planner.hpp"

using namespace tom;

namespace {

Observation blank_observation(int w, int h, int tick) {
    Observation o;
    o.visible = Grid<std::uint8_t>(w, h, kUnseen);
    o.tick = tick;
    return o;
}

Observation random_observation(int w, int h, int tick, std::mt19937_64& rng) {
    Observation o = blank_observation(w, h, tick);
    std::uniform_int_distribution<int> type(0, kNumBlockTypes - 1);
    std::bernoulli_distribution seen(0.3);
    for (auto& c : o.visible.cells()) {
        if (seen(rng)) c = static_cast<std::uint8_t>(type(rng));
    }
    o.pose = {{static_cast<int>(rng() % w), static_cast<int>(rng() % h)}, static_cast<Facing>(rng() % 4)};
    o.beep = static_cast<std::uint8_t>(rng() % 3);
    return o;
}

}  // namespace

TEST_CASE("uniform initialization") {
    const BeliefState b = init_belief(24, 24, 8);
    for (double p : b.probs) CHECK(p == 0.125);
    CHECK(b.timer == 0.0);
    CHECK(b.beep == 0);
    const BeliefState tiny = init_belief(1, 1, 2);
    CHECK(tiny.p(0, 0, 0) == 0.5);
    CHECK(tiny.p(0, 0, 1) == 0.5);
    CHECK(max_normalization_error(b) < 1e-15);
    CHECK_THROWS(init_belief(0, 3, 8));
}

TEST_CASE("integrate overwrites visible cells with one-hot distributions") {
    BeliefState b = init_belief(6, 6);
    Observation o = blank_observation(6, 6, 240);
    o.visible.at(3, 4) = static_cast<std::uint8_t>(BlockType::wall);
    o.beep = 2;
    o.pose = {{1, 2}, Facing::south};
    b = integrate(b, o);
    for (int k = 0; k < kNumBlockTypes; ++k) CHECK(b.p(3, 4, k) == (k == static_cast<int>(BlockType::wall) ? 1.0 : 0.0));
    CHECK(b.p(0, 0, 0) == 0.125);
    CHECK(b.timer == doctest::Approx(0.2));
    CHECK(b.beep == 2);
    CHECK(b.pose == o.pose);

    // Believed closed door then observed open.
    o.visible.at(3, 4) = static_cast<std::uint8_t>(BlockType::door_open);
    b = integrate(b, o);
    CHECK(b.p(3, 4, static_cast<int>(BlockType::door_open)) == 1.0);
    CHECK(b.p(3, 4, static_cast<int>(BlockType::wall)) == 0.0);

    // Idempotent for a fixed observation.
    CHECK(integrate(b, o) == b);
}

TEST_CASE("a fully unseen observation only refreshes the auxiliary channels") {
    const BeliefState b = init_belief(4, 4);
    const BeliefState after = integrate(b, blank_observation(4, 4, 600));
    CHECK(after.probs == b.probs);
    CHECK(after.timer == 0.5);
    CHECK(after.tick == 600);
}

TEST_CASE("integrate rejects mismatched dimensions") {
    CHECK_THROWS(integrate(init_belief(4, 4), blank_observation(5, 4, 0)));
}

TEST_CASE("decay formula and fixed point") {
    BeliefState b = init_belief(1, 1, 4);
    b.probs = {1.0, 0.0, 0.0, 0.0};
    const BeliefState d = decay(b, 0.01);
    CHECK(d.p(0, 0, 0) == doctest::Approx(1.01 / 1.04).epsilon(1e-14));
    CHECK(d.p(0, 0, 1) == doctest::Approx(0.01 / 1.04).epsilon(1e-14));
    CHECK_THROWS(decay(b, -0.1));

    // Uniform is an exact fixed point.
    const BeliefState u = init_belief(24, 24, 8);
    BeliefState v = u;
    for (int i = 0; i < 1000; ++i) v = decay(v, kDefaultForgetfulness);
    CHECK(v.probs == u.probs);
}

TEST_CASE("update composes integrate then decay") {
    BeliefState b = init_belief(3, 3);
    Observation o = blank_observation(3, 3, 0);
    o.visible.at(1, 1) = static_cast<std::uint8_t>(BlockType::victim_critical);
    b = update(b, o, 0.01);
    CHECK(b.p(1, 1, static_cast<int>(BlockType::victim_critical)) == doctest::Approx(1.01 / 1.08).epsilon(1e-14));
}

TEST_CASE("decay contracts toward uniform by 1/(1+K eps)") {
    std::mt19937_64 rng(3);
    BeliefState b = init_belief(8, 8);
    b = integrate(b, random_observation(8, 8, 0, rng));
    for (int i = 0; i < 50; ++i) {
        const double before = distance_to_uniform(b);
        b = update(b, blank_observation(8, 8, i), 0.01);
        CHECK(distance_to_uniform(b) == doctest::Approx(before / 1.08).epsilon(1e-9));
    }
}

TEST_CASE("randomized updates preserve normalization and range") {
    std::mt19937_64 rng(17);
    BeliefState b = init_belief(12, 12);
    double worst = 0.0;
    for (int t = 0; t < 2000; ++t) {
        b = update(b, random_observation(12, 12, t, rng), 0.01);
        worst = std::max(worst, max_normalization_error(b));
        for (double p : b.probs) REQUIRE((p >= 0.0 && p <= 1.0));
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("a single decay never changes the argmax of a one-hot cell") {
    for (int k = 0; k < kNumBlockTypes; ++k) {
        BeliefState b = init_belief(1, 1);
        Observation o = blank_observation(1, 1, 0);
        o.visible.at(0, 0) = static_cast<std::uint8_t>(k);
        b = integrate(b, o);
        for (double eps : {0.01, 0.5, 0.99}) {
            CHECK(collapse(decay(b, eps)).blocks.at(0, 0) == static_cast<BlockType>(k));
        }
    }
}
