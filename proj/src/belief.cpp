#include "tom/belief.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tom {

BeliefState init_belief(int width, int height, int num_types) {
    if (width <= 0 || height <= 0 || num_types <= 0)
        throw std::invalid_argument("belief dimensions must be positive");
    BeliefState b;
    b.width = width;
    b.height = height;
    b.num_types = num_types;
    b.probs.assign(static_cast<std::size_t>(width) * height * num_types, 1.0 / num_types);
    return b;
}

void integrate_in_place(BeliefState& b, const Observation& o, int mission_ticks) {
    if (o.visible.width() != b.width || o.visible.height() != b.height)
        throw std::invalid_argument("observation dimensions do not match belief");
    const int k = b.num_types;
    for (int y = 0; y < b.height; ++y) {
        for (int x = 0; x < b.width; ++x) {
            const std::uint8_t seen = o.visible.at(x, y);
            if (seen == kUnseen) continue;
            if (seen >= k) throw std::invalid_argument("observed block type outside belief support");
            double* cell = &b.p(x, y, 0);
            std::fill(cell, cell + k, 0.0);
            cell[seen] = 1.0;
        }
    }
    b.pose = o.pose;
    b.tick = o.tick;
    b.timer = std::clamp(static_cast<double>(o.tick) / mission_ticks, 0.0, 1.0);
    b.beep = o.beep;
}

void decay_in_place(BeliefState& b, double eps) {
    if (eps < 0.0) throw std::invalid_argument("forgetfulness must be non-negative");
    // (b + eps) / (1 + K eps) rewritten as 1/K + (b - 1/K) / (1 + K eps), so the uniform
    // distribution maps to itself bit-exactly.
    const double uniform = 1.0 / b.num_types;
    const double contraction = 1.0 / (1.0 + b.num_types * eps);
    for (double& v : b.probs) v = uniform + (v - uniform) * contraction;
}

BeliefState integrate(const BeliefState& belief, const Observation& observation, int mission_ticks) {
    BeliefState b = belief;
    integrate_in_place(b, observation, mission_ticks);
    return b;
}

BeliefState decay(const BeliefState& belief, double eps) {
    BeliefState b = belief;
    decay_in_place(b, eps);
    return b;
}

BeliefState update(const BeliefState& belief, const Observation& observation, double eps, int mission_ticks) {
    BeliefState b = belief;
    integrate_in_place(b, observation, mission_ticks);
    decay_in_place(b, eps);
    return b;
}

double max_normalization_error(const BeliefState& b) {
    double worst = 0.0;
    for (std::size_t c = 0; c < b.probs.size(); c += b.num_types) {
        double s = 0.0;
        for (int k = 0; k < b.num_types; ++k) s += b.probs[c + k];
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

double distance_to_uniform(const BeliefState& b) {
    const double u = 1.0 / b.num_types;
    double worst = 0.0;
    for (double v : b.probs) worst = std::max(worst, std::abs(v - u));
    return worst;
}

}  // namespace tom
