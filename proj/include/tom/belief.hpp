#pragma once

#include <vector>

#include "tom/gridworld.hpp"

namespace tom {

inline constexpr double kDefaultForgetfulness = 0.01;

// The observer's estimate of the observed agent's belief: an X x Y x K grid of block-type
// probabilities plus the pose, timer and beep channels taken from the latest observation.
struct BeliefState {
    int width = 0;
    int height = 0;
    int num_types = 0;
    std::vector<double> probs;  // ((y * width) + x) * num_types + k
    Pose pose;
    int tick = 0;
    double timer = 0.0;  // tick / mission length, clamped to [0, 1]
    int beep = 0;

    double& p(int x, int y, int k) {
        return probs[(static_cast<std::size_t>(y) * width + x) * num_types + k];
    }
    double p(int x, int y, int k) const {
        return probs[(static_cast<std::size_t>(y) * width + x) * num_types + k];
    }
    const double* cell(int x, int y) const {
        return probs.data() + (static_cast<std::size_t>(y) * width + x) * num_types;
    }

    friend bool operator==(const BeliefState&, const BeliefState&) = default;
};

BeliefState init_belief(int width, int height, int num_types = kNumBlockTypes);

// Visible cells become one-hot on the observed type; unseen cells are untouched.
BeliefState integrate(const BeliefState& belief, const Observation& observation,
                      int mission_ticks = kDefaultMissionTicks);

// b -> (b + eps) / (1 + K eps), applied to every entry.
BeliefState decay(const BeliefState& belief, double eps);

// One tick of the belief model: integrate, then decay.
BeliefState update(const BeliefState& belief, const Observation& observation, double eps,
                   int mission_ticks = kDefaultMissionTicks);

// In-place variants used by the dataset builders' tight loops.
void integrate_in_place(BeliefState& belief, const Observation& observation,
                        int mission_ticks = kDefaultMissionTicks);
void decay_in_place(BeliefState& belief, double eps);

// Largest |sum_k p - 1| over all cells.
double max_normalization_error(const BeliefState& belief);

// Largest |p - 1/K| over all entries.
double distance_to_uniform(const BeliefState& belief);

}  // namespace tom
