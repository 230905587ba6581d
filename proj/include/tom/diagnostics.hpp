#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tom/nn/grad_check.hpp"

namespace tom {

struct NamedGradCheck {
    std::string name;
    double tolerance = 0.0;
    nn::GradCheckReport report;
    bool passed() const { return report.checked > 0 && report.max_rel_error < tolerance; }
};

inline constexpr double kLayerGradTolerance = 1e-6;
inline constexpr double kModelGradTolerance = 1e-4;

// Central-difference checks of every layer kind on small random inputs, including the
// concept-whitening layer in training and inference mode.
std::vector<NamedGradCheck> layer_gradient_checks(std::uint64_t seed = 7);

// Both full models (and the desire model with concept whitening) at 8x8 inputs.
std::vector<NamedGradCheck> model_gradient_checks(std::uint64_t seed = 11);

}  // namespace tom
