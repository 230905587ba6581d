#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tom/nn/tape.hpp"

namespace tom::nn {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst;  // "<parameter>[index]"
    std::size_t checked = 0;
    bool passed = false;
};

// Compares reverse-mode gradients of a scalar loss with central differences for every
// entry of `params`. `loss` must build the whole graph on the given tape from the current
// parameter values and be deterministic. Per-entry error is
//   |a - n| / max(|a|, |n|, floor),   floor = 1e-3 * max_i |a_i| (or 1e-12 if all zero),
// so entries many orders below the gradient scale are compared on an absolute footing.
GradCheckReport grad_check(const std::function<Var(Tape&)>& loss, const std::vector<Parameter*>& params,
                           double tolerance, double step = 1e-5);

}  // namespace tom::nn
