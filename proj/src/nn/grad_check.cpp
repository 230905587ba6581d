#include "tom/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "tom/nn/layers.hpp"

namespace tom::nn {

namespace {

double evaluate(const std::function<Var(Tape&)>& loss) {
    Tape tape;
    const Var out = loss(tape);
    if (out.value().numel() != 1) throw std::invalid_argument("grad_check: loss must be a scalar");
    return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Tape&)>& loss, const std::vector<Parameter*>& params,
                           double tolerance, double step) {
    zero_grad(params);
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    std::vector<Storage> analytic;
    double scale = 0.0;
    for (Parameter* p : params) {
        analytic.push_back(p->grad.values());
        for (double g : p->grad.values()) scale = std::max(scale, std::abs(g));
    }
    const double floor = scale > 0.0 ? 1e-3 * scale : 1e-12;

    GradCheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + step;
            const double up = evaluate(loss);
            p.value[i] = saved - step;
            const double down = evaluate(loss);
            p.value[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            ++report.checked;
            if (err > report.max_rel_error || report.worst.empty()) {
                report.max_rel_error = err;
                report.worst = p.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace tom::nn
