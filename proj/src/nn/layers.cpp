#include "tom/nn/layers.hpp"

#include <cmath>

namespace tom::nn {

Conv2d::Conv2d(const std::string& name, int in, int out, int kernel, std::mt19937_64& rng)
    : weight(name + ".weight", randn({out, in, kernel, kernel}, std::sqrt(2.0 / (in * kernel * kernel)), rng)),
      bias(name + ".bias", Tensor({out})),
      pad(kernel / 2) {}

Var Conv2d::operator()(Tape& tape, Var x) { return conv2d(x, tape.param(weight), tape.param(bias), pad); }

void Conv2d::collect(StateRefs& refs) {
    refs.parameters.push_back(&weight);
    refs.parameters.push_back(&bias);
}

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng)
    : weight(name + ".weight", randn({out, in}, std::sqrt(2.0 / in), rng)), bias(name + ".bias", Tensor({out})) {}

Var Linear::operator()(Tape& tape, Var x) { return linear(x, tape.param(weight), tape.param(bias)); }

void Linear::collect(StateRefs& refs) {
    refs.parameters.push_back(&weight);
    refs.parameters.push_back(&bias);
}

BatchNorm2d::BatchNorm2d(const std::string& n, int channels)
    : gamma(n + ".gamma", Tensor({channels}, 1.0)),
      beta(n + ".beta", Tensor({channels})),
      buffers{Tensor({channels}), Tensor({channels}, 1.0)},
      name(n) {}

Var BatchNorm2d::operator()(Tape& tape, Var x, bool train) {
    return batchnorm2d(x, tape.param(gamma), tape.param(beta), buffers, train, momentum, eps);
}

void BatchNorm2d::collect(StateRefs& refs) {
    refs.parameters.push_back(&gamma);
    refs.parameters.push_back(&beta);
    refs.buffers.emplace_back(name + ".running_mean", &buffers.running_mean);
    refs.buffers.emplace_back(name + ".running_var", &buffers.running_var);
}

Sgd::Sgd(double lr, double momentum, double weight_decay) : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    set_lr(lr);
    if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("momentum and weight decay must be >= 0");
}

void Sgd::set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    lr_ = lr;
}

void Sgd::step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        if (p->grad.shape() != p->value.shape()) throw std::invalid_argument("gradient shape mismatch for " + p->name);
        auto& v = velocity_[p];
        if (v.size() != p->value.numel()) v.assign(p->value.numel(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum_ * v[i] + (p->grad[i] + weight_decay_ * p->value[i]);
            p->value[i] -= lr_ * v[i];
        }
    }
}

void zero_grad(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

}  // namespace tom::nn
