#pragma once

#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "tom/nn/ops.hpp"

namespace tom::nn {

// Named view of every tensor a model owns; parameters are trainable, buffers are not.
struct StateRefs {
    std::vector<Parameter*> parameters;
    std::vector<std::pair<std::string, Tensor*>> buffers;
};

class Conv2d {
  public:
    Conv2d() = default;
    // He-normal weights, zero bias. Padding keeps the spatial size (k odd).
    Conv2d(const std::string& name, int in, int out, int kernel, std::mt19937_64& rng);

    Var operator()(Tape& tape, Var x);
    void collect(StateRefs& refs);

    Parameter weight;
    Parameter bias;
    int pad = 0;
};

class Linear {
  public:
    Linear() = default;
    Linear(const std::string& name, int in, int out, std::mt19937_64& rng);

    Var operator()(Tape& tape, Var x);
    void collect(StateRefs& refs);

    Parameter weight;
    Parameter bias;
};

class BatchNorm2d {
  public:
    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, int channels);

    Var operator()(Tape& tape, Var x, bool train);
    void collect(StateRefs& refs);

    Parameter gamma;
    Parameter beta;
    BatchNormBuffers buffers;
    std::string name;
    double momentum = 0.1;
    double eps = 1e-5;
};

// SGD with momentum and L2 weight decay: v <- mu v + (g + wd p); p <- p - lr v.
class Sgd {
  public:
    Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0);

    void step(const std::vector<Parameter*>& params);
    double lr() const { return lr_; }
    void set_lr(double lr);

  private:
    double lr_;
    double momentum_;
    double weight_decay_;
    std::unordered_map<const Parameter*, std::vector<double>> velocity_;
};

void zero_grad(const std::vector<Parameter*>& params);

}  // namespace tom::nn
