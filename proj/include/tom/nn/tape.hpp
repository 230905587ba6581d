#pragma once

#include <functional>
#include <stdexcept>
#include <deque>
#include <vector>

#include "tom/nn/tensor.hpp"

namespace tom::nn {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const std::vector<int>& shape() const { return value().shape(); }
};

class StaleTapeError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

// Reverse-mode recorder. Every op appends a node holding its output and a closure that
// pushes the node's gradient into its parents. A tape supports exactly one backward pass.
class Tape {
  public:
    using Backward = std::function<void(Tape&, int self)>;

    // Leaf that never receives a gradient (data inputs).
    Var constant(Tensor value);
    // Leaf whose gradient is added into `p.grad` by backward().
    Var param(Parameter& p);

    // Records an op output. The node requires a gradient iff any parent does.
    Var record(Tensor value, const std::vector<int>& parents, Backward backward);

    const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
    // Gradient buffer of a node, zero-initialised on first access.
    Tensor& grad(int id);

    // Seeds d(out)/d(out) with `seed` (ones for a scalar when omitted) and runs the
    // recorded closures in reverse order.
    void backward(Var out);
    void backward(Var out, const Tensor& seed);

    bool stale() const { return stale_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Parameter* param = nullptr;
        Backward backward;
    };
    std::deque<Node> nodes_;  // deque keeps value references stable while recording
    bool stale_ = false;
};

}  // namespace tom::nn
