#include "tom/nn/tape.hpp"

#include "tom/common.hpp"

namespace tom::nn {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
    if (stale_) throw StaleTapeError("tape already consumed by backward()");
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    if (stale_) throw StaleTapeError("tape already consumed by backward()");
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, const std::vector<int>& parents, Backward backward) {
    if (stale_) throw StaleTapeError("tape already consumed by backward()");
    Node n;
    n.value = std::move(value);
    for (int p : parents) n.requires_grad = n.requires_grad || requires_grad(p);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::backward(Var out) {
    const Tensor& v = value(out.id);
    if (v.numel() != 1) throw std::invalid_argument("backward() without a seed needs a scalar output");
    backward(out, Tensor(v.shape(), 1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
    if (stale_) throw StaleTapeError("backward() called twice on the same tape");
    if (out.tape != this) throw std::invalid_argument("variable belongs to another tape");
    if (seed.shape() != value(out.id).shape())
        throw std::invalid_argument("seed shape " + shape_string(seed.shape()) + " does not match output");
    stale_ = true;
    grad(out.id) = seed;
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad || !n.requires_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param) {
            Parameter& p = *n.param;
            if (p.grad.shape() != p.value.shape()) p.zero_grad();
            for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += n.grad[i];
        }
        check_finite(n.grad, "backward pass");
    }
}

}  // namespace tom::nn
