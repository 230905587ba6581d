#pragma once

#include "tom/nn/tape.hpp"

namespace tom::nn {

// 2-D convolution, stride 1, zero padding `pad`. x: [N, C, H, W], w: [O, C, k, k], b: [O].
Var conv2d(Var x, Var w, Var b, int pad);

// 2x2 max pooling with stride 2; H and W must be even. Ties go to the first element in
// row-major order within the window.
Var maxpool2x2(Var x);

// Nearest-neighbour upsampling by 2 in both spatial dimensions.
Var upsample2x(Var x);

Var relu(Var x);
Var add(Var a, Var b);

// Concatenation along axis 1 (features or channels); other dimensions must agree.
Var concat(Var a, Var b);

Var reshape(Var x, std::vector<int> shape);

// y = x W^T + b. x: [N, in], w: [out, in], b: [out].
Var linear(Var x, Var w, Var b);

struct BatchNormBuffers {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
};

// Per-channel batch normalization of [N, C, H, W]. Training mode normalizes with batch
// statistics (biased variance) and updates the running buffers with `momentum`; inference
// mode is the fixed affine map from the running buffers.
Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormBuffers& buffers, bool train, double momentum = 0.1,
                double eps = 1e-5);

// log-softmax over all non-batch entries of each sample.
Var log_softmax(Var x);

// -(1/N) sum target * logp, with target a constant of the same shape.
Var soft_cross_entropy(Var logp, const Tensor& target);

// sum(x * r) for a constant r; turns any output into a scalar for gradient checks.
Var dot(Var x, const Tensor& r);

// Mean over all entries.
Var mean(Var x);

}  // namespace tom::nn
