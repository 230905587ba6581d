#include "tom/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Core>

namespace tom::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

void require_rank(const Tensor& t, int rank, const char* op) {
    require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                  shape_string(t.shape()));
}

Var finish(Tape& tape, Tensor out, const std::vector<int>& parents, Tape::Backward backward, const char* op) {
    check_finite(out, op);
    return tape.record(std::move(out), parents, std::move(backward));
}

void im2col(const double* x, int c, int h, int w, int k, int pad, int ho, int wo, double* cols) {
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * hw;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy + ky - pad;
                    double* out = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(out, out + wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox + kx - pad;
                        out[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, int c, int h, int w, int k, int pad, int ho, int wo, double* x) {
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci) {
        double* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * hw;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const double* in = row + static_cast<std::size_t>(oy) * wo;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int pad) {
    Tape& tape = *x.tape;
    const Tensor& X = x.value();
    const Tensor& Wt = w.value();
    require_rank(X, 4, "conv2d input");
    require_rank(Wt, 4, "conv2d weight");
    const int n = X.dim(0), c = X.dim(1), h = X.dim(2), wd = X.dim(3);
    const int o = Wt.dim(0), k = Wt.dim(2);
    require(Wt.dim(1) == c && Wt.dim(3) == k, "conv2d: weight " + shape_string(Wt.shape()) +
                                                  " incompatible with input " + shape_string(X.shape()));
    require(b.value().numel() == static_cast<std::size_t>(o), "conv2d: bias size mismatch");
    const int ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
    require(ho > 0 && wo > 0, "conv2d: empty output");
    const int rows = c * k * k;
    const std::size_t hw = static_cast<std::size_t>(ho) * wo;
    const std::size_t col_size = static_cast<std::size_t>(rows) * hw;

    auto cols = std::make_shared<Storage>(col_size * n);
    Tensor out({n, o, ho, wo});
    const MapConstMat wm(Wt.data(), o, rows);
    const Eigen::Map<const Eigen::VectorXd> bias(b.value().data(), o);
    for (int s = 0; s < n; ++s) {
        double* cs = cols->data() + col_size * s;
        im2col(X.data() + static_cast<std::size_t>(s) * c * h * wd, c, h, wd, k, pad, ho, wo, cs);
        MapMat ys(out.data() + static_cast<std::size_t>(s) * o * hw, o, static_cast<Eigen::Index>(hw));
        ys.noalias() = wm * MapConstMat(cs, rows, static_cast<Eigen::Index>(hw));
        ys.colwise() += bias;
    }
    return finish(
        tape, std::move(out), {x.id, w.id, b.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const MapConstMat wmat(t.value(w.id).data(), o, rows);
            for (int s = 0; s < n; ++s) {
                const MapConstMat gs(g.data() + static_cast<std::size_t>(s) * o * hw, o, static_cast<Eigen::Index>(hw));
                const MapConstMat cs(cols->data() + col_size * s, rows, static_cast<Eigen::Index>(hw));
                if (t.requires_grad(w.id)) {
                    MapMat dw(t.grad(w.id).data(), o, rows);
                    dw.noalias() += gs * cs.transpose();
                }
                if (t.requires_grad(b.id)) {
                    Eigen::Map<Eigen::VectorXd> db(t.grad(b.id).data(), o);
                    db += gs.rowwise().sum();
                }
                if (t.requires_grad(x.id)) {
                    RowMat dcols = wmat.transpose() * gs;
                    col2im_add(dcols.data(), c, h, wd, k, pad, ho, wo,
                               t.grad(x.id).data() + static_cast<std::size_t>(s) * c * h * wd);
                }
            }
        },
        "conv2d");
}

Var maxpool2x2(Var x) {
    const Tensor& X = x.value();
    require_rank(X, 4, "maxpool2x2");
    const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    require(h % 2 == 0 && w % 2 == 0, "maxpool2x2: spatial size must be even, got " + shape_string(X.shape()));
    const int ho = h / 2, wo = w / 2;
    Tensor out({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    std::size_t oi = 0;
    for (int p = 0; p < n * c; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++oi) {
                std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t i = base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
                        if (X[i] > X[best]) best = i;
                    }
                }
                out[oi] = X[best];
                (*argmax)[oi] = best;
            }
        }
    }
    return finish(
        *x.tape, std::move(out), {x.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            Tensor& dx = t.grad(x.id);
            for (std::size_t i = 0; i < g.numel(); ++i) dx[(*argmax)[i]] += g[i];
        },
        "maxpool2x2");
}

Var upsample2x(Var x) {
    const Tensor& X = x.value();
    require_rank(X, 4, "upsample2x");
    const int n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    const int ho = 2 * h, wo = 2 * w;
    Tensor out({n, c, ho, wo});
    for (int p = 0; p < n * c; ++p) {
        const double* src = X.data() + static_cast<std::size_t>(p) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(p) * ho * wo;
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) dst[static_cast<std::size_t>(y) * wo + xx] = src[(y / 2) * w + xx / 2];
    }
    return finish(
        *x.tape, std::move(out), {x.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            Tensor& dx = t.grad(x.id);
            for (int p = 0; p < n * c; ++p) {
                const double* src = g.data() + static_cast<std::size_t>(p) * ho * wo;
                double* dst = dx.data() + static_cast<std::size_t>(p) * h * w;
                for (int y = 0; y < ho; ++y)
                    for (int xx = 0; xx < wo; ++xx) dst[(y / 2) * w + xx / 2] += src[static_cast<std::size_t>(y) * wo + xx];
            }
        },
        "upsample2x");
}

Var relu(Var x) {
    const Tensor& X = x.value();
    Tensor out(X.shape());
    for (std::size_t i = 0; i < X.numel(); ++i) out[i] = X[i] > 0.0 ? X[i] : 0.0;
    return finish(
        *x.tape, std::move(out), {x.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const Tensor& xv = t.value(x.id);
            Tensor& dx = t.grad(x.id);
            for (std::size_t i = 0; i < g.numel(); ++i)
                if (xv[i] > 0.0) dx[i] += g[i];
        },
        "relu");
}

Var add(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.shape() == B.shape(), "add: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] + B[i];
    return finish(
        *a.tape, std::move(out), {a.id, b.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            for (int id : {a.id, b.id}) {
                if (!t.requires_grad(id)) continue;
                Tensor& d = t.grad(id);
                for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
            }
        },
        "add");
}

Var concat(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require(A.rank() >= 2 && A.rank() == B.rank() && A.dim(0) == B.dim(0), "concat: incompatible shapes");
    for (int i = 2; i < A.rank(); ++i) require(A.dim(i) == B.dim(i), "concat: trailing dimensions differ");
    const int n = A.dim(0);
    const std::size_t sa = A.numel() / n, sb = B.numel() / n;
    std::vector<int> shape = A.shape();
    shape[1] += B.dim(1);
    Tensor out(shape);
    for (int s = 0; s < n; ++s) {
        std::copy_n(A.data() + s * sa, sa, out.data() + s * (sa + sb));
        std::copy_n(B.data() + s * sb, sb, out.data() + s * (sa + sb) + sa);
    }
    return finish(
        *a.tape, std::move(out), {a.id, b.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            for (int s = 0; s < n; ++s) {
                const double* gs = g.data() + s * (sa + sb);
                if (t.requires_grad(a.id)) {
                    double* d = t.grad(a.id).data() + s * sa;
                    for (std::size_t i = 0; i < sa; ++i) d[i] += gs[i];
                }
                if (t.requires_grad(b.id)) {
                    double* d = t.grad(b.id).data() + s * sb;
                    for (std::size_t i = 0; i < sb; ++i) d[i] += gs[sa + i];
                }
            }
        },
        "concat");
}

Var reshape(Var x, std::vector<int> shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape->record(std::move(out), {x.id}, [=](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& dx = t.grad(x.id);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
    });
}

Var linear(Var x, Var w, Var b) {
    const Tensor& X = x.value();
    const Tensor& Wt = w.value();
    require_rank(X, 2, "linear input");
    require_rank(Wt, 2, "linear weight");
    const int n = X.dim(0), in = X.dim(1), o = Wt.dim(0);
    require(Wt.dim(1) == in, "linear: weight " + shape_string(Wt.shape()) + " incompatible with input " +
                                 shape_string(X.shape()));
    require(b.value().numel() == static_cast<std::size_t>(o), "linear: bias size mismatch");
    Tensor out({n, o});
    MapMat y(out.data(), n, o);
    y.noalias() = MapConstMat(X.data(), n, in) * MapConstMat(Wt.data(), o, in).transpose();
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), o);
    return finish(
        *x.tape, std::move(out), {x.id, w.id, b.id},
        [=](Tape& t, int self) {
            const MapConstMat g(t.grad(self).data(), n, o);
            if (t.requires_grad(x.id))
                MapMat(t.grad(x.id).data(), n, in).noalias() += g * MapConstMat(t.value(w.id).data(), o, in);
            if (t.requires_grad(w.id))
                MapMat(t.grad(w.id).data(), o, in).noalias() += g.transpose() * MapConstMat(t.value(x.id).data(), n, in);
            if (t.requires_grad(b.id))
                Eigen::Map<Eigen::RowVectorXd>(t.grad(b.id).data(), o) += g.colwise().sum();
        },
        "linear");
}

Var batchnorm2d(Var x, Var gamma, Var beta, BatchNormBuffers& buffers, bool train, double momentum, double eps) {
    const Tensor& X = x.value();
    require_rank(X, 4, "batchnorm2d");
    const int n = X.dim(0), c = X.dim(1);
    const std::size_t hw = static_cast<std::size_t>(X.dim(2)) * X.dim(3);
    const std::size_t m = hw * n;
    require(gamma.value().numel() == static_cast<std::size_t>(c) && beta.value().numel() == static_cast<std::size_t>(c),
            "batchnorm2d: affine size mismatch");
    require(buffers.running_mean.numel() == static_cast<std::size_t>(c) &&
                buffers.running_var.numel() == static_cast<std::size_t>(c),
            "batchnorm2d: running buffers not initialised");
    auto plane = [&](int s, int ch) { return static_cast<std::size_t>(s * c + ch) * hw; };

    std::vector<double> mean(c), inv_std(c);
    if (train) {
        for (int ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (int s = 0; s < n; ++s)
                for (std::size_t i = 0; i < hw; ++i) sum += X[plane(s, ch) + i];
            const double mu = sum / m;
            double sq = 0.0;
            for (int s = 0; s < n; ++s)
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = X[plane(s, ch) + i] - mu;
                    sq += d * d;
                }
            const double var = sq / m;
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + eps);
            const double unbiased = m > 1 ? sq / (m - 1) : var;
            buffers.running_mean[ch] = (1.0 - momentum) * buffers.running_mean[ch] + momentum * mu;
            buffers.running_var[ch] = (1.0 - momentum) * buffers.running_var[ch] + momentum * unbiased;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[ch] = buffers.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(buffers.running_var[ch] + eps);
        }
    }
    auto xhat = std::make_shared<Tensor>(X.shape());
    Tensor out(X.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t p = plane(s, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                const double h = (X[p + i] - mean[ch]) * inv_std[ch];
                (*xhat)[p + i] = h;
                out[p + i] = gv[ch] * h + bv[ch];
            }
        }
    }
    return finish(
        *x.tape, std::move(out), {x.id, gamma.id, beta.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const Tensor& gam = t.value(gamma.id);
            auto pl = [&](int s, int ch) { return static_cast<std::size_t>(s * c + ch) * hw; };
            for (int ch = 0; ch < c; ++ch) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (int s = 0; s < n; ++s)
                    for (std::size_t i = 0; i < hw; ++i) {
                        sum_g += g[pl(s, ch) + i];
                        sum_gh += g[pl(s, ch) + i] * (*xhat)[pl(s, ch) + i];
                    }
                if (t.requires_grad(gamma.id)) t.grad(gamma.id)[ch] += sum_gh;
                if (t.requires_grad(beta.id)) t.grad(beta.id)[ch] += sum_g;
                if (!t.requires_grad(x.id)) continue;
                Tensor& dx = t.grad(x.id);
                const double k = gam[ch] * inv_std[ch];
                for (int s = 0; s < n; ++s)
                    for (std::size_t i = 0; i < hw; ++i) {
                        const std::size_t j = pl(s, ch) + i;
                        if (train)
                            dx[j] += k * (g[j] - sum_g / m - (*xhat)[j] * sum_gh / m);
                        else
                            dx[j] += k * g[j];
                    }
            }
        },
        "batchnorm2d");
}

Var log_softmax(Var x) {
    const Tensor& X = x.value();
    require(X.rank() >= 2, "log_softmax: expected a batch dimension");
    const int n = X.dim(0);
    const std::size_t s = X.numel() / n;
    Tensor out(X.shape());
    for (int b = 0; b < n; ++b) {
        const double* row = X.data() + b * s;
        const double mx = *std::max_element(row, row + s);
        double sum = 0.0;
        for (std::size_t i = 0; i < s; ++i) sum += std::exp(row[i] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t i = 0; i < s; ++i) out[b * s + i] = row[i] - lse;
    }
    return finish(
        *x.tape, std::move(out), {x.id},
        [=](Tape& t, int self) {
            const Tensor& g = t.grad(self);
            const Tensor& y = t.value(self);
            Tensor& dx = t.grad(x.id);
            for (int b = 0; b < n; ++b) {
                double gs = 0.0;
                for (std::size_t i = 0; i < s; ++i) gs += g[b * s + i];
                for (std::size_t i = 0; i < s; ++i) dx[b * s + i] += g[b * s + i] - std::exp(y[b * s + i]) * gs;
            }
        },
        "log_softmax");
}

Var soft_cross_entropy(Var logp, const Tensor& target) {
    const Tensor& L = logp.value();
    require(L.shape() == target.shape(), "soft_cross_entropy: target shape " + shape_string(target.shape()) +
                                             " does not match " + shape_string(L.shape()));
    const int n = L.dim(0);
    double loss = 0.0;
    for (std::size_t i = 0; i < L.numel(); ++i)
        if (target[i] != 0.0) loss -= target[i] * L[i];
    loss /= n;
    return finish(
        *logp.tape, Tensor({1}, std::vector<double>{loss}), {logp.id},
        [=](Tape& t, int self) {
            const double g = t.grad(self)[0];
            Tensor& d = t.grad(logp.id);
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] -= g * target[i] / n;
        },
        "soft_cross_entropy");
}

Var dot(Var x, const Tensor& r) {
    const Tensor& X = x.value();
    require(X.numel() == r.numel(), "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < X.numel(); ++i) s += X[i] * r[i];
    return finish(
        *x.tape, Tensor({1}, std::vector<double>{s}), {x.id},
        [=](Tape& t, int self) {
            const double g = t.grad(self)[0];
            Tensor& d = t.grad(x.id);
            for (std::size_t i = 0; i < d.numel(); ++i) d[i] += g * r[i];
        },
        "dot");
}

Var mean(Var x) {
    const Tensor& X = x.value();
    double s = 0.0;
    for (double v : X.values()) s += v;
    const double inv = 1.0 / static_cast<double>(X.numel());
    return finish(
        *x.tape, Tensor({1}, std::vector<double>{s * inv}), {x.id},
        [=](Tape& t, int self) {
            const double g = t.grad(self)[0];
            for (double& d : t.grad(x.id).values()) d += g * inv;
        },
        "mean");
}

}  // namespace tom::nn
