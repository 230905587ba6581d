#include "tom/whitening.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "tom/common.hpp"

namespace tom {

namespace {

using nn::Tape;
using nn::Tensor;
using nn::Var;

struct EigenWhitening {
    Eigen::VectorXd lambda;  // ascending
    Eigen::MatrixXd V;
    Eigen::VectorXd f;  // max(lambda, eps)^-1/2
    Eigen::MatrixXd W;
};

EigenWhitening whiten_covariance(const Eigen::MatrixXd& cov, double eps) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition of latent covariance failed");
    EigenWhitening e;
    e.lambda = solver.eigenvalues();
    e.V = solver.eigenvectors();
    e.f = e.lambda.unaryExpr([eps](double l) { return 1.0 / std::sqrt(std::max(l, eps)); });
    e.W = e.V * e.f.asDiagonal() * e.V.transpose();
    return e;
}

// Divided differences of f(l) = max(l, eps)^-1/2 for the eigenvalue derivative.
Eigen::MatrixXd divided_differences(const EigenWhitening& e, double eps) {
    const Eigen::Index d = e.lambda.size();
    auto fprime = [eps](double l) { return l > eps ? -0.5 * std::pow(l, -1.5) : 0.0; };
    Eigen::MatrixXd K(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const double li = e.lambda(i), lj = e.lambda(j);
            const double gap = std::abs(li - lj);
            if (gap <= 1e-10 * std::max({1.0, std::abs(li), std::abs(lj)}))
                K(i, j) = 0.5 * (fprime(li) + fprime(lj));
            else
                K(i, j) = (e.f(i) - e.f(j)) / (li - lj);
        }
    }
    return K;
}

Eigen::MatrixXd to_matrix(const Tensor& t, int rows, int cols) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data(), rows, cols);
}

}  // namespace

Eigen::MatrixXd batch_covariance(const Eigen::MatrixXd& batch) {
    const Eigen::RowVectorXd mu = batch.colwise().mean();
    const Eigen::MatrixXd c = batch.rowwise() - mu;
    return (c.transpose() * c) / static_cast<double>(batch.rows());
}

WhiteningFit fit_whitening(const Eigen::MatrixXd& batch, double eps_eig) {
    if (batch.rows() < 2 || batch.cols() < 1) throw std::invalid_argument("whitening needs >= 2 samples of dimension >= 1");
    if (!(eps_eig > 0.0)) throw std::invalid_argument("eigenvalue clamp must be positive");
    const EigenWhitening e = whiten_covariance(batch_covariance(batch), eps_eig);
    return {batch.colwise().mean().transpose(), e.W, e.lambda};
}

Eigen::MatrixXd apply_whitening(const WhiteningFit& fit, const Eigen::MatrixXd& batch) {
    return (batch.rowwise() - fit.mean.transpose()) * fit.W;  // W is symmetric
}

double alignment_objective(const Eigen::MatrixXd& Q, const std::vector<Eigen::VectorXd>& means) {
    double s = 0.0;
    for (std::size_t j = 0; j < means.size(); ++j) s += Q.col(static_cast<Eigen::Index>(j)).dot(means[j]);
    return s;
}

ConceptWhitening::ConceptWhitening(int dim, double eps_eig, double momentum)
    : running_mean(Eigen::VectorXd::Zero(dim)),
      running_W(Eigen::MatrixXd::Identity(dim, dim)),
      Q(Eigen::MatrixXd::Identity(dim, dim)),
      dim_(dim),
      eps_eig_(eps_eig),
      momentum_(momentum) {
    if (dim < 1) throw std::invalid_argument("concept whitening dimension must be positive");
    sync_to_buffers();
}

void ConceptWhitening::fit(const Eigen::MatrixXd& samples) {
    if (samples.cols() != dim_) throw std::invalid_argument("latent dimension mismatch in whitening fit");
    const WhiteningFit f = fit_whitening(samples, eps_eig_);
    running_mean = f.mean;
    running_W = f.W;
    fitted_ = true;
}

Var ConceptWhitening::forward(Tape& tape, Var z, Var gamma, Var beta, bool train) {
    const Tensor& Z = z.value();
    if (Z.rank() != 4 || Z.dim(1) != dim_)
        throw std::invalid_argument("concept whitening expects [N, " + std::to_string(dim_) + ", H, W], got " +
                                    nn::shape_string(Z.shape()));
    const int n = Z.dim(0), d = dim_;
    const int s = Z.dim(2) * Z.dim(3);
    if (!train && !fitted_) throw std::logic_error("concept whitening used for inference before being fitted");
    if (train && n < 2) throw std::invalid_argument("concept whitening needs a batch of at least 2 in training");

    // Every spatial position is a sample, as in batch norm; rows = (sample, position).
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(n) * s, d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) {
            const double* p = Z.data() + (static_cast<std::size_t>(i) * d + c) * s;
            for (int k = 0; k < s; ++k) samples(static_cast<Eigen::Index>(i) * s + k, c) = p[k];
        }

    auto eig = std::make_shared<EigenWhitening>();
    Eigen::VectorXd mu;
    Eigen::MatrixXd W;
    if (train) {
        mu = samples.colwise().mean().transpose();
        *eig = whiten_covariance(batch_covariance(samples), eps_eig_);
        W = eig->W;
        if (fitted_) {
            running_mean = momentum_ * running_mean + (1.0 - momentum_) * mu;
            running_W = momentum_ * running_W + (1.0 - momentum_) * W;
        } else {
            running_mean = mu;
            running_W = W;
            fitted_ = true;
        }
    } else {
        mu = running_mean;
        W = running_W;
    }
    const Eigen::MatrixXd M = Q.transpose() * W;

    // centered[n] is d x s, u[n] = M centered[n].
    auto centered = std::make_shared<std::vector<Eigen::MatrixXd>>(n);
    auto u = std::make_shared<std::vector<Eigen::MatrixXd>>(n);
    Tensor out(Z.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd c = to_matrix(Z, n * d, s).middleRows(static_cast<Eigen::Index>(i) * d, d);
        c.colwise() -= mu;
        (*u)[i] = M * c;
        (*centered)[i] = std::move(c);
        for (int ch = 0; ch < d; ++ch)
            for (int k = 0; k < s; ++k)
                out[(static_cast<std::size_t>(i) * d + ch) * s + k] = gv[ch] * (*u)[i](ch, k) + bv[ch];
    }
    nn::check_finite(out, "concept_whitening");

    const Eigen::MatrixXd Qc = Q;
    const double eps = eps_eig_;
    return tape.record(std::move(out), {z.id, gamma.id, beta.id}, [=](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& gam = t.value(gamma.id);
        Eigen::MatrixXd dM = Eigen::MatrixXd::Zero(d, d);
        Eigen::VectorXd dmu = Eigen::VectorXd::Zero(d);
        const bool need_z = t.requires_grad(z.id);
        for (int i = 0; i < n; ++i) {
            Eigen::MatrixXd gu = to_matrix(g, n * d, s).middleRows(static_cast<Eigen::Index>(i) * d, d);
            if (t.requires_grad(gamma.id) || t.requires_grad(beta.id)) {
                for (int ch = 0; ch < d; ++ch) {
                    if (t.requires_grad(gamma.id)) t.grad(gamma.id)[ch] += gu.row(ch).dot((*u)[i].row(ch));
                    if (t.requires_grad(beta.id)) t.grad(beta.id)[ch] += gu.row(ch).sum();
                }
            }
            if (!need_z) continue;
            for (int ch = 0; ch < d; ++ch) gu.row(ch) *= gam[ch];
            const Eigen::MatrixXd dc = M.transpose() * gu;
            double* dz = t.grad(z.id).data() + static_cast<std::size_t>(i) * d * s;
            for (int ch = 0; ch < d; ++ch)
                for (int k = 0; k < s; ++k) dz[ch * s + k] += dc(ch, k);
            if (train) {
                dM.noalias() += gu * (*centered)[i].transpose();
                dmu -= dc.rowwise().sum();
            }
        }
        if (!need_z || !train) return;
        // Through W = F(Sigma): Daleckii-Krein with divided differences of f.
        Eigen::MatrixXd dW = Qc * dM;
        dW = 0.5 * (dW + dW.transpose()).eval();
        const Eigen::MatrixXd K = divided_differences(*eig, eps);
        const Eigen::MatrixXd dSigma = eig->V * K.cwiseProduct(eig->V.transpose() * dW * eig->V) * eig->V.transpose();
        const double m = static_cast<double>(n) * s;
        for (int i = 0; i < n; ++i) {
            const Eigen::MatrixXd dp = ((2.0 / m) * dSigma * (*centered)[i]).colwise() + dmu / m;
            double* dz = t.grad(z.id).data() + static_cast<std::size_t>(i) * d * s;
            for (int ch = 0; ch < d; ++ch)
                for (int k = 0; k < s; ++k) dz[ch * s + k] += dp(ch, k);
        }
    });
}

Eigen::VectorXd ConceptWhitening::whiten(const Eigen::VectorXd& pooled) const {
    if (!fitted_) throw std::logic_error("concept whitening queried before being fitted");
    return running_W * (pooled - running_mean);
}

Eigen::VectorXd ConceptWhitening::rotate(const Eigen::VectorXd& pooled) const { return Q.transpose() * whiten(pooled); }

Eigen::VectorXd ConceptWhitening::activations(const Eigen::VectorXd& pooled, int k) const {
    if (k < 0 || k > dim_) throw std::invalid_argument("concept count exceeds latent dimension");
    return rotate(pooled).head(k);
}

AlignmentReport ConceptWhitening::align(const std::vector<Eigen::VectorXd>& means, int iterations) {
    if (static_cast<int>(means.size()) > dim_) throw std::invalid_argument("more concepts than latent dimensions");
    for (const auto& m : means)
        if (m.size() != dim_) throw std::invalid_argument("concept mean has the wrong dimension");

    // Minimize F(Q) = -objective. Euclidean gradient G = -[m_1 .. m_k 0 ..] is constant.
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(dim_, dim_);
    for (std::size_t j = 0; j < means.size(); ++j) G.col(static_cast<Eigen::Index>(j)) = -means[j];
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(dim_, dim_);

    AlignmentReport report;
    double f = -alignment_objective(Q, means);
    report.objective.push_back(-f);
    report.max_orthogonality_error = orthogonality_error();
    double tau = 1.0;
    Eigen::MatrixXd prev_Q, prev_grad;
    constexpr double kArmijo = 1e-4;
    for (int it = 0; it < iterations; ++it) {
        const Eigen::MatrixXd A = G * Q.transpose() - Q * G.transpose();
        const double a2 = A.squaredNorm();
        if (std::sqrt(a2) < 1e-12) break;
        const Eigen::MatrixXd riem = A * Q;
        if (it > 0) {
            // Barzilai-Borwein step from the last accepted move.
            const Eigen::MatrixXd S = Q - prev_Q;
            const Eigen::MatrixXd Yg = riem - prev_grad;
            const double sy = std::abs((S.transpose() * Yg).trace());
            if (sy > 0.0) tau = std::clamp(S.squaredNorm() / sy, 1e-10, 1e10);
        }
        const double slope = -0.5 * a2;  // dF/dtau at tau = 0
        bool accepted = false;
        for (int back = 0; back < 60; ++back) {
            const Eigen::MatrixXd Y = (I + 0.5 * tau * A).partialPivLu().solve((I - 0.5 * tau * A) * Q);
            const double fy = -alignment_objective(Y, means);
            if (fy <= f + kArmijo * tau * slope) {
                prev_Q = Q;
                prev_grad = riem;
                Q = Y;
                f = fy;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if (!accepted) {
            ++report.rejected;
            break;
        }
        ++report.accepted;
        report.objective.push_back(-f);
        report.max_orthogonality_error = std::max(report.max_orthogonality_error, orthogonality_error());
    }
    sync_to_buffers();
    return report;
}

double ConceptWhitening::orthogonality_error() const {
    return (Q.transpose() * Q - Eigen::MatrixXd::Identity(dim_, dim_)).norm();
}

void ConceptWhitening::sync_to_buffers() {
    mean_buf_ = Tensor({dim_}, std::vector<double>(running_mean.data(), running_mean.data() + dim_));
    w_buf_ = Tensor({dim_, dim_});
    q_buf_ = Tensor({dim_, dim_});
    for (int r = 0; r < dim_; ++r)
        for (int c = 0; c < dim_; ++c) {
            w_buf_[static_cast<std::size_t>(r) * dim_ + c] = running_W(r, c);
            q_buf_[static_cast<std::size_t>(r) * dim_ + c] = Q(r, c);
        }
    fitted_buf_ = Tensor({1}, fitted_ ? 1.0 : 0.0);
}

void ConceptWhitening::sync_from_buffers() {
    for (int r = 0; r < dim_; ++r) {
        running_mean(r) = mean_buf_[static_cast<std::size_t>(r)];
        for (int c = 0; c < dim_; ++c) {
            running_W(r, c) = w_buf_[static_cast<std::size_t>(r) * dim_ + c];
            Q(r, c) = q_buf_[static_cast<std::size_t>(r) * dim_ + c];
        }
    }
    fitted_ = fitted_buf_[0] != 0.0;
}

void ConceptWhitening::collect(nn::StateRefs& refs) {
    sync_to_buffers();
    refs.buffers.emplace_back("cw.running_mean", &mean_buf_);
    refs.buffers.emplace_back("cw.running_W", &w_buf_);
    refs.buffers.emplace_back("cw.Q", &q_buf_);
    refs.buffers.emplace_back("cw.fitted", &fitted_buf_);
}

}  // namespace tom
