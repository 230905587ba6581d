#pragma once

#include <vector>

#include <Eigen/Core>

#include "tom/nn/layers.hpp"

namespace tom {

inline constexpr double kDefaultEigClamp = 1e-5;

// ZCA whitening of a batch of row vectors: mean and W = V diag(max(l, eps)^-1/2) V^T from the
// biased batch covariance. Eigenvalues are clamped from below rather than shifted, so
// well-conditioned directions come out with unit variance exactly.
struct WhiteningFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd W;
    Eigen::VectorXd eigenvalues;  // ascending, before clamping
};

WhiteningFit fit_whitening(const Eigen::MatrixXd& batch, double eps_eig = kDefaultEigClamp);

// Rows (z - mean)^T W.
Eigen::MatrixXd apply_whitening(const WhiteningFit& fit, const Eigen::MatrixXd& batch);

// Biased covariance of row vectors.
Eigen::MatrixXd batch_covariance(const Eigen::MatrixXd& batch);

// sum_j q_j^T m_j over the supplied concept means (column j of Q pairs with means[j]).
double alignment_objective(const Eigen::MatrixXd& Q, const std::vector<Eigen::VectorXd>& means);

struct AlignmentReport {
    std::vector<double> objective;  // initial value, then after every accepted step
    int accepted = 0;
    int rejected = 0;                // line searches that found no acceptable step
    double max_orthogonality_error = 0.0;
};

// Concept-whitening layer state: whitening statistics plus the orthogonal rotation Q.
// The layer maps spatial latents z [N, d, H, W] to gamma * (Q^T W (z - mu)) + beta per
// location; mu and W treat every (sample, location) pair as one observation in training and
// come from running averages at inference. Activations are read off spatially pooled latents.
class ConceptWhitening {
  public:
    ConceptWhitening() = default;
    explicit ConceptWhitening(int dim, double eps_eig = kDefaultEigClamp, double momentum = 0.9);

    int dim() const { return dim_; }
    bool fitted() const { return fitted_; }

    // Differentiable forward. Q is held fixed (it is optimized by align()); gradients flow to
    // z through the batch statistics in training mode.
    nn::Var forward(nn::Tape& tape, nn::Var z, nn::Var gamma, nn::Var beta, bool train);

    // Sets the running statistics from latent samples (rows); leaves Q alone.
    void fit(const Eigen::MatrixXd& samples);

    // psi(p) = W (p - mu) with running statistics.
    Eigen::VectorXd whiten(const Eigen::VectorXd& pooled) const;
    // Q^T psi(p).
    Eigen::VectorXd rotate(const Eigen::VectorXd& pooled) const;
    // a_j = q_j^T psi(p) for the first k axes.
    Eigen::VectorXd activations(const Eigen::VectorXd& pooled, int k) const;

    // Curvilinear search on the Stiefel manifold (Cayley transform, Armijo backtracking,
    // Barzilai-Borwein step sizes) maximizing alignment_objective(Q, means).
    AlignmentReport align(const std::vector<Eigen::VectorXd>& means, int iterations);

    double orthogonality_error() const;

    void collect(nn::StateRefs& refs);
    // Copies the tensor buffers registered by collect() back into the Eigen state.
    void sync_from_buffers();

    Eigen::VectorXd running_mean;
    Eigen::MatrixXd running_W;
    Eigen::MatrixXd Q;

  private:
    void sync_to_buffers();

    int dim_ = 0;
    double eps_eig_ = kDefaultEigClamp;
    double momentum_ = 0.9;
    bool fitted_ = false;
    nn::Tensor mean_buf_, w_buf_, q_buf_, fitted_buf_;
};

}  // namespace tom
