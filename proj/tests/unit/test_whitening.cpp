#include <doctest.h>

#include <random>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "tom/nn/grad_check.hpp"
#include "tom/whitening.hpp"

using namespace tom;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
}

Eigen::MatrixXd random_orthogonal(int d, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(d, d, rng));
    return qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
}

// Correlated batch: standard normals mixed by a random matrix, shifted.
Eigen::MatrixXd correlated_batch(int n, int d, std::mt19937_64& rng) {
    const Eigen::MatrixXd mix = random_matrix(d, d, rng) + 2.0 * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd b = random_matrix(n, d, rng) * mix;
    b.rowwise() += random_matrix(1, d, rng, 3.0).row(0);
    return b;
}

nn::Tensor to_latent(const Eigen::MatrixXd& rows, int h, int w, std::mt19937_64& rng) {
    // Each sample's vector spread over h*w locations with zero-mean spatial jitter.
    const int n = static_cast<int>(rows.rows()), d = static_cast<int>(rows.cols());
    nn::Tensor t({n, d, h, w});
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
            for (int k = 0; k < h * w; ++k) t[(static_cast<std::size_t>(i) * d + c) * h * w + k] = rows(i, c) + jitter(rng);
    return t;
}

Eigen::MatrixXd pooled_rows(const nn::Tensor& t) {
    const int n = t.dim(0), d = t.dim(1), s = t.dim(2) * t.dim(3);
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
            for (int k = 0; k < s; ++k) p(i, c) += t[(static_cast<std::size_t>(i) * d + c) * s + k] / s;
    return p;
}

Eigen::MatrixXd position_rows(const nn::Tensor& t) {
    const int n = t.dim(0), d = t.dim(1), s = t.dim(2) * t.dim(3);
    Eigen::MatrixXd p(n * s, d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
            for (int k = 0; k < s; ++k) p(i * s + k, c) = t[(static_cast<std::size_t>(i) * d + c) * s + k];
    return p;
}

}  // namespace

TEST_CASE("whitening already-white data gives the identity") {
    std::mt19937_64 rng(1);
    Eigen::MatrixXd b = random_matrix(200, 5, rng);
    b.rowwise() -= b.colwise().mean();
    // Independent whitening via Cholesky makes the batch exactly white.
    const Eigen::MatrixXd cov = batch_covariance(b);
    const Eigen::MatrixXd L = cov.llt().matrixL();
    b = b * L.transpose().inverse();
    const WhiteningFit f = fit_whitening(b);
    CHECK((f.W - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("rank-deficient batch stays finite through the clamp") {
    Eigen::MatrixXd b(2, 2);
    b << 1, 0, -1, 0;
    const WhiteningFit f = fit_whitening(b, 1e-5);
    CHECK(f.W.allFinite());
    // Covariance diag(1, 0): W = diag(1, eps^-1/2).
    CHECK(f.W(0, 0) == doctest::Approx(1.0));
    CHECK(f.W(1, 1) == doctest::Approx(1.0 / std::sqrt(1e-5)));
    const Eigen::MatrixXd c = batch_covariance(apply_whitening(f, b));
    CHECK(c(0, 0) == doctest::Approx(1.0));
    CHECK(std::abs(c(1, 1)) < 1e-12);

    Eigen::MatrixXd same(3, 2);
    same << 2, 2, 2, 2, 2, 2;
    CHECK(fit_whitening(same).W.allFinite());
    CHECK_THROWS(fit_whitening(Eigen::MatrixXd::Ones(1, 3)));
}

TEST_CASE("ZCA oracle: W symmetric positive definite with W Sigma W = I") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd b = correlated_batch(256, 8, rng);
        const WhiteningFit f = fit_whitening(b);
        const Eigen::MatrixXd cov = batch_covariance(b);
        CHECK((f.W - f.W.transpose()).norm() < 1e-10);
        CHECK(f.W.llt().info() == Eigen::Success);
        CHECK((f.W * cov * f.W - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-9);
        const Eigen::MatrixXd z = apply_whitening(f, b);
        CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 1e-9);
        CHECK((batch_covariance(z) - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("layer forward: identity rotation, orthogonal invariance, norm preservation") {
    std::mt19937_64 rng(3);
    const int d = 6;
    const nn::Tensor z = to_latent(correlated_batch(40, d, rng), 2, 2, rng);
    nn::Parameter gamma("gamma", nn::Tensor({d}, 1.0));
    nn::Parameter beta("beta", nn::Tensor({d}));

    ConceptWhitening cw(d);
    nn::Tape t1;
    const nn::Tensor out_identity = cw.forward(t1, t1.constant(z), t1.param(gamma), t1.param(beta), true).value();

    // Q = I: output is psi(z) per location.
    const WhiteningFit fit = fit_whitening(position_rows(z));
    for (int i = 0; i < 40; i += 7) {
        for (int k = 0; k < 4; ++k) {
            Eigen::VectorXd v(d);
            for (int c = 0; c < d; ++c) v(c) = z[(static_cast<std::size_t>(i) * d + c) * 4 + k];
            const Eigen::VectorXd psi = fit.W * (v - fit.mean);
            for (int c = 0; c < d; ++c)
                CHECK(out_identity[(static_cast<std::size_t>(i) * d + c) * 4 + k] == doctest::Approx(psi(c)).epsilon(1e-10));
        }
    }

    ConceptWhitening rotated(d);
    rotated.Q = random_orthogonal(d, rng);
    nn::Tape t2;
    const nn::Tensor out_rot = rotated.forward(t2, t2.constant(z), t2.param(gamma), t2.param(beta), true).value();
    CHECK((batch_covariance(position_rows(out_rot)) - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-9);
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < out_rot.numel(); ++i) {
        n1 += out_identity[i] * out_identity[i];
        n2 += out_rot[i] * out_rot[i];
    }
    CHECK(std::sqrt(n1) == doctest::Approx(std::sqrt(n2)).epsilon(1e-12));
}

TEST_CASE("inference mode uses running statistics") {
    std::mt19937_64 rng(4);
    ConceptWhitening cw(3);
    nn::Parameter gamma("gamma", nn::Tensor({3}, 1.0));
    nn::Parameter beta("beta", nn::Tensor({3}));
    nn::Tape t0;
    CHECK_THROWS(cw.forward(t0, t0.constant(nn::Tensor({2, 3, 1, 1})), t0.param(gamma), t0.param(beta), false));

    const Eigen::MatrixXd b = correlated_batch(50, 3, rng);
    cw.fit(b);
    const nn::Tensor z = to_latent(b.topRows(5), 1, 1, rng);
    nn::Tape t;
    const nn::Tensor out = cw.forward(t, t.constant(z), t.param(gamma), t.param(beta), false).value();
    const Eigen::MatrixXd p = pooled_rows(z);
    for (int i = 0; i < 5; ++i) {
        const Eigen::VectorXd expect = cw.whiten(p.row(i).transpose());
        for (int c = 0; c < 3; ++c) CHECK(out[static_cast<std::size_t>(i) * 3 + c] == doctest::Approx(expect(c)));
    }
    // Running averages move toward new batches with momentum 0.9.
    const Eigen::VectorXd before = cw.running_mean;
    const nn::Tensor shifted = to_latent(correlated_batch(30, 3, rng), 1, 1, rng);
    nn::Tape t2;
    cw.forward(t2, t2.constant(shifted), t2.param(gamma), t2.param(beta), true);
    const Eigen::VectorXd expect = 0.9 * before + 0.1 * pooled_rows(shifted).colwise().mean().transpose();
    CHECK((cw.running_mean - expect).norm() < 1e-12);
}

TEST_CASE("concept whitening gradients match central differences") {
    std::mt19937_64 rng(5);
    const int d = 4;
    for (bool train : {true, false}) {
        ConceptWhitening cw(d);
        cw.Q = random_orthogonal(d, rng);
        cw.fit(correlated_batch(20, d, rng));
        nn::Parameter z("z", to_latent(correlated_batch(8, d, rng), 2, 2, rng));
        nn::Parameter gamma("gamma", nn::randn({d}, 1.0, rng));
        nn::Parameter beta("beta", nn::randn({d}, 1.0, rng));
        const nn::Tensor r = nn::randn(z.value.shape(), 1.0, rng);
        const auto rep = nn::grad_check(
            [&](nn::Tape& t) { return nn::dot(cw.forward(t, t.param(z), t.param(gamma), t.param(beta), train), r); },
            {&z, &gamma, &beta}, 1e-6);
        INFO("train=" << train << " worst " << rep.worst << " err " << rep.max_rel_error);
        CHECK(rep.max_rel_error < 1e-6);
    }
}

TEST_CASE("alignment fixed point and 2-D rotation") {
    ConceptWhitening cw(2);
    cw.fit((Eigen::MatrixXd(4, 2) << 1, 0, -1, 0, 0, 1, 0, -1).finished());
    {
        const AlignmentReport r = cw.align({Eigen::Vector2d(1.0, 0.0)}, 20);
        CHECK((cw.Q - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-8);
        CHECK(r.accepted == 0);
    }
    {
        const AlignmentReport r = cw.align({Eigen::Vector2d(0.0, 1.0)}, 20);
        CHECK(r.accepted > 0);
        const Eigen::VectorXd a = cw.activations(cw.running_mean + cw.running_W.inverse() * Eigen::Vector2d(0.0, 1.0), 2);
        CHECK(a(0) > a(1));
        CHECK(a(0) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("alignment keeps Q orthogonal and the objective non-decreasing") {
    std::mt19937_64 rng(6);
    const int d = 12, k = 10;
    ConceptWhitening cw(d);
    cw.fit(correlated_batch(100, d, rng));
    cw.Q = random_orthogonal(d, rng);
    std::vector<Eigen::VectorXd> means;
    for (int j = 0; j < k; ++j) means.push_back(random_matrix(d, 1, rng).col(0));
    const AlignmentReport r = cw.align(means, 100);
    CHECK(cw.orthogonality_error() < 1e-8);
    CHECK(r.max_orthogonality_error < 1e-8);
    for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] >= r.objective[i - 1]);
    CHECK(r.objective.back() > r.objective.front());
}

TEST_CASE("concept activations") {
    std::mt19937_64 rng(7);
    const int d = 5;
    ConceptWhitening cw(d);
    cw.fit(correlated_batch(60, d, rng));
    cw.Q = random_orthogonal(d, rng);
    // Choose the pooled latent whose rotated representation is q_1 direction: Q^T psi = e_1.
    const Eigen::VectorXd psi = cw.Q.col(0);
    const Eigen::VectorXd p = cw.running_mean + cw.running_W.inverse() * psi;
    const Eigen::VectorXd a = cw.activations(p, 3);
    CHECK(a(0) == doctest::Approx(1.0));
    CHECK(std::abs(a(1)) < 1e-9);
    CHECK(std::abs(a(2)) < 1e-9);
    CHECK(cw.activations(cw.running_mean, 3).norm() < 1e-12);

    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd q = random_matrix(d, 1, rng).col(0);
        const double full = cw.whiten(q).squaredNorm();
        CHECK(cw.activations(q, 3).squaredNorm() <= full + 1e-12);
        CHECK(cw.activations(q, d).squaredNorm() == doctest::Approx(full));
    }
}

TEST_CASE("alignment separates synthetic concepts along known directions") {
    std::mt19937_64 rng(8);
    const int d = 8, k = 4, per = 50;
    const Eigen::MatrixXd R = random_orthogonal(d, rng);
    Eigen::MatrixXd all(k * per, d);
    std::vector<Eigen::MatrixXd> groups;
    for (int j = 0; j < k; ++j) {
        Eigen::MatrixXd g = random_matrix(per, d, rng, 0.5);
        g.rowwise() += 3.0 * R.col(j).transpose();
        all.middleRows(j * per, per) = g;
        groups.push_back(g);
    }
    ConceptWhitening cw(d);
    cw.fit(all);
    std::vector<Eigen::VectorXd> means;
    for (const auto& g : groups) {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
        for (int i = 0; i < per; ++i) m += cw.whiten(g.row(i).transpose()) / per;
        means.push_back(m);
    }
    cw.align(means, 200);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd mean_act = Eigen::VectorXd::Zero(k);
        for (int i = 0; i < per; ++i) mean_act += cw.activations(groups[j].row(i).transpose(), k) / per;
        for (int o = 0; o < k; ++o)
            if (o != j) CHECK(mean_act(j) > mean_act(o));
    }
}
