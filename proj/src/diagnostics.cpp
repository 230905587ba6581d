#include "tom/diagnostics.hpp"

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/QR>

#include "tom/models.hpp"
#include "tom/nn/layers.hpp"
#include "tom/nn/ops.hpp"
#include "tom/whitening.hpp"

namespace tom {

using nn::Parameter;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

nn::GradCheckReport check_unary(Parameter& input, std::vector<Parameter*> params, std::mt19937_64& rng,
                                const std::function<Var(Tape&, Var)>& op) {
    Tape probe;
    const Tensor r = nn::randn(op(probe, probe.constant(input.value)).shape(), 1.0, rng);
    params.push_back(&input);
    return nn::grad_check([&](Tape& t) { return nn::dot(op(t, t.param(input)), r); }, params, kLayerGradTolerance);
}

// Keeps ReLU inputs clear of the kink at zero.
Tensor away_from_zero(std::vector<int> shape, std::mt19937_64& rng) {
    Tensor t = nn::randn(std::move(shape), 1.0, rng);
    for (double& v : t.values()) v = v >= 0 ? v + 0.05 : v - 0.05;
    return t;
}

Eigen::MatrixXd correlated(int n, int d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd mix(d, d), b(n, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) mix(i, j) = g(rng) + (i == j ? 2.0 : 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) b(i, j) = g(rng);
    return b * mix;
}

}  // namespace

std::vector<NamedGradCheck> layer_gradient_checks(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<NamedGradCheck> out;
    auto add = [&](std::string name, nn::GradCheckReport rep) {
        out.push_back({std::move(name), kLayerGradTolerance, std::move(rep)});
    };
    {
        nn::Conv2d conv("conv", 3, 4, 3, rng);
        Parameter x("x", nn::randn({2, 3, 5, 4}, 1.0, rng));
        add("conv3x3", check_unary(x, {&conv.weight, &conv.bias}, rng, [&](Tape& t, Var v) { return conv(t, v); }));
    }
    {
        nn::Conv2d conv("head", 3, 1, 1, rng);
        Parameter x("x", nn::randn({2, 3, 4, 4}, 1.0, rng));
        add("conv1x1", check_unary(x, {&conv.weight, &conv.bias}, rng, [&](Tape& t, Var v) { return conv(t, v); }));
    }
    {
        Parameter x("x", nn::randn({2, 2, 4, 6}, 1.0, rng));
        add("maxpool2x2", check_unary(x, {}, rng, [](Tape&, Var v) { return nn::maxpool2x2(v); }));
    }
    {
        nn::Conv2d conv("up", 2, 3, 3, rng);
        Parameter x("x", nn::randn({2, 2, 3, 3}, 1.0, rng));
        add("upconv", check_unary(x, {&conv.weight, &conv.bias}, rng,
                                  [&](Tape& t, Var v) { return conv(t, nn::upsample2x(v)); }));
    }
    for (bool train : {true, false}) {
        nn::BatchNorm2d bn("bn", 3);
        for (double& g : bn.gamma.value.values()) g = 0.5 + std::abs(g);
        bn.beta.value = nn::randn({3}, 1.0, rng);
        bn.buffers.running_mean = nn::randn({3}, 1.0, rng);
        bn.buffers.running_var = Tensor({3}, {0.5, 2.0, 1.5});
        Parameter x("x", nn::randn({4, 3, 2, 2}, 2.0, rng));
        add(train ? "batchnorm_train" : "batchnorm_eval",
            check_unary(x, {&bn.gamma, &bn.beta}, rng, [&](Tape& t, Var v) { return bn(t, v, train); }));
    }
    {
        Parameter x("x", away_from_zero({3, 7}, rng));
        add("relu", check_unary(x, {}, rng, [](Tape&, Var v) { return nn::relu(v); }));
    }
    {
        nn::Linear lin("lin", 5, 4, rng);
        lin.bias.value = nn::randn({4}, 1.0, rng);
        Parameter x("x", nn::randn({3, 5}, 1.0, rng));
        add("linear", check_unary(x, {&lin.weight, &lin.bias}, rng, [&](Tape& t, Var v) { return lin(t, v); }));
    }
    {
        Parameter a("a", nn::randn({2, 3}, 1.0, rng)), b("b", nn::randn({2, 4}, 1.0, rng));
        const Tensor r = nn::randn({2, 7}, 1.0, rng);
        add("concat", nn::grad_check([&](Tape& t) { return nn::dot(nn::concat(t.param(a), t.param(b)), r); },
                                     {&a, &b}, kLayerGradTolerance));
    }
    {
        Parameter a("a", nn::randn({2, 2, 3, 3}, 1.0, rng)), b("b", nn::randn({2, 2, 3, 3}, 1.0, rng));
        const Tensor r = nn::randn({2, 2, 3, 3}, 1.0, rng);
        add("skip_add", nn::grad_check([&](Tape& t) { return nn::dot(nn::add(t.param(a), t.param(b)), r); },
                                       {&a, &b}, kLayerGradTolerance));
    }
    {
        Parameter x("x", nn::randn({3, 1, 4, 4}, 1.0, rng));
        Tensor target({3, 1, 4, 4});
        for (int n = 0; n < 3; ++n) {
            target[static_cast<std::size_t>(n * 16 + n)] = 0.7;
            target[static_cast<std::size_t>(n * 16 + 9)] = 0.3;
        }
        add("log_softmax_nll",
            nn::grad_check([&](Tape& t) { return nn::soft_cross_entropy(nn::log_softmax(t.param(x)), target); }, {&x},
                           kLayerGradTolerance));
    }
    for (bool train : {true, false}) {
        const int d = 4;
        ConceptWhitening cw(d);
        const Eigen::MatrixXd A = correlated(d, d, rng);
        cw.Q = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
        cw.fit(correlated(20, d, rng));
        Parameter z("z", nn::randn({8, d, 2, 2}, 1.0, rng));
        Parameter gamma("gamma", nn::randn({d}, 1.0, rng)), beta("beta", nn::randn({d}, 1.0, rng));
        const Tensor r = nn::randn(z.value.shape(), 1.0, rng);
        add(train ? "concept_whitening_train" : "concept_whitening_eval",
            nn::grad_check(
                [&](Tape& t) { return nn::dot(cw.forward(t, t.param(z), t.param(gamma), t.param(beta), train), r); },
                {&z, &gamma, &beta}, kLayerGradTolerance));
    }
    return out;
}

std::vector<NamedGradCheck> model_gradient_checks(std::uint64_t seed) {
    const int n = 12;
    std::vector<NamedGradCheck> out;
    for (int variant = 0; variant < 3; ++variant) {
        ModelConfig c;
        c.kind = variant == 0 ? ModelKind::inverse_action : ModelKind::desire;
        c.width = 8;
        c.height = 8;
        c.channels = {3, 4, 4};
        c.concept_whitening = variant == 2;
        c.seed = seed;
        IntentModel m(c);
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(variant)));
        const Tensor x = nn::randn({n, input_channels(c.num_types), 8, 8}, 1.0, rng);
        std::vector<Action> acts;
        for (int i = 0; i < n; ++i) acts.push_back(static_cast<Action>(rng() % kNumActions));
        const Tensor a = encode_actions(acts);
        Tensor target({n, 1, 8, 8});
        std::uniform_real_distribution<double> u(0.1, 1.0);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < 64; ++j) s += (target[static_cast<std::size_t>(i * 64 + j)] = u(rng));
            for (int j = 0; j < 64; ++j) target[static_cast<std::size_t>(i * 64 + j)] /= s;
        }
        auto loss = [&](Tape& t) {
            std::optional<Var> av;
            if (c.kind == ModelKind::inverse_action) av = t.constant(a);
            return nll_loss(m.forward(t, t.constant(x), av, true).log_probs, target);
        };
        // h = 1e-6: larger steps can straddle a max-pool switch in the full network
        const char* name = variant == 0 ? "inverse_action_model" : variant == 1 ? "desire_model" : "desire_model_cw";
        out.push_back({name, kModelGradTolerance, nn::grad_check(loss, m.parameters(), kModelGradTolerance, 1e-6)});
    }
    return out;
}

}  // namespace tom
