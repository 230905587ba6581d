#include "tom/models.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "tom/nn/ops.hpp"

namespace tom {

using nn::Tensor;
using nn::Var;

void encode_belief(const BeliefState& b, double* out) {
    const int K = b.num_types;
    const std::size_t plane = static_cast<std::size_t>(b.width) * b.height;
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            const double* c = b.cell(x, y);
            const std::size_t at = static_cast<std::size_t>(y) * b.width + x;
            for (int k = 0; k < K; ++k) out[k * plane + at] = c[k];
        }
    double* pos = out + K * plane;
    std::fill(pos, pos + plane, 0.0);
    if (b.pose.pos.x >= 0 && b.pose.pos.x < b.width && b.pose.pos.y >= 0 && b.pose.pos.y < b.height)
        pos[static_cast<std::size_t>(b.pose.pos.y) * b.width + b.pose.pos.x] = 1.0;
    const Vec2i d = facing_delta(b.pose.facing);
    const double aux[4] = {static_cast<double>(d.x), static_cast<double>(d.y), b.timer, b.beep / 2.0};
    for (int i = 0; i < 4; ++i) std::fill(out + (K + 1 + i) * plane, out + (K + 2 + i) * plane, aux[i]);
}

Tensor encode_beliefs(const std::vector<const BeliefState*>& beliefs) {
    if (beliefs.empty()) throw std::invalid_argument("encode_beliefs: empty batch");
    const BeliefState& first = *beliefs.front();
    const int C = input_channels(first.num_types);
    Tensor out({static_cast<int>(beliefs.size()), C, first.height, first.width});
    const std::size_t per = static_cast<std::size_t>(C) * first.height * first.width;
    for (std::size_t n = 0; n < beliefs.size(); ++n) {
        const BeliefState& b = *beliefs[n];
        if (b.width != first.width || b.height != first.height || b.num_types != first.num_types)
            throw std::invalid_argument("encode_beliefs: mixed belief dimensions");
        encode_belief(b, out.data() + n * per);
    }
    return out;
}

Tensor encode_actions(const std::vector<Action>& actions) {
    Tensor out({static_cast<int>(actions.size()), kNumActions});
    for (std::size_t n = 0; n < actions.size(); ++n)
        out[n * kNumActions + static_cast<std::size_t>(actions[n])] = 1.0;
    return out;
}

std::string model_kind_name(ModelKind kind) { return kind == ModelKind::inverse_action ? "iam" : "dm"; }

namespace {

ModelConfig validated(const ModelConfig& c) {
    if (c.width <= 0 || c.height <= 0 || c.width % 8 != 0 || c.height % 8 != 0)
        throw ConfigError("model grid must be a positive multiple of 8 in both dimensions");
    for (int ch : c.channels)
        if (ch <= 0) throw ConfigError("model channel widths must be positive");
    if (c.num_types <= 0) throw ConfigError("num_types must be positive");
    if (c.concept_whitening && c.kind != ModelKind::desire)
        throw ConfigError("concept whitening is only supported in the desire model");
    return c;
}

}  // namespace

IntentModel::IntentModel(const ModelConfig& config) : config_(validated(config)) {
    std::mt19937_64 rng(config_.seed);
    const auto& ch = config_.channels;
    int in = input_channels(config_.num_types);
    for (int i = 0; i < 3; ++i) {
        const std::string n = "enc" + std::to_string(i + 1);
        enc_[i] = {nn::Conv2d(n + ".conv", in, ch[i], 3, rng), nn::BatchNorm2d(n + ".bn", ch[i])};
        in = ch[i];
    }
    const int F = bottleneck_width();
    if (config_.kind == ModelKind::inverse_action) {
        action_embed_ = nn::Linear("action.embed", kNumActions, F, rng);
        bottleneck_ = nn::Linear("bottleneck.linear", 2 * F, F, rng);
    } else {
        bottleneck_ = nn::Linear("bottleneck.linear", F, F, rng);
    }
    norm_ = nn::BatchNorm2d("bottleneck.norm", ch[2]);
    if (config_.concept_whitening) cw_ = std::make_unique<ConceptWhitening>(ch[2], config_.eps_eig);
    // decoder i mirrors encoder 2 - i
    const int out_ch[3] = {ch[1], ch[0], ch[0]};
    in = ch[2];
    for (int i = 0; i < 3; ++i) {
        const std::string n = "dec" + std::to_string(i + 1);
        const int skip = ch[2 - i];
        dec_[i] = {nn::Conv2d(n + ".up", in, skip, 3, rng), nn::Conv2d(n + ".conv", skip, out_ch[i], 3, rng),
                   nn::BatchNorm2d(n + ".bn", out_ch[i])};
        in = out_ch[i];
    }
    head_ = nn::Conv2d("head", in, 1, 1, rng);
}

int IntentModel::bottleneck_width() const {
    return config_.channels[2] * (config_.width / 8) * (config_.height / 8);
}

Var IntentModel::encode(nn::Tape& tape, Var x, std::optional<Var> actions, bool train, std::array<Var, 3>& skips) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != input_channels(config_.num_types) || s[2] != config_.height ||
        s[3] != config_.width)
        throw std::invalid_argument("model input shape " + nn::shape_string(s) + " does not match the model");
    const bool with_action = config_.kind == ModelKind::inverse_action;
    if (with_action != actions.has_value())
        throw std::invalid_argument(with_action ? "inverse action model needs actions" : "desire model takes no actions");
    const int N = s[0];

    Var h = x;
    for (int i = 0; i < 3; ++i) {
        skips[i] = enc_[i].conv(tape, h);
        h = enc_[i].bn(tape, nn::relu(nn::maxpool2x2(skips[i])), train);
    }
    Var flat = nn::reshape(h, {N, bottleneck_width()});
    if (with_action) {
        if (actions->shape() != std::vector<int>{N, kNumActions})
            throw std::invalid_argument("action batch must be [N, " + std::to_string(kNumActions) + "]");
        flat = nn::concat(flat, action_embed_(tape, *actions));
    }
    return nn::reshape(bottleneck_(tape, flat), {N, config_.channels[2], config_.height / 8, config_.width / 8});
}

IntentModel::Output IntentModel::forward(nn::Tape& tape, Var x, std::optional<Var> actions, bool train,
                                         ForwardProbe* probe) {
    std::array<Var, 3> skips;
    Var z = encode(tape, x, actions, train, skips);
    Var gamma = tape.param(norm_.gamma), beta = tape.param(norm_.beta);
    Var h = cw_ ? cw_->forward(tape, z, gamma, beta, train)
                : nn::batchnorm2d(z, gamma, beta, norm_.buffers, train, norm_.momentum, norm_.eps);

    for (int i = 0; i < 3; ++i) {
        Var up = dec_[i].up(tape, nn::upsample2x(h));
        Var skip = skips[2 - i];
        if (probe && probe->zero_skip == i) skip = tape.constant(Tensor(skip.shape()));
        Var sum = nn::add(up, skip);
        if (probe) probe->decoder_in[i] = sum.value();
        h = dec_[i].bn(tape, nn::relu(dec_[i].conv(tape, sum)), train);
    }
    return {nn::log_softmax(head_(tape, h)), z};
}

namespace {

Eigen::MatrixXd spatial_mean(const Tensor& z) {
    const int N = z.dim(0), C = z.dim(1), S = z.dim(2) * z.dim(3);
    Eigen::MatrixXd out(N, C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double sum = 0.0;
            const double* p = z.data() + (static_cast<std::size_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) sum += p[i];
            out(n, c) = sum / S;
        }
    return out;
}

}  // namespace

Tensor IntentModel::predict(const Tensor& input, const Tensor* actions, Eigen::MatrixXd* pooled) {
    nn::Tape tape;
    std::optional<Var> a;
    if (actions) a = tape.constant(*actions);
    const Output out = forward(tape, tape.constant(input), a, false);
    if (pooled) *pooled = spatial_mean(out.bottleneck.value());
    return out.log_probs.value();
}

Eigen::MatrixXd IntentModel::pooled_latents(const Tensor& input) {
    if (config_.kind != ModelKind::desire) throw std::logic_error("pooled latents are defined for the desire model");
    nn::Tape tape;
    std::array<Var, 3> skips;
    return spatial_mean(encode(tape, tape.constant(input), std::nullopt, false, skips).value());
}

Eigen::MatrixXd IntentModel::position_latents(const nn::Tensor& input) {
    if (config_.kind != ModelKind::desire) throw std::logic_error("position latents are defined for the desire model");
    nn::Tape tape;
    std::array<Var, 3> skips;
    const Tensor z = encode(tape, tape.constant(input), std::nullopt, false, skips).value();
    const int N = z.dim(0), C = z.dim(1), S = z.dim(2) * z.dim(3);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(N) * S, C);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* p = z.data() + (static_cast<std::size_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) out(static_cast<Eigen::Index>(n) * S + i, c) = p[i];
        }
    return out;
}

nn::StateRefs IntentModel::state() {
    nn::StateRefs refs;
    for (auto& e : enc_) {
        e.conv.collect(refs);
        e.bn.collect(refs);
    }
    if (config_.kind == ModelKind::inverse_action) action_embed_.collect(refs);
    bottleneck_.collect(refs);
    if (cw_) {
        refs.parameters.push_back(&norm_.gamma);
        refs.parameters.push_back(&norm_.beta);
        cw_->collect(refs);
    } else {
        norm_.collect(refs);
    }
    for (auto& d : dec_) {
        d.up.collect(refs);
        d.conv.collect(refs);
        d.bn.collect(refs);
    }
    head_.collect(refs);
    return refs;
}

std::vector<nn::Parameter*> IntentModel::parameters() { return state().parameters; }

nn::Checkpoint IntentModel::to_checkpoint(const std::string& extra_metadata) {
    nlohmann::json meta;
    meta["kind"] = model_kind_name(config_.kind);
    meta["mode"] = cw_ ? "cw" : "no_cw";
    meta["width"] = config_.width;
    meta["height"] = config_.height;
    meta["num_types"] = config_.num_types;
    meta["channels"] = config_.channels;
    meta["eps_eig"] = config_.eps_eig;
    meta["extra"] = nlohmann::json::parse(extra_metadata);
    nn::Checkpoint ckpt;
    ckpt.metadata = meta.dump();
    const nn::StateRefs refs = state();
    for (const nn::Parameter* p : refs.parameters) ckpt.tensors[p->name] = p->value;
    for (const auto& [name, t] : refs.buffers) ckpt.tensors[name] = *t;
    return ckpt;
}

void IntentModel::load(const nn::Checkpoint& ckpt) {
    nn::StateRefs refs = state();
    std::size_t expected = refs.parameters.size() + refs.buffers.size();
    if (ckpt.tensors.size() != expected)
        throw nn::CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                                  std::to_string(expected));
    auto take = [&](const std::string& name, Tensor& dst) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw nn::CheckpointError("checkpoint is missing " + name);
        if (it->second.shape() != dst.shape())
            throw nn::CheckpointError("shape mismatch for " + name + ": " + nn::shape_string(it->second.shape()) +
                                      " vs " + nn::shape_string(dst.shape()));
        dst = it->second;
    };
    for (nn::Parameter* p : refs.parameters) take(p->name, p->value);
    for (auto& [name, t] : refs.buffers) take(name, *t);
    if (cw_) cw_->sync_from_buffers();
}

int IntentModel::transfer_from(const nn::Checkpoint& ckpt) {
    nn::StateRefs refs = state();
    int copied = 0;
    auto copy = [&](const std::string& name, Tensor& dst) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end() || it->second.shape() != dst.shape()) return;
        dst = it->second;
        ++copied;
    };
    for (nn::Parameter* p : refs.parameters) copy(p->name, p->value);
    for (auto& [name, t] : refs.buffers)
        if (name.rfind("cw.", 0) != 0) copy(name, *t);
    if (cw_) {
        cw_->sync_from_buffers();
        cw_->Q = Eigen::MatrixXd::Identity(cw_->dim(), cw_->dim());
    }
    return copied;
}

ModelConfig model_config_from_checkpoint(const nn::Checkpoint& ckpt) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ckpt.metadata);
        ModelConfig c;
        const std::string kind = meta.at("kind").get<std::string>();
        if (kind != "iam" && kind != "dm") throw nn::CheckpointError("unknown model kind " + kind);
        c.kind = kind == "iam" ? ModelKind::inverse_action : ModelKind::desire;
        c.concept_whitening = meta.at("mode").get<std::string>() == "cw";
        c.width = meta.at("width").get<int>();
        c.height = meta.at("height").get<int>();
        c.num_types = meta.at("num_types").get<int>();
        c.channels = meta.at("channels").get<std::array<int, 3>>();
        c.eps_eig = meta.at("eps_eig").get<double>();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw nn::CheckpointError(std::string("bad model metadata: ") + e.what());
    }
}

Var nll_loss(Var log_probs, const Tensor& target) {
    if (target.shape() != log_probs.shape())
        throw std::invalid_argument("target shape " + nn::shape_string(target.shape()) + " does not match " +
                                    nn::shape_string(log_probs.shape()));
    const int N = target.dim(0);
    const std::size_t per = target.numel() / static_cast<std::size_t>(N);
    for (int n = 0; n < N; ++n) {
        double sum = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            const double t = target[n * per + i];
            if (!(t >= 0.0)) throw std::invalid_argument("target has a negative or NaN entry");
            sum += t;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("target row does not sum to 1");
    }
    return nn::soft_cross_entropy(log_probs, target);
}

}  // namespace tom
