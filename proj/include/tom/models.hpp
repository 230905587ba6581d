#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tom/belief.hpp"
#include "tom/nn/checkpoint.hpp"
#include "tom/nn/layers.hpp"
#include "tom/whitening.hpp"

namespace tom {

// Network input: K belief channels, then agent-position one-hot, facing dx, facing dy,
// normalized timer and beep/2 (the last four broadcast over the grid).
inline constexpr int kAuxChannels = 5;
inline int input_channels(int num_types) { return num_types + kAuxChannels; }

void encode_belief(const BeliefState& belief, double* out);
nn::Tensor encode_beliefs(const std::vector<const BeliefState*>& beliefs);
nn::Tensor encode_actions(const std::vector<Action>& actions);

enum class ModelKind { inverse_action, desire };

struct ModelConfig {
    ModelKind kind = ModelKind::desire;
    int width = 24;
    int height = 24;
    int num_types = kNumBlockTypes;
    std::array<int, 3> channels{8, 16, 16};
    bool concept_whitening = false;
    double eps_eig = kDefaultEigClamp;
    std::uint64_t seed = 0;
};

std::string model_kind_name(ModelKind kind);

// Optional instrumentation for connectivity probes.
struct ForwardProbe {
    int zero_skip = -1;                   // decoder block (0..2) whose skip input is zeroed
    std::array<nn::Tensor, 3> decoder_in;  // sum of upsampled features and skip, per block
};

// U-Net style encoder-decoder producing an X x Y grid of intent log-probabilities.
// Encoder block: conv -> maxpool -> relu -> batchnorm (skip taken from the conv output).
// Bottleneck: flatten (+ action embedding for the inverse action model) -> linear ->
// batchnorm, or concept whitening in CW mode. Decoder block: upsample -> conv -> add skip ->
// conv -> relu -> batchnorm. Head: 1x1 conv -> log-softmax over all cells.
class IntentModel {
  public:
    explicit IntentModel(const ModelConfig& config);
    IntentModel(const IntentModel&) = delete;
    IntentModel& operator=(const IntentModel&) = delete;

    struct Output {
        nn::Var log_probs;   // [N, 1, Y, X]
        nn::Var bottleneck;  // [N, c3, Y/8, X/8], input to the normalization slot
    };

    Output forward(nn::Tape& tape, nn::Var input, std::optional<nn::Var> actions, bool train,
                   ForwardProbe* probe = nullptr);

    // Inference-mode log-probabilities, [N, 1, Y, X]. `pooled` receives the spatially
    // averaged bottleneck latents [N, c3] of the same pass.
    nn::Tensor predict(const nn::Tensor& input, const nn::Tensor* actions = nullptr,
                       Eigen::MatrixXd* pooled = nullptr);

    const ModelConfig& config() const { return config_; }
    int bottleneck_width() const;
    int latent_dim() const { return config_.channels[2]; }

    std::vector<nn::Parameter*> parameters();
    nn::StateRefs state();

    ConceptWhitening* concept_whitening() { return cw_ ? cw_.get() : nullptr; }
    const ConceptWhitening* concept_whitening() const { return cw_ ? cw_.get() : nullptr; }

    // Spatially pooled bottleneck latents [N, c3] (input of the normalization slot) in
    // inference mode; usable before concept whitening is fitted.
    Eigen::MatrixXd pooled_latents(const nn::Tensor& input);
    // Same latents with one row per (sample, location), the rows whitening statistics use.
    Eigen::MatrixXd position_latents(const nn::Tensor& input);

    nn::Checkpoint to_checkpoint(const std::string& extra_metadata = "{}");
    // Strict load: every tensor must be present with the right shape.
    void load(const nn::Checkpoint& ckpt);
    // Copies every tensor whose name and shape match (bit-exact); resets Q to identity.
    // Returns the number of tensors copied.
    int transfer_from(const nn::Checkpoint& ckpt);

  private:
    struct EncoderBlock {
        nn::Conv2d conv;
        nn::BatchNorm2d bn;
    };
    struct DecoderBlock {
        nn::Conv2d up;
        nn::Conv2d conv;
        nn::BatchNorm2d bn;
    };

    nn::Var encode(nn::Tape& tape, nn::Var x, std::optional<nn::Var> actions, bool train,
                   std::array<nn::Var, 3>& skips);

    ModelConfig config_;
    std::array<EncoderBlock, 3> enc_;
    nn::Linear action_embed_;
    nn::Linear bottleneck_;
    nn::BatchNorm2d norm_;  // affine reused by concept whitening
    std::unique_ptr<ConceptWhitening> cw_;
    std::array<DecoderBlock, 3> dec_;
    nn::Conv2d head_;
};

ModelConfig model_config_from_checkpoint(const nn::Checkpoint& ckpt);

// Cross-entropy against a target distribution per sample; throws std::invalid_argument
// if a target row is negative or does not sum to 1 within 1e-6.
nn::Var nll_loss(nn::Var log_probs, const nn::Tensor& target);

}  // namespace tom
