#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "raaf/frame.hpp"
#include "raaf/glimpse.hpp"
#include "raaf/nn.hpp"
#include "raaf/tensor.hpp"

namespace raaf::model {

struct ModelConfig {
    std::size_t frame_rows = 37;
    std::size_t frame_cols = 9;
    std::size_t n_classes = 6;

    std::size_t conv1_channels = 8;
    std::size_t conv2_channels = 16;

    RetinaConfig retina;
    std::size_t glimpse_branch_dim = 128;
    std::size_t glimpse_dim = 220;

    std::size_t attn_hidden = 100;
    std::size_t frame_hidden = 1000;

    std::size_t glimpses = 30;          // T
    std::size_t frames_per_sample = 5;  // F
    std::size_t mc_copies = 20;         // M
    double location_variance = 0.22;

    // The action head is trained with a per-frame cross-entropy term at
    // the last glimpse; this scales it (0 disables).
    double action_loss_weight = 1.0;

    // Variant switches, both off by default: random initial hidden state
    // per frame, and feeding the frame-stream LSTM the last action
    // distribution instead of the last hidden state.
    bool random_hidden_init = false;
    bool frame_stream_action_input = false;

    // Evaluation draws locations stochastically and averages the copies;
    // set false for greedy mean-location evaluation.
    bool sample_at_eval = true;

    void validate() const;
    std::string to_json_string() const;
    static ModelConfig from_json_string(const std::string& text);
};

struct AttentionState {
    nn::LstmCell::State state;
    std::size_t t = 0;  // completed glimpses
};

/// Per-copy record of one stochastic forward pass: every attended
/// location with the Gaussian that produced it, the per-frame action
/// distribution at the last glimpse, and the copy's prediction.
struct EpisodeTrace {
    struct Step {
        Location mean;       // mean of the generating Gaussian
        Location loc;        // attended location (clamped)
        Location raw;        // pre-clamp draw; equals loc for t = 1
        double log_density = 0.0;
        bool random_init = false;  // t = 1: uniform draw, no Gaussian
    };
    std::vector<Step> steps;           // F * T, frame-major
    std::vector<Tensor> frame_actions; // F softmax distributions at step T
    Tensor scores;                     // this copy's final class distribution
    double final_loss = 0.0;           // cross-entropy is filled in training
    std::size_t prediction = 0;
    double reward = 0.0;

    const Step& step(std::size_t frame, std::size_t t, std::size_t glimpses) const {
        return steps[frame * glimpses + (t - 1)];
    }
};

struct LocationSample {
    Location loc;        // clamped to [-1, 1] per axis
    Location raw;        // pre-clamp draw
    double log_density;  // of the pre-clamp draw
};

/// Two independent Gaussian draws around the mean; the log-density is
/// evaluated at the pre-clamp point.
LocationSample sample_location(Location mean, double variance, Rng& rng);

/// How forward passes choose locations after the uniform initial one.
struct LocationPolicy {
    enum class Mode {
        kSampled,  // Gaussian around the location-head mean
        kMean,     // greedy: the mean itself
        kUniform,  // ignore the head, draw uniformly (diagnostics)
        kReplay,   // fixed locations from earlier traces (gradient checks)
    };
    Mode mode = Mode::kSampled;
    const std::vector<EpisodeTrace>* replay = nullptr;  // per copy, for kReplay
};

struct SampleForward {
    Tensor scores;  // mean over copies
    std::size_t prediction = 0;
    std::vector<EpisodeTrace> traces;
};

class RaafModel {
public:
    RaafModel(const ModelConfig& config, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }

    /// conv -> relu -> maxpool, twice, then a fully connected layer
    /// reshaped back to the input frame shape.
    Tensor encode_frame(const frames::ActivityFrame& frame, bool cache = false);
    Tensor encode_frame(const Tensor& frame, bool cache = false);

    /// Backward through the encoder for one cached encode_frame call;
    /// returns the gradient w.r.t. the input frame.
    Tensor encoder_backward(const Tensor& dconv);

    struct AttendStepOut {
        AttentionState state;
        Tensor action_logits;
        Location next_mean;
    };
    /// One glimpse: retina + glimpse network + LSTM step + both heads.
    AttendStepOut attend_step(const Tensor& conv_frame, const AttentionState& state, Location loc,
                              bool cache = false);

    /// Runs `copy_seeds.size()` Monte Carlo copies over the sample's
    /// frame sequence and averages their class scores. With cache=true
    /// every intermediate is retained for one backward_sample call.
    SampleForward forward_sample(const frames::Sample& sample,
                                 std::span<const std::uint64_t> copy_seeds, bool cache = false,
                                 LocationPolicy policy = {});

    /// Accumulates gradients for the cached forward: cross-entropy terms
    /// through the classification path plus the score-function term
    /// (reward - baseline) * grad log N for every sampled location,
    /// averaged over copies and scaled by loss_scale. Locations reach the
    /// policy parameters only through the score-function term.
    void backward_sample(const SampleForward& fwd, std::size_t label,
                         std::span<const double> rewards, double baseline, double loss_scale,
                         bool reinforce_enabled = true);

    std::vector<ParamSlot*> params();
    std::vector<const ParamSlot*> params() const;
    std::vector<ParamSlot*> location_params();

    void save(const std::string& path) const;   // checkpoint + config sidecar
    void load(const std::string& path);

private:
    struct CopyOutcome;
    CopyOutcome run_copy(const std::vector<Tensor>& conv_frames, Rng& rng, bool cache,
                         const LocationPolicy& policy, std::size_t copy_index);

    ModelConfig cfg_;
    Rng init_rng_;  // consumed once, during member construction
    nn::Conv2d3x3 conv1_;
    nn::Relu enc_relu1_;
    nn::MaxPoolRow3 pool1_;
    nn::Conv2d3x3 conv2_;
    nn::Relu enc_relu2_;
    nn::MaxPoolRow3 pool2_;
    nn::Linear enc_fc_;
    GlimpseNetwork glimpse_;
    nn::LstmCell lstm_a_;
    nn::Linear loc_head_;
    nn::Linear act_head_;
    nn::LstmCell lstm_f_;
    nn::Linear final_head_;
};

}  // namespace raaf::model
