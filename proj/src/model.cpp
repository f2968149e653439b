#include "raaf/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "raaf/checkpoint.hpp"
#include "raaf/errors.hpp"

namespace raaf::model {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::size_t argmax(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

double clamp_unit(double v) { return std::min(1.0, std::max(-1.0, v)); }

ModelConfig validated(ModelConfig cfg) {
    cfg.validate();
    return cfg;
}

}  // namespace

void ModelConfig::validate() const {
    if (frame_rows == 0 || frame_cols == 0) throw ConfigError("model: empty frame shape");
    if (frame_cols < 3 || frame_cols / 3 < 3) {
        throw ConfigError("model: frame width " + std::to_string(frame_cols) +
                          " collapses below 3 columns before the second pooling layer");
    }
    if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
    if (conv1_channels == 0 || conv2_channels == 0) throw ConfigError("model: zero conv channels");
    if (glimpse_branch_dim == 0 || glimpse_dim == 0) throw ConfigError("model: zero glimpse dims");
    if (attn_hidden == 0 || frame_hidden == 0) throw ConfigError("model: zero hidden size");
    if (glimpses == 0 || frames_per_sample == 0 || mc_copies == 0) {
        throw ConfigError("model: glimpses, frames and copies must be positive");
    }
    if (location_variance <= 0.0) throw ConfigError("model: location variance must be positive");
    if (retina.rows == 0 || retina.cols == 0 || retina.scales == 0 || retina.scale_factor < 2) {
        throw ConfigError("model: invalid retina window configuration");
    }
    if (action_loss_weight < 0.0) throw ConfigError("model: negative action loss weight");
}

std::string ModelConfig::to_json_string() const {
    nlohmann::json j;
    j["frame_rows"] = frame_rows;
    j["frame_cols"] = frame_cols;
    j["n_classes"] = n_classes;
    j["conv_channels"] = {conv1_channels, conv2_channels};
    j["glimpse_window"] = {retina.rows, retina.cols};
    j["scales"] = retina.scales;
    j["scale_factor"] = retina.scale_factor;
    j["glimpse_branch_dim"] = glimpse_branch_dim;
    j["glimpse_dim"] = glimpse_dim;
    j["attn_hidden"] = attn_hidden;
    j["frame_hidden"] = frame_hidden;
    j["glimpses"] = glimpses;
    j["frames_per_sample"] = frames_per_sample;
    j["mc_copies"] = mc_copies;
    j["location_variance"] = location_variance;
    j["action_loss_weight"] = action_loss_weight;
    j["random_hidden_init"] = random_hidden_init;
    j["frame_stream_action_input"] = frame_stream_action_input;
    j["sample_at_eval"] = sample_at_eval;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: bad JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        cfg.frame_rows = j.at("frame_rows").get<std::size_t>();
        cfg.frame_cols = j.at("frame_cols").get<std::size_t>();
        cfg.n_classes = j.at("n_classes").get<std::size_t>();
        if (j.contains("conv_channels")) {
            cfg.conv1_channels = j["conv_channels"].at(0).get<std::size_t>();
            cfg.conv2_channels = j["conv_channels"].at(1).get<std::size_t>();
        }
        if (j.contains("glimpse_window")) {
            cfg.retina.rows = j["glimpse_window"].at(0).get<std::size_t>();
            cfg.retina.cols = j["glimpse_window"].at(1).get<std::size_t>();
        }
        cfg.retina.scales = j.value("scales", cfg.retina.scales);
        cfg.retina.scale_factor = j.value("scale_factor", cfg.retina.scale_factor);
        cfg.glimpse_branch_dim = j.value("glimpse_branch_dim", cfg.glimpse_branch_dim);
        cfg.glimpse_dim = j.value("glimpse_dim", cfg.glimpse_dim);
        cfg.attn_hidden = j.value("attn_hidden", cfg.attn_hidden);
        cfg.frame_hidden = j.value("frame_hidden", cfg.frame_hidden);
        cfg.glimpses = j.value("glimpses", cfg.glimpses);
        cfg.frames_per_sample = j.value("frames_per_sample", cfg.frames_per_sample);
        cfg.mc_copies = j.value("mc_copies", cfg.mc_copies);
        cfg.location_variance = j.value("location_variance", cfg.location_variance);
        cfg.action_loss_weight = j.value("action_loss_weight", cfg.action_loss_weight);
        cfg.random_hidden_init = j.value("random_hidden_init", cfg.random_hidden_init);
        cfg.frame_stream_action_input =
            j.value("frame_stream_action_input", cfg.frame_stream_action_input);
        cfg.sample_at_eval = j.value("sample_at_eval", cfg.sample_at_eval);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

LocationSample sample_location(Location mean, double variance, Rng& rng) {
    if (!(variance > 0.0)) throw ConfigError("sample_location: variance must be positive");
    const double sd = std::sqrt(variance);
    LocationSample out;
    out.raw.row = mean.row + sd * rng.normal();
    out.raw.col = mean.col + sd * rng.normal();
    out.loc.row = clamp_unit(out.raw.row);
    out.loc.col = clamp_unit(out.raw.col);
    const double dr = out.raw.row - mean.row;
    const double dc = out.raw.col - mean.col;
    out.log_density = -std::log(kTwoPi * variance) - (dr * dr + dc * dc) / (2.0 * variance);
    return out;
}

// Construction consumes init_rng_ in declaration order, so a seed fully
// determines the initial parameter values.
RaafModel::RaafModel(const ModelConfig& config, std::uint64_t init_seed)
    : cfg_(validated(config)),
      init_rng_(init_seed),
      conv1_(1, cfg_.conv1_channels, "enc.conv1", init_rng_),
      conv2_(cfg_.conv1_channels, cfg_.conv2_channels, "enc.conv2", init_rng_),
      enc_fc_(cfg_.conv2_channels * cfg_.frame_rows * (cfg_.frame_cols / 9),
              cfg_.frame_rows * cfg_.frame_cols, "enc.fc", init_rng_),
      glimpse_(cfg_.retina, cfg_.glimpse_branch_dim, cfg_.glimpse_dim, init_rng_),
      lstm_a_(cfg_.glimpse_dim, cfg_.attn_hidden, "attn.lstm", init_rng_),
      loc_head_(cfg_.attn_hidden, 2, "attn.loc", init_rng_),
      act_head_(cfg_.attn_hidden, cfg_.n_classes, "attn.act", init_rng_),
      lstm_f_(cfg_.frame_stream_action_input ? cfg_.n_classes : cfg_.attn_hidden,
              cfg_.frame_hidden, "fstream.lstm", init_rng_),
      final_head_(cfg_.frame_hidden, cfg_.n_classes, "fstream.head", init_rng_) {
    const std::size_t w1 = cfg_.frame_cols / 3;
    if (w1 / 3 != cfg_.frame_cols / 9 || cfg_.frame_cols / 9 == 0) {
        throw ConfigError("model: frame width unsupported by the two pooling layers");
    }
}

Tensor RaafModel::encode_frame(const frames::ActivityFrame& frame, bool cache) {
    return encode_frame(frame.as_tensor(), cache);
}

Tensor RaafModel::encode_frame(const Tensor& frame, bool cache) {
    if (frame.rank() != 2 || frame.shape[0] != cfg_.frame_rows ||
        frame.shape[1] != cfg_.frame_cols) {
        throw ShapeError("encode_frame: frame shape does not match model config");
    }
    Tensor x = Tensor::from({1, cfg_.frame_rows, cfg_.frame_cols}, frame.data);
    Tensor p1 = pool1_.forward(enc_relu1_.forward(conv1_.forward(x, cache), cache), cache);
    Tensor p2 = pool2_.forward(enc_relu2_.forward(conv2_.forward(p1, cache), cache), cache);
    const std::size_t flat_size = p2.size();
    Tensor flat = Tensor::from({flat_size}, std::move(p2.data));
    Tensor out = enc_fc_.forward(flat, cache);
    return Tensor::from({cfg_.frame_rows, cfg_.frame_cols}, std::move(out.data));
}

Tensor RaafModel::encoder_backward(const Tensor& dconv) {
    Tensor dflat = Tensor::from({dconv.size()}, dconv.data);
    Tensor dp2 = enc_fc_.backward(dflat);
    dp2 = Tensor::from({cfg_.conv2_channels, cfg_.frame_rows, cfg_.frame_cols / 9},
                       std::move(dp2.data));
    Tensor dp1 = conv2_.backward(enc_relu2_.backward(pool2_.backward(dp2)));
    return conv1_.backward(enc_relu1_.backward(pool1_.backward(dp1)));
}

RaafModel::AttendStepOut RaafModel::attend_step(const Tensor& conv_frame,
                                                const AttentionState& state, Location loc,
                                                bool cache) {
    RetinaPatch patch = extract_retina(conv_frame, loc, cfg_.retina);
    Tensor g = glimpse_.forward(patch, loc, cache);
    AttendStepOut out;
    out.state.state = lstm_a_.forward(g, state.state, cache);
    out.state.t = state.t + 1;
    out.action_logits = act_head_.forward(out.state.state.h, cache);
    Tensor mean_pre = loc_head_.forward(out.state.state.h, cache);
    out.next_mean = Location{std::tanh(mean_pre[0]), std::tanh(mean_pre[1])};
    return out;
}

struct RaafModel::CopyOutcome {
    EpisodeTrace trace;
    Tensor frame_stream_h;
};

RaafModel::CopyOutcome RaafModel::run_copy(const std::vector<Tensor>& conv_frames, Rng& rng,
                                           bool cache, const LocationPolicy& policy,
                                           std::size_t copy_index) {
    const std::size_t frame_count = conv_frames.size();
    const std::size_t steps = cfg_.glimpses;
    const bool replaying = policy.mode == LocationPolicy::Mode::kReplay;
    if (replaying && (!policy.replay || copy_index >= policy.replay->size())) {
        throw ConfigError("forward_sample: replay policy without matching traces");
    }
    const EpisodeTrace* replay = replaying ? &(*policy.replay)[copy_index] : nullptr;

    CopyOutcome out;
    out.trace.steps.reserve(frame_count * steps);
    out.trace.frame_actions.reserve(frame_count);

    nn::LstmCell::State r_state = lstm_f_.zero_state();
    for (std::size_t f = 0; f < frame_count; ++f) {
        nn::LstmCell::State a_state = lstm_a_.zero_state();
        if (cfg_.random_hidden_init) {
            for (double& v : a_state.h.data) v = rng.uniform(-0.1, 0.1);
            for (double& v : a_state.c.data) v = rng.uniform(-0.1, 0.1);
        }

        Location loc{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        if (replaying) loc = replay->step(f, 1, steps).loc;
        EpisodeTrace::Step first;
        first.mean = loc;
        first.loc = loc;
        first.raw = loc;
        first.log_density = 0.0;
        first.random_init = true;
        out.trace.steps.push_back(first);

        Tensor h_last;
        for (std::size_t t = 1; t <= steps; ++t) {
            RetinaPatch patch = extract_retina(conv_frames[f], loc, cfg_.retina);
            Tensor g = glimpse_.forward(patch, loc, cache);
            a_state = lstm_a_.forward(g, a_state, cache);

            if (t == steps) {
                Tensor logits = act_head_.forward(a_state.h, cache);
                out.trace.frame_actions.push_back(nn::softmax(logits));
                h_last = a_state.h;
            } else {
                Tensor mean_pre = loc_head_.forward(a_state.h, cache);
                const Location mean{std::tanh(mean_pre[0]), std::tanh(mean_pre[1])};
                EpisodeTrace::Step step;
                step.mean = mean;
                switch (policy.mode) {
                    case LocationPolicy::Mode::kSampled: {
                        LocationSample s = sample_location(mean, cfg_.location_variance, rng);
                        step.loc = s.loc;
                        step.raw = s.raw;
                        step.log_density = s.log_density;
                        break;
                    }
                    case LocationPolicy::Mode::kMean:
                        step.loc = mean;
                        step.raw = mean;
                        step.log_density = -std::log(kTwoPi * cfg_.location_variance);
                        break;
                    case LocationPolicy::Mode::kUniform:
                        step.loc = Location{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
                        step.raw = step.loc;
                        step.log_density = 0.0;
                        step.random_init = true;
                        break;
                    case LocationPolicy::Mode::kReplay:
                        step = replay->step(f, t + 1, steps);
                        break;
                }
                loc = step.loc;
                out.trace.steps.push_back(step);
            }
        }

        const Tensor& frame_input =
            cfg_.frame_stream_action_input ? out.trace.frame_actions.back() : h_last;
        r_state = lstm_f_.forward(frame_input, r_state, cache);
    }

    Tensor logits = final_head_.forward(r_state.h, cache);
    out.trace.scores = nn::softmax(logits);
    out.trace.prediction = argmax(out.trace.scores);
    out.frame_stream_h = std::move(r_state.h);
    return out;
}

SampleForward RaafModel::forward_sample(const frames::Sample& sample,
                                        std::span<const std::uint64_t> copy_seeds, bool cache,
                                        LocationPolicy policy) {
    if (copy_seeds.empty()) throw ConfigError("forward_sample: need at least one copy seed");
    if (sample.frames.size() != cfg_.frames_per_sample) {
        throw ShapeError("forward_sample: sample holds " + std::to_string(sample.frames.size()) +
                         " frames, model expects " + std::to_string(cfg_.frames_per_sample));
    }

    // The convolutional frames are shared by every Monte Carlo copy.
    std::vector<Tensor> conv_frames;
    conv_frames.reserve(sample.frames.size());
    for (const frames::ActivityFrame& frame : sample.frames) {
        conv_frames.push_back(encode_frame(frame, cache));
    }

    SampleForward out;
    out.scores = Tensor({cfg_.n_classes});
    out.traces.reserve(copy_seeds.size());
    for (std::size_t i = 0; i < copy_seeds.size(); ++i) {
        Rng rng(copy_seeds[i]);
        CopyOutcome copy = run_copy(conv_frames, rng, cache, policy, i);
        out.scores.add(copy.trace.scores);
        out.traces.push_back(std::move(copy.trace));
    }
    out.scores.scale(1.0 / static_cast<double>(copy_seeds.size()));
    if (!out.scores.all_finite()) throw NumericError("forward_sample: non-finite class scores");
    out.prediction = argmax(out.scores);
    return out;
}

void RaafModel::backward_sample(const SampleForward& fwd, std::size_t label,
                                std::span<const double> rewards, double baseline,
                                double loss_scale, bool reinforce_enabled) {
    const std::size_t n_copies = fwd.traces.size();
    if (rewards.size() != n_copies) {
        throw ConfigError("backward_sample: reward count does not match copy count");
    }
    if (label >= cfg_.n_classes) throw ConfigError("backward_sample: label out of range");

    const std::size_t frame_count = cfg_.frames_per_sample;
    const std::size_t steps = cfg_.glimpses;
    const double per_copy = loss_scale / static_cast<double>(n_copies);

    std::vector<Tensor> dconv(frame_count, Tensor({cfg_.frame_rows, cfg_.frame_cols}));

    // Copies are unwound in reverse so every per-layer cache stack pops in
    // exactly the order it was pushed.
    for (std::size_t ci = n_copies; ci-- > 0;) {
        const EpisodeTrace& trace = fwd.traces[ci];
        const double advantage = rewards[ci] - baseline;

        Tensor dr = final_head_.backward(nn::softmax_xent_backward(trace.scores, label, per_copy));
        Tensor dcf({cfg_.frame_hidden});

        for (std::size_t f = frame_count; f-- > 0;) {
            nn::LstmCell::InputGrads fg = lstm_f_.backward(dr, dcf);
            dr = std::move(fg.dh_prev);
            dcf = std::move(fg.dc_prev);

            // Gradient w.r.t. the last-glimpse action logits: the auxiliary
            // cross-entropy term plus, in the action-input variant, the
            // frame-stream gradient routed through the softmax.
            const Tensor& action = trace.frame_actions[f];
            Tensor dact({cfg_.n_classes});
            if (cfg_.action_loss_weight > 0.0) {
                dact = nn::softmax_xent_backward(
                    action, label, cfg_.action_loss_weight * per_copy / frame_count);
            }
            Tensor dh;
            if (cfg_.frame_stream_action_input) {
                double dot = 0.0;
                for (std::size_t k = 0; k < cfg_.n_classes; ++k) dot += action[k] * fg.dx[k];
                for (std::size_t k = 0; k < cfg_.n_classes; ++k) {
                    dact[k] += action[k] * (fg.dx[k] - dot);
                }
                dh = act_head_.backward(dact);
            } else {
                dh = act_head_.backward(dact);
                dh.add(fg.dx);
            }

            Tensor dc({cfg_.attn_hidden});
            for (std::size_t t = steps; t >= 1; --t) {
                if (t < steps) {
                    // The mean produced at step t parameterised the draw of
                    // the location attended at step t+1.
                    const EpisodeTrace::Step& ev = trace.step(f, t + 1, steps);
                    Tensor dz({2});
                    if (reinforce_enabled && !ev.random_init && advantage != 0.0) {
                        const double coeff = -advantage * per_copy / cfg_.location_variance;
                        const double dmr = coeff * (ev.raw.row - ev.mean.row);
                        const double dmc = coeff * (ev.raw.col - ev.mean.col);
                        dz[0] = dmr * (1.0 - ev.mean.row * ev.mean.row);
                        dz[1] = dmc * (1.0 - ev.mean.col * ev.mean.col);
                    }
                    dh.add(loc_head_.backward(dz));
                }
                nn::LstmCell::InputGrads ag = lstm_a_.backward(dh, dc);
                Tensor dpatch = glimpse_.backward(ag.dx);
                retina_backward(dpatch, trace.step(f, t, steps).loc, cfg_.retina, dconv[f]);
                dh = std::move(ag.dh_prev);
                dc = std::move(ag.dc_prev);
                // Initial attention state is a constant, so dh/dc of step 1
                // are discarded once the loop ends.
            }
        }
    }

    for (std::size_t f = frame_count; f-- > 0;) {
        encoder_backward(dconv[f]);
    }
}

std::vector<ParamSlot*> RaafModel::params() {
    std::vector<ParamSlot*> out;
    out.push_back(&conv1_.kernels);
    out.push_back(&conv1_.bias);
    out.push_back(&conv2_.kernels);
    out.push_back(&conv2_.bias);
    out.push_back(&enc_fc_.weight);
    out.push_back(&enc_fc_.bias);
    glimpse_.collect_params(out);
    out.push_back(&lstm_a_.w_input);
    out.push_back(&lstm_a_.w_hidden);
    out.push_back(&lstm_a_.bias);
    out.push_back(&loc_head_.weight);
    out.push_back(&loc_head_.bias);
    out.push_back(&act_head_.weight);
    out.push_back(&act_head_.bias);
    out.push_back(&lstm_f_.w_input);
    out.push_back(&lstm_f_.w_hidden);
    out.push_back(&lstm_f_.bias);
    out.push_back(&final_head_.weight);
    out.push_back(&final_head_.bias);
    return out;
}

std::vector<const ParamSlot*> RaafModel::params() const {
    auto mutable_params = const_cast<RaafModel*>(this)->params();
    return {mutable_params.begin(), mutable_params.end()};
}

std::vector<ParamSlot*> RaafModel::location_params() {
    return {&loc_head_.weight, &loc_head_.bias};
}

void RaafModel::save(const std::string& path) const {
    save_checkpoint(path, params());
}

void RaafModel::load(const std::string& path) {
    auto slots = params();
    load_checkpoint(path, slots);
}

}  // namespace raaf::model
