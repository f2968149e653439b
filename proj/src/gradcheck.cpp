#include "raaf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "raaf/glimpse.hpp"
#include "raaf/model.hpp"
#include "raaf/nn.hpp"

namespace raaf::gradcheck {

namespace {

constexpr double kStep = 1e-5;
constexpr double kLayerTol = 1e-4;
constexpr double kFullPathTol = 1e-3;

double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

/// Wiggles entries of `target` and compares (loss(+h)-loss(-h))/(2h)
/// against the matching entries of `analytic`. When the tensor is larger
/// than max_checks, a random subset of entries is probed.
///
/// Central differences are only valid where the loss is locally smooth.
/// Relu masks and maxpool argument switches make the loss piecewise, so
/// entries whose second difference betrays a kink inside the probing
/// interval are skipped rather than misreported.
double fd_against(Tensor& target, const Tensor& analytic,
                  const std::function<double()>& loss, Rng& pick, std::size_t max_checks) {
    std::vector<std::size_t> idx;
    if (target.size() <= max_checks) {
        idx.resize(target.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    } else {
        idx.reserve(max_checks);
        for (std::size_t k = 0; k < max_checks; ++k) idx.push_back(pick.index(target.size()));
    }
    const double base = loss();
    double worst = 0.0;
    for (std::size_t i : idx) {
        const double keep = target.data[i];
        target.data[i] = keep + kStep;
        const double up = loss();
        target.data[i] = keep - kStep;
        const double down = loss();
        target.data[i] = keep + 0.5 * kStep;
        const double up_half = loss();
        target.data[i] = keep - 0.5 * kStep;
        const double down_half = loss();
        target.data[i] = keep;
        // Smooth functions keep |up + down - 2*base| ~ |f''| h^2 ~ 1e-10;
        // a kink inside the interval contributes ~ h |slope change|.
        if (std::fabs(up + down - 2.0 * base) > 1e-7) continue;
        // Estimates at h and h/2 agree to O(h^2) on smooth stretches; a
        // kink sitting between h/2 and h corrupts only one of them.
        const double numeric = (up - down) / (2.0 * kStep);
        const double numeric_half = (up_half - down_half) / kStep;
        if (std::fabs(numeric - numeric_half) > 1e-6 * std::max(1.0, std::fabs(numeric))) continue;
        worst = std::max(worst, rel_err(analytic.data[i], numeric_half));
    }
    return worst;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

Result finish(std::string name, double worst, double tol, std::size_t trials) {
    Result r;
    r.name = std::move(name);
    r.max_rel_err = worst;
    r.tolerance = tol;
    r.trials = trials;
    r.pass = worst < tol;
    return r;
}

}  // namespace

Result check_linear(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t n_in = 2 + rng.index(6);
        const std::size_t n_out = 1 + rng.index(6);
        nn::Linear layer(n_in, n_out, "gc", rng);
        Tensor x = random_tensor({n_in}, rng);
        Tensor c = random_tensor({n_out}, rng);

        auto loss = [&] {
            Tensor y = layer.forward(x, false);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
            return s;
        };
        layer.weight.zero_grad();
        layer.bias.zero_grad();
        layer.forward(x, true);
        Tensor dx = layer.backward(c);

        worst = std::max(worst, fd_against(x, dx, loss, rng, 64));
        worst = std::max(worst, fd_against(layer.weight.value, layer.weight.grad, loss, rng, 64));
        worst = std::max(worst, fd_against(layer.bias.value, layer.bias.grad, loss, rng, 64));
    }
    return finish("linear", worst, kLayerTol, trials);
}

Result check_relu(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    nn::Relu relu;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t n = 3 + rng.index(8);
        Tensor x = random_tensor({n}, rng);
        // Keep entries away from the kink, where the subgradient choice
        // would dominate the finite difference.
        for (double& v : x.data) {
            if (std::fabs(v) < 0.05) v = (v < 0 ? -0.05 : 0.05);
        }
        Tensor c = random_tensor({n}, rng);
        auto loss = [&] {
            Tensor y = relu.forward(x, false);
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += c[i] * y[i];
            return s;
        };
        relu.forward(x, true);
        Tensor dx = relu.backward(c);
        worst = std::max(worst, fd_against(x, dx, loss, rng, 64));
    }
    return finish("relu", worst, kLayerTol, trials);
}

Result check_conv2d(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t c_in = 1 + rng.index(2);
        const std::size_t c_out = 1 + rng.index(3);
        const std::size_t h = 2 + rng.index(4);
        const std::size_t w = 3 + rng.index(5);
        nn::Conv2d3x3 layer(c_in, c_out, "gc", rng);
        Tensor x = random_tensor({c_in, h, w}, rng);
        Tensor c = random_tensor({c_out, h, w}, rng);

        auto loss = [&] {
            Tensor y = layer.forward(x, false);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += c.data[i] * y.data[i];
            return s;
        };
        layer.kernels.zero_grad();
        layer.bias.zero_grad();
        layer.forward(x, true);
        Tensor dx = layer.backward(c);

        worst = std::max(worst, fd_against(x, dx, loss, rng, 48));
        worst = std::max(worst, fd_against(layer.kernels.value, layer.kernels.grad, loss, rng, 48));
        worst = std::max(worst, fd_against(layer.bias.value, layer.bias.grad, loss, rng, 8));
    }
    return finish("conv2d", worst, kLayerTol, trials);
}

Result check_maxpool(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    nn::MaxPoolRow3 pool;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t ch = 1 + rng.index(2);
        const std::size_t h = 1 + rng.index(4);
        const std::size_t w = 3 + rng.index(9);
        Tensor x = random_tensor({ch, h, w}, rng);
        Tensor c = random_tensor({ch, h, w / 3}, rng);
        auto loss = [&] {
            Tensor y = pool.forward(x, false);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += c.data[i] * y.data[i];
            return s;
        };
        pool.forward(x, true);
        Tensor dx = pool.backward(c);
        worst = std::max(worst, fd_against(x, dx, loss, rng, 64));
    }
    return finish("maxpool", worst, kLayerTol, trials);
}

Result check_lstm(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    constexpr std::size_t kSteps = 4;
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t n_in = 2 + rng.index(4);
        const std::size_t hidden = 2 + rng.index(4);
        nn::LstmCell cell(n_in, hidden, "gc", rng);
        std::vector<Tensor> xs;
        std::vector<Tensor> cs;
        for (std::size_t t = 0; t < kSteps; ++t) {
            xs.push_back(random_tensor({n_in}, rng));
            cs.push_back(random_tensor({hidden}, rng));
        }

        // Loss reads every step's hidden state, exercising the full
        // backprop-through-time chain.
        auto loss = [&] {
            nn::LstmCell::State state = cell.zero_state();
            double s = 0.0;
            for (std::size_t t = 0; t < kSteps; ++t) {
                state = cell.forward(xs[t], state, false);
                for (std::size_t i = 0; i < hidden; ++i) s += cs[t][i] * state.h[i];
            }
            return s;
        };

        cell.w_input.zero_grad();
        cell.w_hidden.zero_grad();
        cell.bias.zero_grad();
        nn::LstmCell::State state = cell.zero_state();
        for (std::size_t t = 0; t < kSteps; ++t) state = cell.forward(xs[t], state, true);

        std::vector<Tensor> dxs(kSteps);
        Tensor dh({hidden});
        Tensor dc({hidden});
        for (std::size_t t = kSteps; t-- > 0;) {
            Tensor dh_total = dh;
            dh_total.add(cs[t]);
            nn::LstmCell::InputGrads g = cell.backward(dh_total, dc);
            dxs[t] = std::move(g.dx);
            dh = std::move(g.dh_prev);
            dc = std::move(g.dc_prev);
        }

        for (std::size_t t = 0; t < kSteps; ++t) {
            worst = std::max(worst, fd_against(xs[t], dxs[t], loss, rng, 16));
        }
        worst = std::max(worst, fd_against(cell.w_input.value, cell.w_input.grad, loss, rng, 32));
        worst = std::max(worst, fd_against(cell.w_hidden.value, cell.w_hidden.grad, loss, rng, 32));
        worst = std::max(worst, fd_against(cell.bias.value, cell.bias.grad, loss, rng, 16));
    }
    return finish("lstm_bptt4", worst, kLayerTol, trials);
}

Result check_softmax_xent(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t n = 2 + rng.index(7);
        Tensor logits = random_tensor({n}, rng, 2.0);
        const std::size_t label = rng.index(n);
        auto loss = [&] { return nn::softmax_xent(logits, label).loss; };
        nn::SoftmaxXent out = nn::softmax_xent(logits, label);
        Tensor grad = nn::softmax_xent_backward(out.probs, label);
        worst = std::max(worst, fd_against(logits, grad, loss, rng, 16));
    }
    return finish("softmax_xent", worst, kLayerTol, trials);
}

Result check_glimpse(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        model::RetinaConfig retina;
        retina.rows = 2 + rng.index(3);
        retina.cols = 2 + rng.index(3);
        retina.scales = 1 + rng.index(2);
        retina.scale_factor = 2;
        const std::size_t branch = 3 + rng.index(5);
        const std::size_t out_dim = 3 + rng.index(5);
        model::GlimpseNetwork net(retina, branch, out_dim, rng);

        model::RetinaPatch patch;
        patch.rows = retina.rows;
        patch.cols = retina.cols;
        patch.scales = retina.scales;
        patch.data.resize(retina.patch_size());
        for (double& v : patch.data) v = rng.normal();
        const model::Location loc{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        Tensor c = random_tensor({out_dim}, rng);

        auto loss = [&] {
            Tensor g = net.forward(patch, loc, false);
            double s = 0.0;
            for (std::size_t i = 0; i < out_dim; ++i) s += c[i] * g[i];
            return s;
        };

        std::vector<ParamSlot*> slots;
        net.collect_params(slots);
        for (ParamSlot* p : slots) p->zero_grad();
        net.forward(patch, loc, true);
        Tensor dpatch = net.backward(c);

        Tensor patch_tensor = Tensor::from({patch.data.size()}, patch.data);
        auto patch_loss = [&] {
            model::RetinaPatch p2 = patch;
            p2.data = patch_tensor.data;
            Tensor g = net.forward(p2, loc, false);
            double s = 0.0;
            for (std::size_t i = 0; i < out_dim; ++i) s += c[i] * g[i];
            return s;
        };
        worst = std::max(worst, fd_against(patch_tensor, dpatch, patch_loss, rng, 32));
        for (ParamSlot* p : slots) {
            worst = std::max(worst, fd_against(p->value, p->grad, loss, rng, 32));
        }
    }
    return finish("glimpse", worst, kLayerTol, trials);
}

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig cfg;
    cfg.frame_rows = 13;
    cfg.frame_cols = 9;
    cfg.n_classes = 2;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 2;
    cfg.retina.rows = 4;
    cfg.retina.cols = 4;
    cfg.retina.scales = 2;
    cfg.retina.scale_factor = 2;
    cfg.glimpse_branch_dim = 6;
    cfg.glimpse_dim = 8;
    cfg.attn_hidden = 8;
    cfg.frame_hidden = 8;
    cfg.glimpses = 2;
    cfg.frames_per_sample = 2;
    cfg.mc_copies = 1;
    cfg.location_variance = 0.22;
    return cfg;
}

frames::Sample random_sample(const model::ModelConfig& cfg, Rng& rng) {
    frames::Sample sample;
    sample.label = rng.index(cfg.n_classes);
    for (std::size_t f = 0; f < cfg.frames_per_sample; ++f) {
        frames::ActivityFrame frame;
        frame.height = cfg.frame_rows;
        frame.width = cfg.frame_cols;
        frame.frame_index = f;
        frame.cells.resize(frame.height * frame.width);
        for (double& v : frame.cells) v = rng.normal();
        sample.frames.push_back(std::move(frame));
    }
    return sample;
}

}  // namespace

Result check_encoder(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    double worst = 0.0;
    model::ModelConfig cfg = tiny_config();
    for (std::size_t trial = 0; trial < trials; ++trial) {
        model::RaafModel net(cfg, rng.split());
        Tensor frame = random_tensor({cfg.frame_rows, cfg.frame_cols}, rng);
        Tensor c = random_tensor({cfg.frame_rows, cfg.frame_cols}, rng);

        auto loss = [&] {
            Tensor y = net.encode_frame(frame, false);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += c.data[i] * y.data[i];
            return s;
        };

        auto params = net.params();
        nn::zero_grads(params);
        net.encode_frame(frame, true);
        Tensor dframe = net.encoder_backward(c);

        worst = std::max(worst, fd_against(frame, dframe, loss, rng, 32));
        // The first six slots are the encoder parameters (conv1, conv2,
        // fully connected, each with weights + bias).
        for (std::size_t i = 0; i < 6; ++i) {
            worst = std::max(worst, fd_against(params[i]->value, params[i]->grad, loss, rng, 24));
        }
    }
    return finish("encoder", worst, kLayerTol, trials);
}

Result check_full_path(std::uint64_t seed, std::size_t trials) {
    Rng rng(seed);
    double worst = 0.0;
    model::ModelConfig cfg = tiny_config();
    for (std::size_t trial = 0; trial < trials; ++trial) {
        model::RaafModel net(cfg, rng.split());
        frames::Sample sample = random_sample(cfg, rng);
        const std::size_t label = sample.label;
        // Two Monte Carlo copies so the reverse-order cache unwinding of
        // the multi-copy backward is exercised as well.
        const std::vector<std::uint64_t> seeds{rng.split(), rng.split()};
        const double n_copies = static_cast<double>(seeds.size());

        // Record locations once, then replay them so the loss is a smooth
        // function of the parameters.
        model::SampleForward ref = net.forward_sample(sample, seeds, false);
        model::LocationPolicy replay;
        replay.mode = model::LocationPolicy::Mode::kReplay;
        replay.replay = &ref.traces;

        auto loss = [&] {
            model::SampleForward f = net.forward_sample(sample, seeds, false, replay);
            double total = 0.0;
            for (const model::EpisodeTrace& trace : f.traces) {
                total += -std::log(trace.scores[label]) / n_copies;
                for (const Tensor& action : trace.frame_actions) {
                    total += cfg.action_loss_weight /
                             (n_copies * static_cast<double>(cfg.frames_per_sample)) *
                             -std::log(action[label]);
                }
            }
            return total;
        };

        auto params = net.params();
        nn::zero_grads(params);
        model::SampleForward fwd = net.forward_sample(sample, seeds, true, replay);
        const std::vector<double> rewards(seeds.size(), 0.0);
        net.backward_sample(fwd, label, rewards, 0.0, 1.0, /*reinforce_enabled=*/false);

        Rng pick(rng.split());
        for (ParamSlot* p : params) {
            worst = std::max(worst, fd_against(p->value, p->grad, loss, pick, 6));
        }
    }
    return finish("full_path", worst, kFullPathTol, trials);
}

std::vector<Result> run_all(std::uint64_t seed, std::size_t trials) {
    std::vector<Result> out;
    out.push_back(check_linear(seed + 1, trials));
    out.push_back(check_relu(seed + 2, trials));
    out.push_back(check_conv2d(seed + 3, trials));
    out.push_back(check_maxpool(seed + 4, trials));
    out.push_back(check_lstm(seed + 5, trials));
    out.push_back(check_softmax_xent(seed + 6, trials));
    out.push_back(check_glimpse(seed + 7, trials));
    out.push_back(check_encoder(seed + 8, trials));
    out.push_back(check_full_path(seed + 9, trials));
    return out;
}

}  // namespace raaf::gradcheck
