#include "raaf/nn.hpp"

#include <algorithm>
#include <cmath>

namespace raaf::nn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_vector(const Tensor& t, std::size_t dim, const std::string& what) {
    if (t.rank() != 1 || t.shape[0] != dim) {
        throw ShapeError(what + ": expected vector of size " + std::to_string(dim));
    }
}

}  // namespace

void init_xavier_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::size_t in_dim, std::size_t out_dim, const std::string& name, Rng& rng)
    : weight(name + ".weight", Tensor({out_dim, in_dim})),
      bias(name + ".bias", Tensor({out_dim})) {
    init_xavier_uniform(weight.value, in_dim, out_dim, rng);
}

Tensor Linear::forward(const Tensor& x, bool cache) {
    require_vector(x, in_dim(), "linear forward");
    const std::size_t n_out = out_dim();
    const std::size_t n_in = in_dim();
    Tensor out({n_out});
    for (std::size_t j = 0; j < n_out; ++j) {
        double acc = bias.value[j];
        const double* row = &weight.value.data[j * n_in];
        for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * x.data[i];
        out[j] = acc;
    }
    if (cache) cached_.push_back(x);
    return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
    if (cached_.empty()) throw StateError(weight.name + ": backward without cached forward");
    require_vector(grad_out, out_dim(), "linear backward");
    Tensor x = std::move(cached_.back());
    cached_.pop_back();

    const std::size_t n_out = out_dim();
    const std::size_t n_in = in_dim();
    Tensor grad_x({n_in});
    for (std::size_t j = 0; j < n_out; ++j) {
        const double g = grad_out[j];
        bias.grad[j] += g;
        double* wg = &weight.grad.data[j * n_in];
        const double* w = &weight.value.data[j * n_in];
        for (std::size_t i = 0; i < n_in; ++i) {
            wg[i] += g * x.data[i];
            grad_x[i] += w[i] * g;
        }
    }
    return grad_x;
}

void Linear::drop_cache() {
    if (cached_.empty()) throw StateError(weight.name + ": drop_cache on empty cache");
    cached_.pop_back();
}

// ---------------------------------------------------------------------------
// Relu

Tensor Relu::forward(const Tensor& x, bool cache) {
    Tensor out = x;
    for (double& v : out.data) v = std::max(v, 0.0);
    if (cache) cached_.push_back(x);
    return out;
}

Tensor Relu::backward(const Tensor& grad_out) {
    if (cached_.empty()) throw StateError("relu: backward without cached forward");
    Tensor x = std::move(cached_.back());
    cached_.pop_back();
    if (!x.same_shape(grad_out)) throw ShapeError("relu backward: shape mismatch");
    Tensor grad = grad_out;
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.data[i] <= 0.0) grad.data[i] = 0.0;
    }
    return grad;
}

void Relu::drop_cache() {
    if (cached_.empty()) throw StateError("relu: drop_cache on empty cache");
    cached_.pop_back();
}

// ---------------------------------------------------------------------------
// Conv2d3x3

Conv2d3x3::Conv2d3x3(std::size_t in_ch, std::size_t out_ch, const std::string& name, Rng& rng)
    : kernels(name + ".kernels", Tensor({out_ch, in_ch, 3, 3})),
      bias(name + ".bias", Tensor({out_ch})) {
    init_xavier_uniform(kernels.value, in_ch * 9, out_ch * 9, rng);
}

Tensor Conv2d3x3::forward(const Tensor& x, bool cache) {
    if (x.rank() != 3 || x.shape[0] != in_channels()) {
        throw ShapeError(kernels.name + ": expected input {" + std::to_string(in_channels()) +
                         ", H, W}");
    }
    const std::size_t c_in = in_channels(), c_out = out_channels();
    const std::size_t h = x.shape[1], w = x.shape[2];
    Tensor out({c_out, h, w});
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                double acc = bias.value[o];
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    for (std::size_t u = 0; u < 3; ++u) {
                        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + u) - 1;
                        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t v = 0; v < 3; ++v) {
                            const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + v) - 1;
                            if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += kernels.value.data[((o * c_in + ci) * 3 + u) * 3 + v] *
                                   x.at(ci, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                        }
                    }
                }
                out.at(o, r, c) = acc;
            }
        }
    }
    if (cache) cached_.push_back(x);
    return out;
}

Tensor Conv2d3x3::backward(const Tensor& grad_out) {
    if (cached_.empty()) throw StateError(kernels.name + ": backward without cached forward");
    Tensor x = std::move(cached_.back());
    cached_.pop_back();
    const std::size_t c_in = in_channels(), c_out = out_channels();
    const std::size_t h = x.shape[1], w = x.shape[2];
    if (grad_out.rank() != 3 || grad_out.shape[0] != c_out || grad_out.shape[1] != h ||
        grad_out.shape[2] != w) {
        throw ShapeError(kernels.name + ": upstream gradient shape mismatch");
    }
    Tensor grad_x({c_in, h, w});
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                const double g = grad_out.at(o, r, c);
                bias.grad[o] += g;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    for (std::size_t u = 0; u < 3; ++u) {
                        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + u) - 1;
                        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t v = 0; v < 3; ++v) {
                            const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + v) - 1;
                            if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t ki = ((o * c_in + ci) * 3 + u) * 3 + v;
                            kernels.grad.data[ki] +=
                                g * x.at(ci, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
                            grad_x.at(ci, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)) +=
                                g * kernels.value.data[ki];
                        }
                    }
                }
            }
        }
    }
    return grad_x;
}

void Conv2d3x3::drop_cache() {
    if (cached_.empty()) throw StateError(kernels.name + ": drop_cache on empty cache");
    cached_.pop_back();
}

// ---------------------------------------------------------------------------
// MaxPoolRow3

Tensor MaxPoolRow3::forward(const Tensor& x, bool cache) {
    if (x.rank() != 3) throw ShapeError("maxpool: expected input {C, H, W}");
    const std::size_t ch = x.shape[0], h = x.shape[1], w = x.shape[2];
    if (w < 3) throw ShapeError("maxpool: width must be at least 3");
    const std::size_t w_out = w / 3;
    Tensor out({ch, h, w_out});
    Cache entry;
    entry.in_shape = x.shape;
    entry.argmax.resize(ch * h * w_out);
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t j = 0; j < w_out; ++j) {
                const std::size_t base = (c * h + r) * w + j * 3;
                std::size_t best = base;
                for (std::size_t k = 1; k < 3; ++k) {
                    if (x.data[base + k] > x.data[best]) best = base + k;
                }
                out.at(c, r, j) = x.data[best];
                entry.argmax[(c * h + r) * w_out + j] = best;
            }
        }
    }
    if (cache) cached_.push_back(std::move(entry));
    return out;
}

Tensor MaxPoolRow3::backward(const Tensor& grad_out) {
    if (cached_.empty()) throw StateError("maxpool: backward without cached forward");
    Cache entry = std::move(cached_.back());
    cached_.pop_back();
    const std::size_t ch = entry.in_shape[0], h = entry.in_shape[1], w = entry.in_shape[2];
    const std::size_t w_out = w / 3;
    if (grad_out.rank() != 3 || grad_out.shape[0] != ch || grad_out.shape[1] != h ||
        grad_out.shape[2] != w_out) {
        throw ShapeError("maxpool backward: upstream gradient shape mismatch");
    }
    Tensor grad_x(entry.in_shape);
    for (std::size_t i = 0; i < entry.argmax.size(); ++i) {
        grad_x.data[entry.argmax[i]] += grad_out.data[i];
    }
    return grad_x;
}

void MaxPoolRow3::drop_cache() {
    if (cached_.empty()) throw StateError("maxpool: drop_cache on empty cache");
    cached_.pop_back();
}

// ---------------------------------------------------------------------------
// LstmCell

LstmCell::LstmCell(std::size_t input_dim, std::size_t hidden_dim, const std::string& name,
                   Rng& rng)
    : w_input(name + ".w_input", Tensor({4 * hidden_dim, input_dim})),
      w_hidden(name + ".w_hidden", Tensor({4 * hidden_dim, hidden_dim})),
      bias(name + ".bias", Tensor({4 * hidden_dim})) {
    init_xavier_uniform(w_input.value, input_dim, hidden_dim, rng);
    init_xavier_uniform(w_hidden.value, hidden_dim, hidden_dim, rng);
    // Forget-gate bias +1 keeps early training from zeroing the cell state.
    for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) bias.value[j] = 1.0;
}

LstmCell::State LstmCell::zero_state() const {
    return State{Tensor({hidden_dim()}), Tensor({hidden_dim()})};
}

LstmCell::State LstmCell::forward(const Tensor& x, const State& prev, bool cache) {
    const std::size_t in = input_dim(), hd = hidden_dim();
    require_vector(x, in, bias.name);
    require_vector(prev.h, hd, bias.name);
    require_vector(prev.c, hd, bias.name);

    Tensor z({4 * hd});
    for (std::size_t j = 0; j < 4 * hd; ++j) {
        double acc = bias.value[j];
        const double* wi = &w_input.value.data[j * in];
        for (std::size_t i = 0; i < in; ++i) acc += wi[i] * x.data[i];
        const double* wh = &w_hidden.value.data[j * hd];
        for (std::size_t i = 0; i < hd; ++i) acc += wh[i] * prev.h.data[i];
        z[j] = acc;
    }

    Cache entry;
    entry.x = x;
    entry.h_prev = prev.h;
    entry.c_prev = prev.c;
    entry.i = Tensor({hd});
    entry.f = Tensor({hd});
    entry.g = Tensor({hd});
    entry.o = Tensor({hd});
    entry.c = Tensor({hd});
    entry.tanh_c = Tensor({hd});

    State out{Tensor({hd}), Tensor({hd})};
    for (std::size_t j = 0; j < hd; ++j) {
        const double ig = sigmoid(z[j]);
        const double fg = sigmoid(z[hd + j]);
        const double gg = std::tanh(z[2 * hd + j]);
        const double og = sigmoid(z[3 * hd + j]);
        const double c = fg * prev.c.data[j] + ig * gg;
        const double tc = std::tanh(c);
        entry.i[j] = ig;
        entry.f[j] = fg;
        entry.g[j] = gg;
        entry.o[j] = og;
        entry.c[j] = c;
        entry.tanh_c[j] = tc;
        out.c[j] = c;
        out.h[j] = og * tc;
    }
    if (cache) cached_.push_back(std::move(entry));
    return out;
}

LstmCell::InputGrads LstmCell::backward(const Tensor& dh, const Tensor& dc) {
    if (cached_.empty()) throw StateError(bias.name + ": backward without cached forward");
    Cache entry = std::move(cached_.back());
    cached_.pop_back();
    const std::size_t in = input_dim(), hd = hidden_dim();
    require_vector(dh, hd, bias.name);
    require_vector(dc, hd, bias.name);

    Tensor dz({4 * hd});
    InputGrads out{Tensor({in}), Tensor({hd}), Tensor({hd})};
    for (std::size_t j = 0; j < hd; ++j) {
        const double i = entry.i[j], f = entry.f[j], g = entry.g[j], o = entry.o[j];
        const double tc = entry.tanh_c[j];
        const double dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
        const double do_ = dh[j] * tc;
        dz[j] = dct * g * i * (1.0 - i);
        dz[hd + j] = dct * entry.c_prev[j] * f * (1.0 - f);
        dz[2 * hd + j] = dct * i * (1.0 - g * g);
        dz[3 * hd + j] = do_ * o * (1.0 - o);
        out.dc_prev[j] = dct * f;
    }

    for (std::size_t j = 0; j < 4 * hd; ++j) {
        const double gz = dz[j];
        bias.grad[j] += gz;
        double* wig = &w_input.grad.data[j * in];
        const double* wi = &w_input.value.data[j * in];
        for (std::size_t k = 0; k < in; ++k) {
            wig[k] += gz * entry.x.data[k];
            out.dx[k] += wi[k] * gz;
        }
        double* whg = &w_hidden.grad.data[j * hd];
        const double* wh = &w_hidden.value.data[j * hd];
        for (std::size_t k = 0; k < hd; ++k) {
            whg[k] += gz * entry.h_prev.data[k];
            out.dh_prev[k] += wh[k] * gz;
        }
    }
    return out;
}

void LstmCell::drop_cache() {
    if (cached_.empty()) throw StateError(bias.name + ": drop_cache on empty cache");
    cached_.pop_back();
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1) throw ShapeError("softmax: expected a vector");
    Tensor probs({logits.shape[0]});
    double maxv = logits[0];
    for (double v : logits.data) maxv = std::max(maxv, v);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - maxv);
        denom += probs[i];
    }
    for (double& p : probs.data) p /= denom;
    return probs;
}

SoftmaxXent softmax_xent(const Tensor& logits, std::size_t true_class) {
    if (logits.rank() != 1) throw ShapeError("softmax_xent: expected a vector");
    if (true_class >= logits.shape[0]) {
        throw ConfigError("softmax_xent: class index " + std::to_string(true_class) +
                          " out of range for " + std::to_string(logits.shape[0]) + " classes");
    }
    double maxv = logits[0];
    for (double v : logits.data) maxv = std::max(maxv, v);
    double denom = 0.0;
    for (double v : logits.data) denom += std::exp(v - maxv);

    SoftmaxXent out;
    out.probs = Tensor({logits.shape[0]});
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out.probs[i] = std::exp(logits[i] - maxv) / denom;
    }
    out.loss = std::log(denom) - (logits[true_class] - maxv);
    return out;
}

Tensor softmax_xent_backward(const Tensor& probs, std::size_t true_class, double upstream) {
    if (true_class >= probs.shape[0]) throw ConfigError("softmax_xent backward: class out of range");
    Tensor grad = probs;
    grad[true_class] -= 1.0;
    grad.scale(upstream);
    return grad;
}

// ---------------------------------------------------------------------------
// SgdMomentum

void SgdMomentum::step(const std::vector<ParamSlot*>& params) {
    if (bound_.empty()) {
        bound_.assign(params.begin(), params.end());
        velocity_.reserve(params.size());
        for (const ParamSlot* p : params) velocity_.emplace_back(p->value.shape, 0.0);
    } else if (bound_.size() != params.size()) {
        throw StateError("sgd: parameter list changed between steps");
    }

    for (std::size_t n = 0; n < params.size(); ++n) {
        ParamSlot& p = *params[n];
        if (bound_[n] != params[n]) throw StateError("sgd: parameter list changed between steps");
        if (!p.grad.all_finite()) {
            throw NumericError("non-finite gradient in parameter '" + p.name + "'");
        }
        double norm = p.grad.l2_norm();
        if (clip_ > 0.0 && norm > clip_) {
            p.grad.scale(clip_ / norm);
        }
        Tensor& v = velocity_[n];
        for (std::size_t i = 0; i < v.size(); ++i) {
            v.data[i] = momentum_ * v.data[i] - lr_ * p.grad.data[i];
            p.value.data[i] += v.data[i];
        }
    }
}

void zero_grads(const std::vector<ParamSlot*>& params) {
    for (ParamSlot* p : params) p->zero_grad();
}

}  // namespace raaf::nn
