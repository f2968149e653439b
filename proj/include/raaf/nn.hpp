#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "raaf/tensor.hpp"

namespace raaf::nn {

/// Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
void init_xavier_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Fully connected layer: out = W x + b, W is {out_dim, in_dim}.
///
/// forward(x, cache=true) pushes the input onto an internal stack so that
/// backward passes can be run in LIFO order (required for BPTT). backward
/// pops one cached input, accumulates into weight.grad / bias.grad and
/// returns the gradient w.r.t. the input.
class Linear {
public:
    Linear(std::size_t in_dim, std::size_t out_dim, const std::string& name, Rng& rng);

    Tensor forward(const Tensor& x, bool cache = true);
    Tensor backward(const Tensor& grad_out);
    void drop_cache();

    std::size_t in_dim() const { return weight.value.shape[1]; }
    std::size_t out_dim() const { return weight.value.shape[0]; }

    ParamSlot weight;
    ParamSlot bias;

private:
    std::vector<Tensor> cached_;
};

class Relu {
public:
    Tensor forward(const Tensor& x, bool cache = true);
    Tensor backward(const Tensor& grad_out);
    void drop_cache();

private:
    std::vector<Tensor> cached_;
};

/// 3x3 cross-correlation with zero padding 1; spatial size is preserved.
/// Input {C_in, H, W}, output {C_out, H, W}.
class Conv2d3x3 {
public:
    Conv2d3x3(std::size_t in_ch, std::size_t out_ch, const std::string& name, Rng& rng);

    Tensor forward(const Tensor& x, bool cache = true);
    Tensor backward(const Tensor& grad_out);
    void drop_cache();

    std::size_t in_channels() const { return kernels.value.shape[1]; }
    std::size_t out_channels() const { return kernels.value.shape[0]; }

    ParamSlot kernels;  // {C_out, C_in, 3, 3}
    ParamSlot bias;     // {C_out}

private:
    std::vector<Tensor> cached_;
};

/// Max pooling with a 1x3 window and 1x3 stride over the width axis.
/// Columns past the last full window are dropped. Ties route the gradient
/// to the lowest-index maximal element.
class MaxPoolRow3 {
public:
    Tensor forward(const Tensor& x, bool cache = true);
    Tensor backward(const Tensor& grad_out);
    void drop_cache();

private:
    struct Cache {
        std::vector<std::size_t> in_shape;
        std::vector<std::size_t> argmax;  // flat input index per output cell
    };
    std::vector<Cache> cached_;
};

/// Standard LSTM cell. Gate order in the stacked weights is i, f, g, o;
/// the forget-gate bias slice is initialised to +1.
class LstmCell {
public:
    struct State {
        Tensor h;
        Tensor c;
    };
    struct InputGrads {
        Tensor dx;
        Tensor dh_prev;
        Tensor dc_prev;
    };

    LstmCell(std::size_t input_dim, std::size_t hidden_dim, const std::string& name, Rng& rng);

    State forward(const Tensor& x, const State& prev, bool cache = true);
    /// One step of backprop through time. dh/dc are gradients w.r.t. this
    /// step's outputs; the returned dh_prev/dc_prev feed the previous step.
    InputGrads backward(const Tensor& dh, const Tensor& dc);
    void drop_cache();

    State zero_state() const;
    std::size_t input_dim() const { return w_input.value.shape[1]; }
    std::size_t hidden_dim() const { return w_hidden.value.shape[1]; }

    ParamSlot w_input;   // {4H, input_dim}
    ParamSlot w_hidden;  // {4H, H}
    ParamSlot bias;      // {4H}

private:
    struct Cache {
        Tensor x, h_prev, c_prev;
        Tensor i, f, g, o;  // post-activation gates
        Tensor c, tanh_c;
    };
    std::vector<Cache> cached_;
};

struct SoftmaxXent {
    Tensor probs;
    double loss = 0.0;
};

/// Numerically stabilised softmax + cross-entropy against one true class.
SoftmaxXent softmax_xent(const Tensor& logits, std::size_t true_class);

/// grad_logits = probs - onehot(true_class), scaled by upstream.
Tensor softmax_xent_backward(const Tensor& probs, std::size_t true_class, double upstream = 1.0);

Tensor softmax(const Tensor& logits);

/// SGD with momentum: v <- mu v - lr g; value += v. Gradients whose
/// per-tensor L2 norm exceeds grad_clip are rescaled to the clip norm
/// before the step. Throws NumericError naming the parameter if a
/// gradient is non-finite.
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum, double grad_clip)
        : lr_(lr), momentum_(momentum), clip_(grad_clip) {}

    void step(const std::vector<ParamSlot*>& params);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_;
    double momentum_;
    double clip_;
    std::vector<Tensor> velocity_;
    std::vector<const ParamSlot*> bound_;
};

void zero_grads(const std::vector<ParamSlot*>& params);

}  // namespace raaf::nn
