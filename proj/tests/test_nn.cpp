#include <doctest.h>

#include <cmath>

#include "raaf/gradcheck.hpp"
#include "raaf/nn.hpp"

using namespace raaf;

namespace {

nn::Linear make_linear(std::size_t in, std::size_t out, std::uint64_t seed = 11) {
    Rng rng(seed);
    return nn::Linear(in, out, "t", rng);
}

}  // namespace

TEST_CASE("linear forward: identity weights pass the input through") {
    nn::Linear layer = make_linear(2, 2);
    layer.weight.value = Tensor::from({2, 2}, {1, 0, 0, 1});
    layer.bias.value.fill(0.0);
    Tensor y = layer.forward(Tensor::from({2}, {3.0, -1.0}), false);
    CHECK(y[0] == 3.0);
    CHECK(y[1] == -1.0);
}

TEST_CASE("linear forward: zero weights leave only the bias") {
    nn::Linear layer = make_linear(3, 1);
    layer.weight.value.fill(0.0);
    layer.bias.value[0] = 5.0;
    Tensor y = layer.forward(Tensor::from({3}, {9.0, -2.0, 0.5}), false);
    CHECK(y[0] == 5.0);
}

TEST_CASE("linear forward matches a naive triple-loop oracle") {
    Rng rng(3);
    nn::Linear layer(4, 3, "t", rng);
    Tensor x = Tensor::from({4}, {0.3, -1.2, 2.0, 0.7});
    Tensor y = layer.forward(x, false);
    for (std::size_t j = 0; j < 3; ++j) {
        double expect = layer.bias.value[j];
        for (std::size_t i = 0; i < 4; ++i) expect += layer.weight.value.at(j, i) * x[i];
        CHECK(std::fabs(y[j] - expect) < 1e-12);
    }
}

TEST_CASE("linear forward is bitwise deterministic") {
    nn::Linear layer = make_linear(5, 4, 17);
    Tensor x = Tensor::from({5}, {0.1, 0.2, -0.3, 0.4, 1.0});
    Tensor a = layer.forward(x, false);
    Tensor b = layer.forward(x, false);
    CHECK(a.data == b.data);
}

TEST_CASE("linear backward: finite differences on a 5->4 layer") {
    auto r = gradcheck::check_linear(21, 20);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("linear backward: zero upstream gradient leaves zero gradients") {
    nn::Linear layer = make_linear(3, 2);
    layer.forward(Tensor::from({3}, {1.0, 2.0, 3.0}), true);
    Tensor dx = layer.backward(Tensor({2}, 0.0));
    for (double v : dx.data) CHECK(v == 0.0);
    for (double v : layer.weight.grad.data) CHECK(v == 0.0);
    for (double v : layer.bias.grad.data) CHECK(v == 0.0);
}

TEST_CASE("gradient accumulation is exactly additive") {
    nn::Linear layer = make_linear(3, 2);
    Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5});
    Tensor up = Tensor::from({2}, {0.7, -0.4});

    layer.forward(x, true);
    layer.backward(up);
    Tensor once_w = layer.weight.grad;
    Tensor once_b = layer.bias.grad;

    layer.forward(x, true);
    layer.backward(up);
    for (std::size_t i = 0; i < once_w.size(); ++i) {
        CHECK(layer.weight.grad.data[i] == 2.0 * once_w.data[i]);
    }
    for (std::size_t i = 0; i < once_b.size(); ++i) {
        CHECK(layer.bias.grad.data[i] == 2.0 * once_b.data[i]);
    }
}

TEST_CASE("linear errors: shape mismatch and missing cache") {
    nn::Linear layer = make_linear(3, 2);
    CHECK_THROWS_AS(layer.forward(Tensor({4}, 0.0), false), ShapeError);
    CHECK_THROWS_AS(layer.backward(Tensor({2}, 0.0)), StateError);
}

TEST_CASE("relu forward and backward") {
    nn::Relu relu;
    Tensor y = relu.forward(Tensor::from({3}, {-1.0, 0.0, 2.0}), false);
    CHECK(y.data == std::vector<double>{0.0, 0.0, 2.0});

    Tensor x = Tensor::from({4}, {-3.0, -0.5, -1e-9, -100.0});
    relu.forward(x, true);
    Tensor dx = relu.backward(Tensor({4}, 1.0));
    for (double v : dx.data) CHECK(v == 0.0);

    auto r = gradcheck::check_relu(31, 20);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("conv2d: centered delta kernel reproduces the input") {
    Rng rng(5);
    nn::Conv2d3x3 conv(1, 1, "t", rng);
    conv.kernels.value.fill(0.0);
    conv.kernels.value.data[4] = 1.0;  // centre of the 3x3 kernel
    conv.bias.value.fill(0.0);
    Tensor x({1, 4, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.37 * static_cast<double>(i) - 1.0;
    Tensor y = conv.forward(x, false);
    CHECK(y.data == x.data);
}

TEST_CASE("conv2d: all-ones kernel on all-ones input counts the padded window") {
    Rng rng(5);
    nn::Conv2d3x3 conv(1, 1, "t", rng);
    conv.kernels.value.fill(1.0);
    conv.bias.value.fill(0.0);
    Tensor y = conv.forward(Tensor({1, 3, 3}, 1.0), false);
    CHECK(y.at(0, 1, 1) == 9.0);
    CHECK(y.at(0, 0, 0) == 4.0);
    CHECK(y.at(0, 0, 2) == 4.0);
    CHECK(y.at(0, 2, 0) == 4.0);
    CHECK(y.at(0, 0, 1) == 6.0);
}

TEST_CASE("conv2d backward: finite differences on a 2x5x7 input, 3 output channels") {
    auto r = gradcheck::check_conv2d(41, 15);
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("maxpool: direct window maxima") {
    nn::MaxPoolRow3 pool;
    Tensor x = Tensor::from({1, 1, 6}, {1, 5, 2, 0, 0, 7});
    Tensor y = pool.forward(x, false);
    CHECK(y.data == std::vector<double>{5.0, 7.0});
}

TEST_CASE("maxpool: constant input routes gradient to the first window element") {
    nn::MaxPoolRow3 pool;
    Tensor x({1, 1, 6}, 3.0);
    Tensor y = pool.forward(x, true);
    CHECK(y.data == std::vector<double>{3.0, 3.0});
    Tensor dx = pool.backward(Tensor::from({1, 1, 2}, {1.0, 2.0}));
    CHECK(dx.data == std::vector<double>{1.0, 0.0, 0.0, 2.0, 0.0, 0.0});
}

TEST_CASE("maxpool matches a brute-force window-max oracle") {
    Rng rng(9);
    nn::MaxPoolRow3 pool;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t w = 3 + rng.index(28);
        Tensor x({1, 2, w});
        for (double& v : x.data) v = rng.normal();
        Tensor y = pool.forward(x, false);
        for (std::size_t r = 0; r < 2; ++r) {
            for (std::size_t j = 0; j < w / 3; ++j) {
                double best = x.at(0, r, 3 * j);
                for (std::size_t k = 1; k < 3; ++k) best = std::max(best, x.at(0, r, 3 * j + k));
                CHECK(y.at(0, r, j) == best);
            }
        }
    }
    CHECK_THROWS_AS(pool.forward(Tensor({1, 1, 2}, 0.0), false), ShapeError);
}

TEST_CASE("lstm cell: zero parameters and zero state give zero outputs") {
    Rng rng(3);
    nn::LstmCell cell(3, 4, "t", rng);
    cell.w_input.value.fill(0.0);
    cell.w_hidden.value.fill(0.0);
    cell.bias.value.fill(0.0);
    auto out = cell.forward(Tensor({3}, 1.0), cell.zero_state(), false);
    for (double v : out.h.data) CHECK(v == 0.0);
    for (double v : out.c.data) CHECK(v == 0.0);
}

TEST_CASE("lstm cell: saturated forget gate carries the cell state") {
    Rng rng(3);
    nn::LstmCell cell(2, 3, "t", rng);
    cell.w_input.value.fill(0.0);
    cell.w_hidden.value.fill(0.0);
    cell.bias.value.fill(0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        cell.bias.value[3 + j] = 10.0;   // forget gate ~ 1
        cell.bias.value[j] = -20.0;      // input gate ~ 0
    }
    nn::LstmCell::State prev{Tensor({3}, 0.0), Tensor::from({3}, {0.5, -1.0, 2.0})};
    auto out = cell.forward(Tensor({2}, 0.3), prev, false);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::fabs(out.c[j] - prev.c[j]) < 1e-3);
    }
}

TEST_CASE("lstm backward through 4 steps matches finite differences") {
    auto r = gradcheck::check_lstm(51, 15);
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("softmax cross-entropy") {
    SUBCASE("uniform logits give the uniform distribution") {
        auto out = nn::softmax_xent(Tensor({3}, 0.0), 1);
        for (double p : out.probs.data) CHECK(p == doctest::Approx(1.0 / 3.0));
        CHECK(out.loss == doctest::Approx(std::log(3.0)));
    }
    SUBCASE("extreme logits do not overflow") {
        auto out = nn::softmax_xent(Tensor::from({2}, {1000.0, 0.0}), 0);
        CHECK(out.probs[0] == doctest::Approx(1.0));
        CHECK(out.probs[1] == doctest::Approx(0.0));
        CHECK(std::isfinite(out.loss));
    }
    SUBCASE("probabilities form a simplex point") {
        Rng rng(13);
        for (int trial = 0; trial < 100; ++trial) {
            Tensor logits({6});
            for (double& v : logits.data) v = 4.0 * rng.normal();
            Tensor p = nn::softmax(logits);
            double sum = 0.0;
            for (double v : p.data) {
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
    SUBCASE("adding a constant to the logits keeps the distribution") {
        Tensor logits = Tensor::from({4}, {0.3, -1.0, 2.5, 0.9});
        Tensor shifted = logits;
        for (double& v : shifted.data) v += 7.0;
        Tensor a = nn::softmax(logits);
        Tensor b = nn::softmax(shifted);
        for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
    SUBCASE("gradient matches finite differences") {
        auto r = gradcheck::check_softmax_xent(61, 30);
        CHECK(r.max_rel_err < 1e-6);
    }
    SUBCASE("class index out of range") {
        CHECK_THROWS_AS(nn::softmax_xent(Tensor({3}, 0.0), 3), ConfigError);
    }
}

TEST_CASE("sgd with momentum") {
    SUBCASE("plain step decreases by lr * grad") {
        ParamSlot p("p", Tensor({1}, 10.0));
        p.grad[0] = 2.0;
        nn::SgdMomentum opt(1.0, 0.0, 0.0);
        opt.step({&p});
        CHECK(p.value[0] == 8.0);
    }
    SUBCASE("gradient clipping rescales to the clip norm") {
        ParamSlot p("p", Tensor({2}, 0.0));
        p.grad = Tensor::from({2}, {6.0, 8.0});  // norm 10
        nn::SgdMomentum opt(1.0, 0.0, 1.0);
        opt.step({&p});
        CHECK(p.value[0] == doctest::Approx(-0.6));
        CHECK(p.value[1] == doctest::Approx(-0.8));
    }
    SUBCASE("two steps match the hand-unrolled velocity recurrence") {
        const double lr = 0.1, mu = 0.9;
        ParamSlot p("p", Tensor({1}, 1.0));
        nn::SgdMomentum opt(lr, mu, 0.0);
        p.grad[0] = 0.5;
        opt.step({&p});
        const double v1 = -lr * 0.5;
        CHECK(p.value[0] == doctest::Approx(1.0 + v1));
        p.zero_grad();
        p.grad[0] = -0.25;
        opt.step({&p});
        const double v2 = mu * v1 - lr * (-0.25);
        CHECK(p.value[0] == doctest::Approx(1.0 + v1 + v2));
    }
    SUBCASE("non-finite gradient names the parameter") {
        ParamSlot p("layer.weight", Tensor({1}, 0.0));
        p.grad[0] = std::nan("");
        nn::SgdMomentum opt(0.1, 0.9, 5.0);
        try {
            opt.step({&p});
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
        }
    }
}
