#include <doctest.h>

#include <cmath>

#include "raaf/glimpse.hpp"
#include "raaf/gradcheck.hpp"

using namespace raaf;
using namespace raaf::model;

namespace {

Tensor counting_frame(std::size_t h, std::size_t w) {
    Tensor frame({h, w});
    for (std::size_t i = 0; i < frame.size(); ++i) frame.data[i] = static_cast<double>(i);
    return frame;
}

// Normalized coordinate that maps exactly onto a pixel index.
double pixel_coord(std::size_t px, std::size_t dim) {
    return 2.0 * static_cast<double>(px) / static_cast<double>(dim - 1) - 1.0;
}

}  // namespace

TEST_CASE("centre location lands on the middle cell of an odd frame") {
    Tensor frame = counting_frame(7, 5);
    RetinaConfig cfg{3, 3, 1, 2};
    RetinaPatch patch = extract_retina(frame, Location{0.0, 0.0}, cfg);
    // centre pixel is (3, 2); the 3x3 window covers rows 2..4, cols 1..3
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(patch.at(0, r, c) == frame.at(2 + r, 1 + c));
        }
    }
}

TEST_CASE("corner location zero-fills the overhang") {
    Tensor frame = counting_frame(5, 5);
    RetinaConfig cfg{4, 4, 1, 2};
    RetinaPatch patch = extract_retina(frame, Location{-1.0, -1.0}, cfg);
    // centre pixel (0,0); window starts at (-2,-2): top-left 2x2 block is
    // outside the frame.
    CHECK(patch.at(0, 0, 0) == 0.0);
    CHECK(patch.at(0, 0, 1) == 0.0);
    CHECK(patch.at(0, 1, 0) == 0.0);
    CHECK(patch.at(0, 2, 2) == frame.at(0, 0));
    CHECK(patch.at(0, 3, 3) == frame.at(1, 1));
}

TEST_CASE("coarser scales equal block means from a brute-force oracle") {
    Tensor frame = counting_frame(12, 10);
    RetinaConfig cfg{4, 4, 2, 2};
    const Location loc{pixel_coord(6, 12), pixel_coord(5, 10)};
    RetinaPatch patch = extract_retina(frame, loc, cfg);

    // Scale 1 covers an 8x8 crop centred at (6,5): rows 2..9, cols 1..8,
    // pooled by 2x2 block means.
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (std::size_t u = 0; u < 2; ++u) {
                for (std::size_t v = 0; v < 2; ++v) {
                    acc += frame.at(2 + 2 * r + u, 1 + 2 * c + v);
                }
            }
            CHECK(patch.at(1, r, c) == doctest::Approx(acc / 4.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("retina output dims are location-independent") {
    Tensor frame = counting_frame(9, 7);
    RetinaConfig cfg{6, 4, 3, 2};
    for (double r : {-1.0, -0.3, 0.0, 0.9, 1.0}) {
        for (double c : {-1.0, 0.0, 1.0}) {
            RetinaPatch patch = extract_retina(frame, Location{r, c}, cfg);
            CHECK(patch.rows == 6);
            CHECK(patch.cols == 4);
            CHECK(patch.scales == 3);
            CHECK(patch.data.size() == cfg.patch_size());
        }
    }
}

TEST_CASE("translation consistency at scale zero") {
    RetinaConfig cfg{3, 3, 1, 2};
    Tensor frame({11, 9});
    Rng rng(3);
    // a small pattern away from the borders
    for (std::size_t r = 3; r < 6; ++r) {
        for (std::size_t c = 3; c < 6; ++c) frame.at(r, c) = rng.normal();
    }
    Tensor shifted({11, 9});
    for (std::size_t r = 3; r < 6; ++r) {
        for (std::size_t c = 3; c < 6; ++c) shifted.at(r + 2, c + 1) = frame.at(r, c);
    }
    RetinaPatch a = extract_retina(frame, Location{pixel_coord(4, 11), pixel_coord(4, 9)}, cfg);
    RetinaPatch b = extract_retina(shifted, Location{pixel_coord(6, 11), pixel_coord(5, 9)}, cfg);
    CHECK(a.data == b.data);
}

TEST_CASE("non-finite locations are rejected") {
    Tensor frame = counting_frame(5, 5);
    RetinaConfig cfg{3, 3, 1, 2};
    CHECK_THROWS_AS(extract_retina(frame, Location{std::nan(""), 0.0}, cfg), NumericError);
}

TEST_CASE("retina backward scatters pooled gradients into covered cells") {
    RetinaConfig cfg{2, 2, 2, 2};
    Tensor frame = counting_frame(8, 8);
    const Location loc{pixel_coord(4, 8), pixel_coord(4, 8)};

    Tensor dpatch({cfg.patch_size()}, 0.0);
    dpatch[cfg.rows * cfg.cols] = 4.0;  // scale-1 cell (0,0), pooled from 2x2
    Tensor dframe({8, 8});
    retina_backward(dpatch, loc, cfg, dframe);
    // scale 1 covers rows 2..5, cols 2..5; its cell (0,0) covers rows 2..3,
    // cols 2..3 with weight 1/4 each.
    CHECK(dframe.at(2, 2) == 1.0);
    CHECK(dframe.at(2, 3) == 1.0);
    CHECK(dframe.at(3, 2) == 1.0);
    CHECK(dframe.at(3, 3) == 1.0);
    double total = 0.0;
    for (double v : dframe.data) total += v;
    CHECK(total == 4.0);
}

TEST_CASE("glimpse with zero weights reduces to the fused bias") {
    Rng rng(5);
    RetinaConfig cfg{3, 2, 1, 2};
    GlimpseNetwork net(cfg, 4, 6, rng);
    net.what.weight.value.fill(0.0);
    net.where.weight.value.fill(0.0);
    net.fuse.weight.value.fill(0.0);

    RetinaPatch patch;
    patch.rows = 3;
    patch.cols = 2;
    patch.scales = 1;
    patch.data.assign(6, 1.23);

    Tensor a = net.forward(patch, Location{-0.7, 0.2}, false);
    Tensor b = net.forward(patch, Location{0.9, -0.4}, false);
    CHECK(a.data == b.data);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(a[i] == std::max(net.fuse.bias.value[i], 0.0));
    }
}

TEST_CASE("the where pathway is live: same content, different location, different output") {
    Rng rng(6);
    RetinaConfig cfg{3, 3, 1, 2};
    GlimpseNetwork net(cfg, 8, 10, rng);

    Tensor frame({15, 15}, 0.5);  // constant frame: interior patches identical
    RetinaPatch p1 = extract_retina(frame, Location{-0.2, 0.0}, cfg);
    RetinaPatch p2 = extract_retina(frame, Location{0.3, 0.1}, cfg);
    CHECK(p1.data == p2.data);

    Tensor g1 = net.forward(p1, Location{-0.2, 0.0}, false);
    Tensor g2 = net.forward(p2, Location{0.3, 0.1}, false);
    CHECK(g1.data != g2.data);
}

TEST_CASE("zero frame gives zero retina and the bias-only glimpse pathway") {
    Rng rng(7);
    RetinaConfig cfg{4, 3, 2, 2};
    Tensor frame({13, 9}, 0.0);
    const Location loc{0.4, -0.6};
    RetinaPatch patch = extract_retina(frame, loc, cfg);
    for (double v : patch.data) CHECK(v == 0.0);

    GlimpseNetwork net(cfg, 5, 7, rng);
    Tensor g = net.forward(patch, loc, false);
    // expected: relu(fuse(b_what + where(loc)))
    Tensor where_out = net.where.forward(Tensor::from({2}, {loc.row, loc.col}), false);
    Tensor sum = net.what.bias.value;
    sum.add(where_out);
    Tensor expected = net.fuse.forward(sum, false);
    for (double& v : expected.data) v = std::max(v, 0.0);
    CHECK(g.data == expected.data);
}

TEST_CASE("glimpse gradients match finite differences through both branches") {
    auto r = gradcheck::check_glimpse(71, 20);
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("glimpse forward is stateless across call order") {
    Rng rng(8);
    RetinaConfig cfg{3, 3, 1, 2};
    GlimpseNetwork net(cfg, 6, 6, rng);
    Tensor frame = counting_frame(9, 9);

    RetinaPatch pa = extract_retina(frame, Location{0.1, 0.2}, cfg);
    RetinaPatch pb = extract_retina(frame, Location{-0.5, 0.7}, cfg);
    Tensor a_first = net.forward(pa, Location{0.1, 0.2}, false);
    Tensor b_then = net.forward(pb, Location{-0.5, 0.7}, false);
    Tensor b_first = net.forward(pb, Location{-0.5, 0.7}, false);
    Tensor a_then = net.forward(pa, Location{0.1, 0.2}, false);
    CHECK(a_first.data == a_then.data);
    CHECK(b_first.data == b_then.data);
}
