#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raaf/tensor.hpp"

namespace raaf::gradcheck {

struct Result {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    std::size_t trials = 0;
    bool pass = false;
};

/// Central finite differences with h = 1e-5 against the hand-derived
/// backward passes, over randomized small shapes. Relative error uses
/// max(|analytic|, |numeric|, 1e-3) as the denominator.
Result check_linear(std::uint64_t seed, std::size_t trials);
Result check_relu(std::uint64_t seed, std::size_t trials);
Result check_conv2d(std::uint64_t seed, std::size_t trials);
Result check_maxpool(std::uint64_t seed, std::size_t trials);
Result check_lstm(std::uint64_t seed, std::size_t trials);
Result check_softmax_xent(std::uint64_t seed, std::size_t trials);
Result check_glimpse(std::uint64_t seed, std::size_t trials);
Result check_encoder(std::uint64_t seed, std::size_t trials);
/// Full classification path on a tiny config with replayed (frozen)
/// locations; tolerance 1e-3.
Result check_full_path(std::uint64_t seed, std::size_t trials);

std::vector<Result> run_all(std::uint64_t seed, std::size_t trials = 100);

}  // namespace raaf::gradcheck
