#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "raaf/errors.hpp"

namespace raaf {

/// Dense row-major tensor of 64-bit floats. The shape is fixed at
/// construction; product(shape) always equals data.size().
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
        : shape(std::move(dims)), data(count(shape), fill) {}

    static Tensor from(std::vector<std::size_t> dims, std::vector<double> values) {
        Tensor t;
        if (count(dims) != values.size()) {
            throw ShapeError("tensor: value count does not match shape");
        }
        t.shape = std::move(dims);
        t.data = std::move(values);
        return t;
    }

    static std::size_t count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2-D access, shape {rows, cols}
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    // 3-D access, shape {channels, rows, cols}
    double& at(std::size_t ch, std::size_t r, std::size_t c) {
        return data[(ch * shape[1] + r) * shape[2] + c];
    }
    double at(std::size_t ch, std::size_t r, std::size_t c) const {
        return data[(ch * shape[1] + r) * shape[2] + c];
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    double l2_norm() const {
        double s = 0.0;
        for (double v : data) s += v * v;
        return std::sqrt(s);
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    void add(const Tensor& other) {
        if (!same_shape(other)) throw ShapeError("tensor add: shape mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    }

    void scale(double s) {
        for (double& v : data) v *= s;
    }
};

/// A trainable parameter: value plus accumulated gradient of the same shape.
struct ParamSlot {
    Tensor value;
    Tensor grad;
    std::string name;

    ParamSlot() = default;
    ParamSlot(std::string name_, Tensor init)
        : value(std::move(init)), grad(value.shape, 0.0), name(std::move(name_)) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Deterministic 64-bit-seedable generator. The uniform and normal
/// transforms are implemented here so identical seeds give identical
/// sample streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (cosine branch only).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    /// Unbiased integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw ConfigError("rng: index range must be positive");
        std::uint64_t bound = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= bound);
        return static_cast<std::size_t>(x % n);
    }

    /// Seed for an independent child stream.
    std::uint64_t split() {
        std::uint64_t z = gen_() + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    static constexpr double kTwoPi = 6.283185307179586476925286766559;
    std::mt19937_64 gen_;
};

}  // namespace raaf
