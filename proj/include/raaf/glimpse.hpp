#pragma once

#include <cstddef>
#include <vector>

#include "raaf/nn.hpp"
#include "raaf/tensor.hpp"

namespace raaf::model {

/// Normalized frame coordinates in [-1, 1] per axis; (-1, -1) is the
/// top-left cell.
struct Location {
    double row = 0.0;
    double col = 0.0;
};

/// Maps a normalized coordinate to a pixel index: (coord+1)/2 * (dim-1),
/// rounded half away from zero.
std::size_t location_to_pixel(double coord, std::size_t dim);

struct RetinaConfig {
    std::size_t rows = 64;      // base window height
    std::size_t cols = 16;      // base window width
    std::size_t scales = 3;     // patches stacked high-res first
    std::size_t scale_factor = 2;

    std::size_t patch_size() const { return rows * cols * scales; }
};

/// Multi-resolution crop around a location: scale s covers a
/// (rows*k^s) x (cols*k^s) area, zero-filled outside the frame, then
/// average-pooled by k^s back to the base window size.
struct RetinaPatch {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t scales = 0;
    std::vector<double> data;  // [scale][row][col]

    double at(std::size_t s, std::size_t r, std::size_t c) const {
        return data[(s * rows + r) * cols + c];
    }
    Tensor flat() const { return Tensor::from({data.size()}, data); }
};

RetinaPatch extract_retina(const Tensor& frame, Location loc, const RetinaConfig& config);

/// Scatters the gradient w.r.t. the flattened patch back into the frame.
/// Out-of-frame (zero-filled) cells absorb nothing.
void retina_backward(const Tensor& dpatch_flat, Location loc, const RetinaConfig& config,
                     Tensor& dframe);

/// Fuses "what" (the retina patch) and "where" (the location) into one
/// feature vector: relu(Linear(Linear(patch) + Linear(location))).
class GlimpseNetwork {
public:
    GlimpseNetwork(const RetinaConfig& retina, std::size_t branch_dim, std::size_t out_dim,
                   Rng& rng);

    Tensor forward(const RetinaPatch& patch, Location loc, bool cache = true);
    /// Returns the gradient w.r.t. the flattened retina patch. The location
    /// input is a sampled constant, so its gradient is discarded.
    Tensor backward(const Tensor& dg);
    void drop_cache();

    std::size_t out_dim() const { return fuse.out_dim(); }
    void collect_params(std::vector<ParamSlot*>& out);

    nn::Linear what;   // flattened patch -> branch_dim
    nn::Linear where;  // (row, col) -> branch_dim
    nn::Linear fuse;   // branch_dim -> out_dim
    nn::Relu relu;
};

}  // namespace raaf::model
