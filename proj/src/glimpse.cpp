#include "raaf/glimpse.hpp"

#include <cmath>

#include "raaf/errors.hpp"

namespace raaf::model {

std::size_t location_to_pixel(double coord, std::size_t dim) {
    const double clamped = std::min(1.0, std::max(-1.0, coord));
    const double pos = (clamped + 1.0) / 2.0 * static_cast<double>(dim - 1);
    return static_cast<std::size_t>(std::llround(pos));
}

namespace {

struct CropGeometry {
    std::ptrdiff_t row0, col0;  // top-left of the crop in frame coordinates
    std::size_t span;           // pooling factor k^s
};

CropGeometry crop_geometry(const Tensor& frame, Location loc, const RetinaConfig& cfg,
                           std::size_t scale) {
    std::size_t span = 1;
    for (std::size_t s = 0; s < scale; ++s) span *= cfg.scale_factor;
    const std::size_t crop_rows = cfg.rows * span;
    const std::size_t crop_cols = cfg.cols * span;
    const auto center_r =
        static_cast<std::ptrdiff_t>(location_to_pixel(loc.row, frame.shape[0]));
    const auto center_c =
        static_cast<std::ptrdiff_t>(location_to_pixel(loc.col, frame.shape[1]));
    return CropGeometry{center_r - static_cast<std::ptrdiff_t>(crop_rows / 2),
                        center_c - static_cast<std::ptrdiff_t>(crop_cols / 2), span};
}

void require_retina_inputs(const Tensor& frame, Location loc, const RetinaConfig& cfg) {
    if (frame.rank() != 2) throw ShapeError("retina: expected a 2-D frame");
    if (frame.shape[0] == 0 || frame.shape[1] == 0) throw ShapeError("retina: empty frame");
    if (!std::isfinite(loc.row) || !std::isfinite(loc.col)) {
        throw NumericError("retina: non-finite location");
    }
    if (cfg.rows == 0 || cfg.cols == 0 || cfg.scales == 0 || cfg.scale_factor < 2) {
        throw ConfigError("retina: window, scale count and scale factor must be positive");
    }
}

}  // namespace

RetinaPatch extract_retina(const Tensor& frame, Location loc, const RetinaConfig& cfg) {
    require_retina_inputs(frame, loc, cfg);
    const auto h = static_cast<std::ptrdiff_t>(frame.shape[0]);
    const auto w = static_cast<std::ptrdiff_t>(frame.shape[1]);

    RetinaPatch patch;
    patch.rows = cfg.rows;
    patch.cols = cfg.cols;
    patch.scales = cfg.scales;
    patch.data.assign(cfg.patch_size(), 0.0);

    for (std::size_t s = 0; s < cfg.scales; ++s) {
        const CropGeometry geo = crop_geometry(frame, loc, cfg, s);
        const double inv_area = 1.0 / static_cast<double>(geo.span * geo.span);
        for (std::size_t r = 0; r < cfg.rows; ++r) {
            for (std::size_t c = 0; c < cfg.cols; ++c) {
                double acc = 0.0;
                for (std::size_t u = 0; u < geo.span; ++u) {
                    const std::ptrdiff_t fr = geo.row0 + static_cast<std::ptrdiff_t>(r * geo.span + u);
                    if (fr < 0 || fr >= h) continue;
                    for (std::size_t v = 0; v < geo.span; ++v) {
                        const std::ptrdiff_t fc =
                            geo.col0 + static_cast<std::ptrdiff_t>(c * geo.span + v);
                        if (fc < 0 || fc >= w) continue;
                        acc += frame.at(static_cast<std::size_t>(fr), static_cast<std::size_t>(fc));
                    }
                }
                patch.data[(s * cfg.rows + r) * cfg.cols + c] = acc * inv_area;
            }
        }
    }
    return patch;
}

void retina_backward(const Tensor& dpatch_flat, Location loc, const RetinaConfig& cfg,
                     Tensor& dframe) {
    require_retina_inputs(dframe, loc, cfg);
    if (dpatch_flat.size() != cfg.patch_size()) {
        throw ShapeError("retina backward: patch gradient size mismatch");
    }
    const auto h = static_cast<std::ptrdiff_t>(dframe.shape[0]);
    const auto w = static_cast<std::ptrdiff_t>(dframe.shape[1]);

    for (std::size_t s = 0; s < cfg.scales; ++s) {
        const CropGeometry geo = crop_geometry(dframe, loc, cfg, s);
        const double inv_area = 1.0 / static_cast<double>(geo.span * geo.span);
        for (std::size_t r = 0; r < cfg.rows; ++r) {
            for (std::size_t c = 0; c < cfg.cols; ++c) {
                const double g = dpatch_flat[(s * cfg.rows + r) * cfg.cols + c] * inv_area;
                if (g == 0.0) continue;
                for (std::size_t u = 0; u < geo.span; ++u) {
                    const std::ptrdiff_t fr = geo.row0 + static_cast<std::ptrdiff_t>(r * geo.span + u);
                    if (fr < 0 || fr >= h) continue;
                    for (std::size_t v = 0; v < geo.span; ++v) {
                        const std::ptrdiff_t fc =
                            geo.col0 + static_cast<std::ptrdiff_t>(c * geo.span + v);
                        if (fc < 0 || fc >= w) continue;
                        dframe.at(static_cast<std::size_t>(fr), static_cast<std::size_t>(fc)) += g;
                    }
                }
            }
        }
    }
}

GlimpseNetwork::GlimpseNetwork(const RetinaConfig& retina, std::size_t branch_dim,
                               std::size_t out_dim, Rng& rng)
    : what(retina.patch_size(), branch_dim, "glimpse.what", rng),
      where(2, branch_dim, "glimpse.where", rng),
      fuse(branch_dim, out_dim, "glimpse.fuse", rng) {}

Tensor GlimpseNetwork::forward(const RetinaPatch& patch, Location loc, bool cache) {
    Tensor what_out = what.forward(patch.flat(), cache);
    Tensor where_out = where.forward(Tensor::from({2}, {loc.row, loc.col}), cache);
    what_out.add(where_out);
    return relu.forward(fuse.forward(what_out, cache), cache);
}

Tensor GlimpseNetwork::backward(const Tensor& dg) {
    Tensor dsum = fuse.backward(relu.backward(dg));
    where.backward(dsum);  // location is a constant input; gradient unused
    return what.backward(dsum);
}

void GlimpseNetwork::drop_cache() {
    relu.drop_cache();
    fuse.drop_cache();
    where.drop_cache();
    what.drop_cache();
}

void GlimpseNetwork::collect_params(std::vector<ParamSlot*>& out) {
    out.push_back(&what.weight);
    out.push_back(&what.bias);
    out.push_back(&where.weight);
    out.push_back(&where.bias);
    out.push_back(&fuse.weight);
    out.push_back(&fuse.bias);
}

}  // namespace raaf::model
