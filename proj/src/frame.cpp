#include "raaf/frame.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "raaf/errors.hpp"

namespace raaf::frames {

namespace {

// Axis layout of the two expansion templates.
constexpr std::size_t kOddAxes[9] = {0, 1, 2, 0, 1, 2, 0, 1, 2};
constexpr std::size_t kEvenAxes[9] = {0, 1, 2, 1, 2, 0, 2, 0, 1};

constexpr double kDegenerateStd = 1e-8;

void require_valid_row_count(std::size_t n_rows) {
    if (n_rows < 3 || n_rows % 2 == 0) {
        throw ConfigError(
            "row count must be odd and at least 3 so that every pair of rows "
            "can appear adjacently in one walk (got " +
            std::to_string(n_rows) + ")");
    }
}

}  // namespace

PermutationSequence build_permutation(std::size_t n_rows) {
    require_valid_row_count(n_rows);

    std::set<std::pair<std::size_t, std::size_t>> used;
    PermutationSequence out;
    out.seq.push_back(1);

    std::size_t i = 1;
    std::size_t j = 2;
    while (i != j) {
        if (j > n_rows) {
            j = 1;
        } else if (!used.count({std::min(i, j), std::max(i, j)}) && i != j) {
            used.insert({std::min(i, j), std::max(i, j)});
            out.seq.push_back(j);
            i = j;
            j = i + 1;
        } else {
            ++j;
        }
    }
    return out;
}

std::array<double, 9> expand_row(const std::array<double, 3>& row, std::size_t sequence_number) {
    std::array<double, 9> out;
    const std::size_t* axes = (sequence_number % 2 == 1) ? kOddAxes : kEvenAxes;
    for (std::size_t k = 0; k < 9; ++k) out[k] = row[axes[k]];
    return out;
}

ActivityFrame build_frame(const ModalitySnapshot& snapshot, std::size_t frame_index,
                          FrameMode mode) {
    for (const auto& row : snapshot.rows) {
        for (double v : row) {
            if (!std::isfinite(v)) throw NumericError("build_frame: non-finite snapshot value");
        }
    }

    ActivityFrame frame;
    frame.width = 9;
    frame.frame_index = frame_index;

    if (mode == FrameMode::kActivity) {
        PermutationSequence perm = build_permutation(snapshot.n_rows());
        frame.height = perm.seq.size();
        frame.cells.resize(frame.height * 9);
        for (std::size_t r = 0; r < perm.seq.size(); ++r) {
            const auto expanded = expand_row(snapshot.rows[perm.seq[r] - 1], r + 1);
            for (std::size_t c = 0; c < 9; ++c) frame.at(r, c) = expanded[c];
        }
    } else {
        frame.height = snapshot.n_rows();
        frame.cells.resize(frame.height * 9);
        for (std::size_t r = 0; r < frame.height; ++r) {
            // Plain stacked representation: axes tiled, no permutation.
            const auto expanded = expand_row(snapshot.rows[r], 1);
            for (std::size_t c = 0; c < 9; ++c) frame.at(r, c) = expanded[c];
        }
    }
    return frame;
}

Sample window_to_sample(std::span<const ModalitySnapshot> window, std::size_t frame_count,
                        std::size_t label, const std::string& subject_id, FrameMode mode) {
    if (frame_count == 0) throw ConfigError("window_to_sample: frame count must be positive");
    if (window.size() < frame_count) {
        throw DataError("window_to_sample: window of " + std::to_string(window.size()) +
                        " snapshots is shorter than " + std::to_string(frame_count) + " frames");
    }
    const std::size_t n_rows = window[0].n_rows();
    for (const auto& snap : window) {
        if (snap.n_rows() != n_rows) {
            throw DataError("window_to_sample: inconsistent row count inside window");
        }
    }

    Sample sample;
    sample.label = label;
    sample.subject_id = subject_id;
    const std::size_t seg = window.size() / frame_count;
    for (std::size_t f = 0; f < frame_count; ++f) {
        const std::size_t begin = f * seg;
        const std::size_t end = (f + 1 == frame_count) ? window.size() : begin + seg;
        ModalitySnapshot mean;
        mean.rows.assign(n_rows, {0.0, 0.0, 0.0});
        mean.row_labels = window[0].row_labels;
        for (std::size_t s = begin; s < end; ++s) {
            for (std::size_t r = 0; r < n_rows; ++r) {
                for (std::size_t a = 0; a < 3; ++a) mean.rows[r][a] += window[s].rows[r][a];
            }
        }
        const double inv = 1.0 / static_cast<double>(end - begin);
        for (auto& row : mean.rows) {
            for (double& v : row) v *= inv;
        }
        sample.frames.push_back(build_frame(mean, f, mode));
    }
    return sample;
}

FrameLayout::FrameLayout(std::size_t n_rows, FrameMode mode) : n_rows_(n_rows), mode_(mode) {
    if (mode == FrameMode::kActivity) {
        PermutationSequence perm = build_permutation(n_rows);
        source_row_.reserve(perm.seq.size());
        for (std::size_t idx : perm.seq) source_row_.push_back(idx - 1);
    } else {
        source_row_.resize(n_rows);
        for (std::size_t r = 0; r < n_rows; ++r) source_row_[r] = r;
    }
}

std::size_t FrameLayout::axis(std::size_t frame_row, std::size_t col) const {
    if (frame_row >= source_row_.size() || col >= 9) {
        throw ShapeError("frame layout: cell out of range");
    }
    if (mode_ == FrameMode::kStacked) return kOddAxes[col];
    return ((frame_row + 1) % 2 == 1) ? kOddAxes[col] : kEvenAxes[col];
}

ChannelStats compute_stats(std::span<const Sample> samples, const FrameLayout& layout,
                           const std::vector<std::string>& row_labels) {
    if (row_labels.size() != layout.n_rows()) {
        throw ConfigError("compute_stats: row label count does not match layout");
    }
    // Sum over de-duplicated channel values: one contribution per source
    // row and axis per frame (frame cells replicate each channel a fixed
    // number of times, which would not change the moments anyway).
    std::vector<std::array<double, 3>> sum(layout.n_rows(), {0, 0, 0});
    std::vector<std::array<double, 3>> sum_sq(layout.n_rows(), {0, 0, 0});
    std::size_t n_frames = 0;

    for (const Sample& sample : samples) {
        for (const ActivityFrame& frame : sample.frames) {
            if (frame.height != layout.height() || frame.width != layout.width()) {
                throw ShapeError("compute_stats: frame shape does not match layout");
            }
            ++n_frames;
            // Read each source row once, from the first frame row holding it.
            std::vector<bool> seen(layout.n_rows(), false);
            for (std::size_t r = 0; r < frame.height; ++r) {
                const std::size_t src = layout.source_row(r);
                if (seen[src]) continue;
                seen[src] = true;
                for (std::size_t a = 0; a < 3; ++a) {
                    // Find a column carrying this axis in this row's template.
                    for (std::size_t c = 0; c < 9; ++c) {
                        if (layout.axis(r, c) == a) {
                            const double v = frame.at(r, c);
                            sum[src][a] += v;
                            sum_sq[src][a] += v * v;
                            break;
                        }
                    }
                }
            }
        }
    }
    if (n_frames == 0) throw DataError("compute_stats: no frames in training samples");

    ChannelStats stats;
    const double inv = 1.0 / static_cast<double>(n_frames);
    for (std::size_t r = 0; r < layout.n_rows(); ++r) {
        RowStats rs;
        for (std::size_t a = 0; a < 3; ++a) {
            const double mean = sum[r][a] * inv;
            const double var = std::max(0.0, sum_sq[r][a] * inv - mean * mean);
            rs.mean[a] = mean;
            rs.stddev[a] = std::sqrt(var);
        }
        stats.by_label[row_labels[r]] = rs;
    }
    return stats;
}

void normalize(std::vector<Sample>& samples, const FrameLayout& layout,
               const std::vector<std::string>& row_labels, const ChannelStats& stats) {
    if (row_labels.size() != layout.n_rows()) {
        throw ConfigError("normalize: row label count does not match layout");
    }
    std::vector<const RowStats*> per_row(layout.n_rows());
    for (std::size_t r = 0; r < layout.n_rows(); ++r) {
        auto it = stats.by_label.find(row_labels[r]);
        if (it == stats.by_label.end()) {
            throw ConfigError("normalize: statistics missing row label '" + row_labels[r] + "'");
        }
        per_row[r] = &it->second;
    }

    for (Sample& sample : samples) {
        for (ActivityFrame& frame : sample.frames) {
            if (frame.height != layout.height() || frame.width != layout.width()) {
                throw ShapeError("normalize: frame shape does not match layout");
            }
            for (std::size_t r = 0; r < frame.height; ++r) {
                const RowStats& rs = *per_row[layout.source_row(r)];
                for (std::size_t c = 0; c < frame.width; ++c) {
                    const std::size_t a = layout.axis(r, c);
                    double v = frame.at(r, c) - rs.mean[a];
                    if (rs.stddev[a] >= kDegenerateStd) v /= rs.stddev[a];
                    frame.at(r, c) = v;
                }
            }
        }
    }
}

void dump_sample(std::ostream& os, const Sample& sample, std::size_t n_rows) {
    if (sample.frames.empty()) throw DataError("dump_sample: sample has no frames");
    const std::size_t h = sample.frames[0].height;
    const std::size_t w = sample.frames[0].width;
    os << n_rows << ' ' << sample.frames.size() << ' ' << h << ' ' << w << '\n';
    char buf[40];
    for (const ActivityFrame& frame : sample.frames) {
        if (frame.height != h || frame.width != w) {
            throw ShapeError("dump_sample: frames of one sample differ in shape");
        }
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", frame.at(r, c));
                os << (c ? " " : "") << buf;
            }
            os << '\n';
        }
    }
}

Sample parse_sample_dump(std::istream& is, std::size_t* n_rows_out) {
    std::size_t n_rows = 0, n_frames = 0, h = 0, w = 0;
    if (!(is >> n_rows >> n_frames >> h >> w)) {
        throw DataError("frame dump: bad header line");
    }
    Sample sample;
    for (std::size_t f = 0; f < n_frames; ++f) {
        ActivityFrame frame;
        frame.height = h;
        frame.width = w;
        frame.frame_index = f;
        frame.cells.resize(h * w);
        for (double& v : frame.cells) {
            if (!(is >> v)) throw DataError("frame dump: truncated frame block");
        }
        sample.frames.push_back(std::move(frame));
    }
    if (n_rows_out) *n_rows_out = n_rows;
    return sample;
}

}  // namespace raaf::frames
