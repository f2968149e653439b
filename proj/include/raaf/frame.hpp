#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "raaf/tensor.hpp"

namespace raaf::frames {

/// One time instant of all mounted sensors: one tri-axis row per
/// (body-location, modality) pair. Row labels are shared across snapshots
/// of the same recording.
struct ModalitySnapshot {
    std::vector<std::array<double, 3>> rows;
    std::shared_ptr<const std::vector<std::string>> row_labels;

    std::size_t n_rows() const { return rows.size(); }
};

/// Row-visiting order (1-based indices) in which every unordered pair of
/// rows appears adjacently at least once. Length is C(n,2)+1.
struct PermutationSequence {
    std::vector<std::size_t> seq;
};

/// 2-D feature matrix fed to the model: permuted rows, each expanded to
/// width 9 so every pair of axis components of vertically adjacent rows
/// is also represented.
struct ActivityFrame {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> cells;  // row-major
    std::size_t frame_index = 0;

    double& at(std::size_t r, std::size_t c) { return cells[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return cells[r * width + c]; }

    Tensor as_tensor() const { return Tensor::from({height, width}, cells); }
};

struct Sample {
    std::vector<ActivityFrame> frames;
    std::size_t label = 0;
    std::string subject_id;
};

/// How snapshot rows are arranged into frame rows.
enum class FrameMode {
    kActivity,  // permuted walk + odd/even axis expansion
    kStacked,   // rows in input order, axes tiled three times
};

/// Greedy pair-adjacency walk: starting at row 1, repeatedly take the
/// smallest j > i (wrapping past n to 1) such that the pair (i, j) is
/// unused. Requires odd n >= 3; for even n the walk closes before every
/// pair has been visited.
PermutationSequence build_permutation(std::size_t n_rows);

/// Odd sequence numbers give (x,y,z,x,y,z,x,y,z), even give
/// (x,y,z,y,z,x,z,x,y). Sequence numbers are 1-based output positions.
std::array<double, 9> expand_row(const std::array<double, 3>& row, std::size_t sequence_number);

ActivityFrame build_frame(const ModalitySnapshot& snapshot, std::size_t frame_index = 0,
                          FrameMode mode = FrameMode::kActivity);

/// Splits the window into `frame_count` contiguous segments (remainder
/// rows go to the last segment), averages each segment elementwise and
/// builds one frame per segment.
Sample window_to_sample(std::span<const ModalitySnapshot> window, std::size_t frame_count,
                        std::size_t label, const std::string& subject_id,
                        FrameMode mode = FrameMode::kActivity);

/// Maps frame cells back to their source row and axis. Valid for every
/// frame built with the same row count and mode.
class FrameLayout {
public:
    FrameLayout(std::size_t n_rows, FrameMode mode);

    std::size_t n_rows() const { return n_rows_; }
    std::size_t height() const { return source_row_.size(); }
    std::size_t width() const { return 9; }
    FrameMode mode() const { return mode_; }

    /// 0-based source row index for a frame row.
    std::size_t source_row(std::size_t frame_row) const { return source_row_.at(frame_row); }
    /// Axis (0=x, 1=y, 2=z) stored at a frame cell.
    std::size_t axis(std::size_t frame_row, std::size_t col) const;

private:
    std::size_t n_rows_;
    FrameMode mode_;
    std::vector<std::size_t> source_row_;
};

/// Per-channel standardisation statistics, keyed by row label. Channels
/// with a standard deviation below 1e-8 are centred only.
struct RowStats {
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
};

struct ChannelStats {
    std::map<std::string, RowStats> by_label;
};

ChannelStats compute_stats(std::span<const Sample> samples, const FrameLayout& layout,
                           const std::vector<std::string>& row_labels);

void normalize(std::vector<Sample>& samples, const FrameLayout& layout,
               const std::vector<std::string>& row_labels, const ChannelStats& stats);

/// Frame dump: first line "N_r F height width", then F*height lines of
/// `width` space-separated decimals. Text round-trips value-exactly.
void dump_sample(std::ostream& os, const Sample& sample, std::size_t n_rows);
Sample parse_sample_dump(std::istream& is, std::size_t* n_rows_out = nullptr);

}  // namespace raaf::frames
