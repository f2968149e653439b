#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "raaf/frame.hpp"

namespace raaf::data {

constexpr int kDiscardLabel = -1;

/// One tri-axis channel: a row label, the three 0-based source columns
/// (-1 means a constant zero component) and the modality group used for
/// involvement reporting.
struct ChannelTriple {
    std::string label;
    std::array<int, 3> columns{-1, -1, -1};
    std::string group;
};

struct SubjectFile {
    std::string id;
    std::string path;
};

struct DatasetConfig {
    std::string name;
    double sample_rate_hz = 0.0;
    int activity_column = -1;
    int timestamp_column = -1;  // optional; -1 uses the line index / rate
    double window_seconds = 2.0;
    double window_overlap = 0.5;
    std::size_t n_classes = 0;
    std::vector<ChannelTriple> channels;
    std::map<int, int> label_map;  // raw id -> class index or kDiscardLabel
    std::vector<SubjectFile> subjects;

    std::size_t n_rows() const { return channels.size(); }
    std::size_t window_len() const;
    std::size_t window_stride() const;
    std::vector<std::string> row_labels() const;

    /// Throws ConfigError on invalid combinations (even row count, class
    /// indices out of range, duplicate labels, ...).
    void validate() const;
};

struct TimedRow {
    double timestamp = 0.0;
    int raw_label = 0;
    frames::ModalitySnapshot snapshot;
};

struct Recording {
    std::string subject_id;
    std::vector<TimedRow> rows;
    // Ingestion accounting: rows_in == rows.size() + dropped_nonfinite.
    std::size_t rows_in = 0;
    std::size_t dropped_nonfinite = 0;
    std::size_t discarded_by_label = 0;  // rows kept but mapped to discard
};

/// Parses a whitespace-separated decimal text recording. Rows with a
/// non-finite value in any mapped channel are dropped and counted.
Recording load_recording(const std::string& path, const DatasetConfig& config,
                         const std::string& subject_id);

/// Maps a raw activity id through the label map; kDiscardLabel marks rows
/// excluded from every split. Unmapped ids are an error, not a drop.
int map_label(int raw_id, const DatasetConfig& config);
std::vector<int> map_labels(const std::vector<int>& raw_ids, const DatasetConfig& config);

struct LabeledWindow {
    std::vector<frames::ModalitySnapshot> snapshots;
    std::size_t label = 0;
    std::string subject_id;
};

/// Sliding windows; any window that straddles a label change (or touches
/// a discarded row) is dropped.
std::vector<LabeledWindow> make_windows(const Recording& recording, const DatasetConfig& config,
                                        std::size_t window_len, std::size_t stride);

struct LosoSplit {
    std::string held_out;
    std::vector<std::string> train_subjects;
};

/// One split per subject, in sorted subject order.
std::vector<LosoSplit> loso_splits(std::vector<std::string> subjects);

/// Seed-deterministic class-stratified subset. Subsets are nested: for a
/// fixed seed, the subset of size a is contained in the subset of size b
/// whenever a <= b. Requesting the full pool returns it unchanged.
std::vector<frames::Sample> subsample_labeled(const std::vector<frames::Sample>& pool,
                                              std::size_t n, std::uint64_t seed,
                                              std::size_t n_classes);

std::string dataset_config_to_json(const DatasetConfig& config);
DatasetConfig dataset_config_from_json(const std::string& text);

struct SubjectData {
    std::string subject;
    std::vector<frames::Sample> samples;
};

struct IngestStats {
    std::size_t rows_in = 0;
    std::size_t rows_used = 0;
    std::size_t dropped_nonfinite = 0;
    std::size_t discarded_by_label = 0;
    std::size_t windows = 0;
    std::size_t samples = 0;
};

/// Raw recordings -> windows -> frame samples, one entry per subject.
/// Subject file paths are resolved against data_dir when relative.
std::vector<SubjectData> build_samples(const DatasetConfig& config, const std::string& data_dir,
                                       std::size_t frames_per_sample, frames::FrameMode mode,
                                       IngestStats* stats = nullptr);

/// Cache directory: manifest.csv (file,subject,label,frames) plus one
/// frame-dump text file per sample.
void write_cache(const std::string& dir, const std::vector<SubjectData>& data,
                 std::size_t n_rows);
std::vector<SubjectData> load_cache(const std::string& dir, std::size_t* n_rows_out = nullptr);

}  // namespace raaf::data
