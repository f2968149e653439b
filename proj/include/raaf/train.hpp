#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "raaf/dataset.hpp"
#include "raaf/frame.hpp"
#include "raaf/model.hpp"

namespace raaf::train {

struct TrainConfig {
    double lr = 1e-3;
    double momentum = 0.9;
    double grad_clip = 5.0;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1234;

    bool baseline_enabled = true;   // moving-average reward baseline
    double baseline_decay = 0.9;
    bool freeze_location = false;   // ablation: frozen head, no policy gradient

    std::size_t early_stop_patience = 10;  // epochs without improvement; 0 disables
    double validation_fraction = 0.1;

    void validate() const;
    std::string to_json_string() const;
    static TrainConfig from_json_string(const std::string& text);
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;         // mean per-copy cross-entropy of the final prediction
    double accuracy = 0.0;     // averaged-copy prediction vs label
    double mean_reward = 0.0;  // over copies and samples
};

/// Terminal reward: 1 when the copy's prediction matches the label.
double reward(std::size_t prediction, std::size_t label);

class Trainer {
public:
    Trainer(model::RaafModel& model, const TrainConfig& cfg);

    EpochMetrics train_epoch(const std::vector<frames::Sample>& train_set);

    /// Runs up to cfg.epochs epochs; with early stopping enabled a
    /// validation slice is split off and the best parameters are restored
    /// at the end.
    std::vector<EpochMetrics> fit(const std::vector<frames::Sample>& train_set);

    double baseline() const { return baseline_; }

private:
    model::RaafModel& model_;
    TrainConfig cfg_;
    nn::SgdMomentum opt_;
    Rng rng_;
    double baseline_ = 0.0;
    std::size_t epoch_ = 0;
};

struct ConfusionMatrix {
    std::size_t n_classes = 0;
    std::vector<std::uint64_t> counts;  // rows = true class, cols = predicted

    explicit ConfusionMatrix(std::size_t n = 0) : n_classes(n), counts(n * n, 0) {}
    void add(std::size_t true_class, std::size_t predicted);
    std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * n_classes + p]; }
    std::uint64_t row_sum(std::size_t t) const;
    std::uint64_t total() const;
    std::uint64_t diagonal() const;
    double accuracy() const;
    void write_csv(std::ostream& os) const;
};

struct GlimpseHeatmap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint64_t> visits;

    GlimpseHeatmap(std::size_t r = 0, std::size_t c = 0) : rows(r), cols(c), visits(r * c, 0) {}
    void record(model::Location loc);
    std::uint64_t total() const;
    std::uint64_t row_total(std::size_t r) const;
    void write_csv(std::ostream& os) const;
};

struct EvalResult {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    GlimpseHeatmap heatmap;
    double latency_mean_s = 0.0;
    double latency_p95_s = 0.0;
    std::size_t n_samples = 0;
};

struct EvalOptions {
    std::uint64_t seed = 0;
    model::LocationPolicy policy{};  // default honours config.sample_at_eval
    bool policy_override = false;
};

EvalResult evaluate(model::RaafModel& model, const std::vector<frames::Sample>& test,
                    const EvalOptions& options);

struct Involvement {
    std::string group;
    double percent = 0.0;
    std::uint64_t visits = 0;
};

/// Attributes heatmap visits to the modality group of the source row
/// under the glimpse centre. groups_per_source_row follows the dataset's
/// channel order; percentages close to 100.
std::vector<Involvement> modality_involvement(const GlimpseHeatmap& heatmap,
                                              const frames::FrameLayout& layout,
                                              const std::vector<std::string>& groups_per_source_row);

struct SubjectSamples {
    std::string subject;
    std::vector<frames::Sample> samples;
};

struct FoldReport {
    std::string held_out;
    std::vector<EpochMetrics> history;
    EvalResult eval;
};

struct LosoReport {
    std::vector<FoldReport> folds;
    double mean_accuracy = 0.0;  // unweighted arithmetic mean over folds
};

/// Deterministic per-fold seed derived from the run seed and the held-out
/// subject id, so subject order cannot change results.
std::uint64_t fold_seed(std::uint64_t run_seed, const std::string& subject);

struct LosoOptions {
    model::ModelConfig model;
    TrainConfig train;
    frames::FrameMode frame_mode = frames::FrameMode::kActivity;
    std::vector<std::string> row_labels;  // for per-fold normalization
    std::size_t jobs = 1;
    std::size_t subsample = 0;  // 0 = use the full train pool
};

LosoReport run_loso(const std::vector<SubjectSamples>& data, const LosoOptions& options);

struct SweepPoint {
    std::size_t requested = 0;
    std::size_t used = 0;  // clamped to the smallest fold pool when needed
    LosoReport report;
};

std::vector<SweepPoint> sweep_labeled_data(const std::vector<SubjectSamples>& data,
                                           const LosoOptions& options,
                                           const std::vector<std::size_t>& sizes);

/// FNV-1a over the samples' frame bytes, labels and subject ids; used to
/// assert that evaluation never mutates held-out data.
std::uint64_t checksum_samples(const std::vector<frames::Sample>& samples);

}  // namespace raaf::train
