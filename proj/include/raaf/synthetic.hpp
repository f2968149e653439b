#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raaf/dataset.hpp"
#include "raaf/frame.hpp"
#include "raaf/model.hpp"
#include "raaf/train.hpp"

namespace raaf::synthetic {

/// Two-class benchmark on 37x9 frames: each sample carries one bright
/// patch whose position encodes the class (upper band = class 0, lower
/// band = class 1) over a near-clean background. The patches sit far from
/// the frame centre so a frozen location policy rarely sees them.
struct QuadrantSpec {
    std::size_t n_samples = 50;
    std::size_t frames_per_sample = 1;
    double patch_value = 3.0;
    double noise_sigma = 0.05;
    std::uint64_t seed = 7;

    // Patch extents (rows x cols) inside the 37x9 frame.
    std::size_t patch_rows = 5;
    std::size_t patch_cols = 4;
    std::size_t class0_row0 = 2;
    std::size_t class1_row0 = 30;
    std::size_t col0 = 2;
};

std::vector<frames::Sample> make_quadrant_dataset(const QuadrantSpec& spec);

/// Model/train settings the quadrant benchmark is tuned for.
model::ModelConfig quadrant_model_config();
train::TrainConfig quadrant_train_config();

/// True when a location falls inside the labelled class's patch band.
bool in_salient_band(const QuadrantSpec& spec, std::size_t label, model::Location loc);

/// Synthetic recordings in the 54-column PAMAP2 text layout, exercising
/// the real ingestion path. The discriminative signal of each class is a
/// duplicated pair of non-neighbouring rows, so the pairwise-adjacent
/// frame layout has a local (convolutional) view of it while plain
/// stacking does not.
struct SurrogateSpec {
    std::size_t n_subjects = 2;
    std::size_t n_channels = 13;       // leading subset of the PAMAP2 triples
    std::size_t rows_per_block = 400;  // contiguous rows per activity bout
    std::size_t blocks_per_class = 2;
    double noise_sigma = 0.35;
    std::uint64_t seed = 99;
    double sample_rate_hz = 100.0;
    double window_seconds = 1.0;
    double window_overlap = 0.5;
};

/// Writes subjectNNN.dat files plus dataset.json into dir and returns the
/// matching config (subject paths relative to dir).
data::DatasetConfig write_surrogate_pamap2(const std::string& dir, const SurrogateSpec& spec);

/// Random frames shaped for the given model config (latency benchmarks).
std::vector<frames::Sample> make_random_samples(const model::ModelConfig& cfg,
                                                std::size_t n_samples, std::size_t n_classes,
                                                std::uint64_t seed);

}  // namespace raaf::synthetic
