#include "raaf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <ostream>
#include <thread>

#include <nlohmann/json.hpp>

#include "raaf/errors.hpp"

namespace raaf::train {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0, 1)");
    if (grad_clip < 0.0) throw ConfigError("train: negative gradient clip");
    if (epochs == 0 || batch_size == 0) throw ConfigError("train: epochs and batch size must be positive");
    if (baseline_decay < 0.0 || baseline_decay >= 1.0) {
        throw ConfigError("train: baseline decay must be in [0, 1)");
    }
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
        throw ConfigError("train: validation fraction must be in [0, 1)");
    }
}

std::string TrainConfig::to_json_string() const {
    nlohmann::json j;
    j["lr"] = lr;
    j["momentum"] = momentum;
    j["grad_clip"] = grad_clip;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["baseline"] = baseline_enabled;
    j["baseline_decay"] = baseline_decay;
    j["freeze_location"] = freeze_location;
    j["early_stop_patience"] = early_stop_patience;
    j["validation_fraction"] = validation_fraction;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: bad JSON: ") + e.what());
    }
    TrainConfig cfg;
    try {
        cfg.lr = j.value("lr", cfg.lr);
        cfg.momentum = j.value("momentum", cfg.momentum);
        cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.baseline_enabled = j.value("baseline", cfg.baseline_enabled);
        cfg.baseline_decay = j.value("baseline_decay", cfg.baseline_decay);
        cfg.freeze_location = j.value("freeze_location", cfg.freeze_location);
        cfg.early_stop_patience = j.value("early_stop_patience", cfg.early_stop_patience);
        cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

double reward(std::size_t prediction, std::size_t label) {
    return prediction == label ? 1.0 : 0.0;
}

Trainer::Trainer(model::RaafModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), opt_(cfg.lr, cfg.momentum, cfg.grad_clip), rng_(cfg.seed) {
    cfg_.validate();
}

EpochMetrics Trainer::train_epoch(const std::vector<frames::Sample>& train_set) {
    if (train_set.empty()) throw DataError("train_epoch: empty training set");
    const std::size_t n_copies = model_.config().mc_copies;
    auto params = model_.params();

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);

    EpochMetrics metrics;
    metrics.epoch = ++epoch_;
    std::size_t correct = 0;
    double reward_total = 0.0;
    std::size_t reward_count = 0;
    std::size_t batch_index = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size, ++batch_index) {
        const std::size_t end = std::min(begin + cfg_.batch_size, order.size());
        const double scale = 1.0 / static_cast<double>(end - begin);
        nn::zero_grads(params);

        double batch_reward = 0.0;
        for (std::size_t k = begin; k < end; ++k) {
            const frames::Sample& sample = train_set[order[k]];
            std::vector<std::uint64_t> seeds(n_copies);
            for (auto& s : seeds) s = rng_.split();

            model::SampleForward fwd = model_.forward_sample(sample, seeds, /*cache=*/true);
            std::vector<double> rewards(n_copies);
            double sample_loss = 0.0;
            for (std::size_t i = 0; i < n_copies; ++i) {
                rewards[i] = reward(fwd.traces[i].prediction, sample.label);
                fwd.traces[i].reward = rewards[i];
                fwd.traces[i].final_loss =
                    -std::log(std::max(fwd.traces[i].scores[sample.label], 1e-300));
                batch_reward += rewards[i];
                sample_loss += fwd.traces[i].final_loss;
            }
            sample_loss /= static_cast<double>(n_copies);
            if (!std::isfinite(sample_loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch_) +
                                   ", batch " + std::to_string(batch_index));
            }
            metrics.loss += sample_loss;
            if (fwd.prediction == sample.label) ++correct;

            const double b = cfg_.baseline_enabled ? baseline_ : 0.0;
            model_.backward_sample(fwd, sample.label, rewards, b, scale,
                                   /*reinforce_enabled=*/!cfg_.freeze_location);
        }
        reward_total += batch_reward;
        reward_count += (end - begin) * n_copies;

        if (cfg_.freeze_location) {
            for (ParamSlot* p : model_.location_params()) p->zero_grad();
        }
        try {
            opt_.step(params);
        } catch (const NumericError& e) {
            double norm = 0.0;
            for (const ParamSlot* p : params) norm += p->grad.l2_norm();
            throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch_) +
                               ", batch " + std::to_string(batch_index) +
                               ", total grad norm " + std::to_string(norm) + ")");
        }
        if (cfg_.baseline_enabled) {
            const double mean_r = batch_reward / static_cast<double>((end - begin) * n_copies);
            baseline_ = cfg_.baseline_decay * baseline_ + (1.0 - cfg_.baseline_decay) * mean_r;
        }
    }

    metrics.loss /= static_cast<double>(train_set.size());
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    metrics.mean_reward = reward_total / static_cast<double>(reward_count);
    return metrics;
}

namespace {

double quick_accuracy(model::RaafModel& model, const std::vector<frames::Sample>& set, Rng& rng) {
    std::size_t correct = 0;
    const std::size_t n_copies = model.config().mc_copies;
    for (const frames::Sample& sample : set) {
        std::vector<std::uint64_t> seeds(n_copies);
        for (auto& s : seeds) s = rng.split();
        model::SampleForward fwd = model.forward_sample(sample, seeds, /*cache=*/false);
        if (fwd.prediction == sample.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace

std::vector<EpochMetrics> Trainer::fit(const std::vector<frames::Sample>& train_set) {
    std::vector<EpochMetrics> history;

    std::vector<frames::Sample> fit_set = train_set;
    std::vector<frames::Sample> val_set;
    const bool early = cfg_.early_stop_patience > 0 && cfg_.validation_fraction > 0.0;
    if (early) {
        const auto val_n = static_cast<std::size_t>(
            std::floor(cfg_.validation_fraction * static_cast<double>(train_set.size())));
        if (val_n >= 1 && val_n < train_set.size()) {
            Rng split_rng(cfg_.seed ^ 0xabcdef12u);
            std::vector<std::size_t> order(train_set.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            split_rng.shuffle(order);
            fit_set.clear();
            val_set.clear();
            for (std::size_t i = 0; i < order.size(); ++i) {
                (i < val_n ? val_set : fit_set).push_back(train_set[order[i]]);
            }
        }
    }

    double best_val = -1.0;
    std::size_t since_best = 0;
    std::vector<Tensor> best_params;
    Rng val_rng(cfg_.seed ^ 0x5a5a5a5au);

    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
        history.push_back(train_epoch(fit_set));
        if (!val_set.empty()) {
            const double val_acc = quick_accuracy(model_, val_set, val_rng);
            if (val_acc > best_val) {
                best_val = val_acc;
                since_best = 0;
                best_params.clear();
                for (const ParamSlot* p : std::as_const(model_).params()) {
                    best_params.push_back(p->value);
                }
            } else if (++since_best >= cfg_.early_stop_patience) {
                break;
            }
        }
    }

    if (!best_params.empty()) {
        auto params = model_.params();
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    }
    return history;
}

// ---------------------------------------------------------------------------
// Metrics containers

void ConfusionMatrix::add(std::size_t true_class, std::size_t predicted) {
    if (true_class >= n_classes || predicted >= n_classes) {
        throw ConfigError("confusion matrix: class index out of range");
    }
    ++counts[true_class * n_classes + predicted];
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t t) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < n_classes; ++p) s += at(t, p);
    return s;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t s = 0;
    for (std::uint64_t c : counts) s += c;
    return s;
}

std::uint64_t ConfusionMatrix::diagonal() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < n_classes; ++i) s += at(i, i);
    return s;
}

double ConfusionMatrix::accuracy() const {
    const std::uint64_t t = total();
    return t == 0 ? 0.0 : static_cast<double>(diagonal()) / static_cast<double>(t);
}

void ConfusionMatrix::write_csv(std::ostream& os) const {
    os << "true\\pred";
    for (std::size_t p = 0; p < n_classes; ++p) os << ',' << p;
    os << '\n';
    for (std::size_t t = 0; t < n_classes; ++t) {
        os << t;
        for (std::size_t p = 0; p < n_classes; ++p) os << ',' << at(t, p);
        os << '\n';
    }
}

void GlimpseHeatmap::record(model::Location loc) {
    const std::size_t r = model::location_to_pixel(loc.row, rows);
    const std::size_t c = model::location_to_pixel(loc.col, cols);
    ++visits[r * cols + c];
}

std::uint64_t GlimpseHeatmap::total() const {
    std::uint64_t s = 0;
    for (std::uint64_t v : visits) s += v;
    return s;
}

std::uint64_t GlimpseHeatmap::row_total(std::size_t r) const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += visits[r * cols + c];
    return s;
}

void GlimpseHeatmap::write_csv(std::ostream& os) const {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << visits[r * cols + c];
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(model::RaafModel& model, const std::vector<frames::Sample>& test,
                    const EvalOptions& options) {
    if (test.empty()) throw DataError("evaluate: empty test set");
    const model::ModelConfig& cfg = model.config();

    model::LocationPolicy policy = options.policy;
    if (!options.policy_override) {
        policy.mode = cfg.sample_at_eval ? model::LocationPolicy::Mode::kSampled
                                         : model::LocationPolicy::Mode::kMean;
    }

    EvalResult out;
    out.confusion = ConfusionMatrix(cfg.n_classes);
    out.heatmap = GlimpseHeatmap(cfg.frame_rows, cfg.frame_cols);
    out.n_samples = test.size();

    Rng rng(options.seed);
    std::vector<double> latencies;
    latencies.reserve(test.size());
    std::size_t correct = 0;

    for (const frames::Sample& sample : test) {
        std::vector<std::uint64_t> seeds(cfg.mc_copies);
        for (auto& s : seeds) s = rng.split();

        const auto start = std::chrono::steady_clock::now();
        model::SampleForward fwd = model.forward_sample(sample, seeds, /*cache=*/false, policy);
        const auto stop = std::chrono::steady_clock::now();
        latencies.push_back(std::chrono::duration<double>(stop - start).count());

        out.confusion.add(sample.label, fwd.prediction);
        if (fwd.prediction == sample.label) ++correct;
        for (const model::EpisodeTrace& trace : fwd.traces) {
            for (const model::EpisodeTrace::Step& step : trace.steps) {
                out.heatmap.record(step.loc);
            }
        }
    }

    out.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());

    // Accounting invariants checked on every evaluation run.
    const std::uint64_t expected =
        static_cast<std::uint64_t>(test.size()) * cfg.mc_copies * cfg.glimpses * cfg.frames_per_sample;
    if (out.heatmap.total() != expected) {
        throw NumericError("evaluate: heatmap visit total " + std::to_string(out.heatmap.total()) +
                           " != samples*M*T*F = " + std::to_string(expected));
    }
    if (out.confusion.total() != test.size()) {
        throw NumericError("evaluate: confusion matrix total does not match sample count");
    }

    std::sort(latencies.begin(), latencies.end());
    double sum = 0.0;
    for (double v : latencies) sum += v;
    out.latency_mean_s = sum / static_cast<double>(latencies.size());
    const auto p95_idx = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(latencies.size()))) - 1;
    out.latency_p95_s = latencies[std::min(p95_idx, latencies.size() - 1)];
    return out;
}

std::vector<Involvement> modality_involvement(const GlimpseHeatmap& heatmap,
                                              const frames::FrameLayout& layout,
                                              const std::vector<std::string>& groups_per_source_row) {
    if (groups_per_source_row.size() != layout.n_rows()) {
        throw ConfigError("involvement: group list does not match source row count");
    }
    if (heatmap.rows != layout.height()) {
        throw ShapeError("involvement: heatmap height does not match frame layout");
    }

    std::vector<std::string> group_order;
    std::map<std::string, std::uint64_t> visits;
    for (const std::string& g : groups_per_source_row) {
        if (!visits.count(g)) {
            visits[g] = 0;
            group_order.push_back(g);
        }
    }
    for (std::size_t r = 0; r < heatmap.rows; ++r) {
        visits[groups_per_source_row[layout.source_row(r)]] += heatmap.row_total(r);
    }

    const std::uint64_t total = heatmap.total();
    std::vector<Involvement> out;
    out.reserve(group_order.size());
    for (const std::string& g : group_order) {
        Involvement inv;
        inv.group = g;
        inv.visits = visits[g];
        inv.percent = total == 0 ? 0.0
                                 : 100.0 * static_cast<double>(visits[g]) / static_cast<double>(total);
        out.push_back(std::move(inv));
    }
    return out;
}

// ---------------------------------------------------------------------------
// LOSO

std::uint64_t fold_seed(std::uint64_t run_seed, const std::string& subject) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : subject) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h ^ run_seed;
}

std::uint64_t checksum_samples(const std::vector<frames::Sample>& samples) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const frames::Sample& s : samples) {
        mix(s.subject_id.data(), s.subject_id.size());
        mix(&s.label, sizeof(s.label));
        for (const frames::ActivityFrame& f : s.frames) {
            mix(f.cells.data(), f.cells.size() * sizeof(double));
        }
    }
    return h;
}

namespace {

FoldReport run_fold(const std::vector<SubjectSamples>& data, const data::LosoSplit& split,
                    const LosoOptions& options) {
    std::vector<frames::Sample> train_set;
    const std::vector<frames::Sample>* test_orig = nullptr;
    for (const SubjectSamples& subj : data) {
        if (subj.subject == split.held_out) {
            test_orig = &subj.samples;
        } else {
            train_set.insert(train_set.end(), subj.samples.begin(), subj.samples.end());
        }
    }
    if (!test_orig || test_orig->empty()) {
        throw DataError("loso: held-out subject '" + split.held_out + "' has no samples");
    }
    if (train_set.empty()) throw DataError("loso: empty training pool");

    const std::uint64_t seed = fold_seed(options.train.seed, split.held_out);
    const std::uint64_t test_checksum = checksum_samples(*test_orig);

    if (options.subsample > 0 && options.subsample < train_set.size()) {
        train_set = data::subsample_labeled(train_set, options.subsample, seed ^ 0x5ab5ab5aULL,
                                            options.model.n_classes);
    }

    // Normalization statistics come from the training pool only; the
    // held-out copies are standardised with those same statistics.
    frames::FrameLayout layout(options.row_labels.size(), options.frame_mode);
    std::vector<frames::Sample> test_set = *test_orig;
    frames::ChannelStats stats = frames::compute_stats(train_set, layout, options.row_labels);
    frames::normalize(train_set, layout, options.row_labels, stats);
    frames::normalize(test_set, layout, options.row_labels, stats);

    model::RaafModel net(options.model, seed);
    TrainConfig tc = options.train;
    tc.seed = seed;
    Trainer trainer(net, tc);

    FoldReport report;
    report.held_out = split.held_out;
    report.history = trainer.fit(train_set);

    EvalOptions eval_opts;
    eval_opts.seed = seed ^ 0xe7a1e7a1ULL;
    report.eval = evaluate(net, test_set, eval_opts);

    if (checksum_samples(*test_orig) != test_checksum) {
        throw NumericError("loso: held-out data changed during fold " + split.held_out);
    }
    return report;
}

}  // namespace

LosoReport run_loso(const std::vector<SubjectSamples>& data, const LosoOptions& options) {
    std::vector<std::string> subjects;
    subjects.reserve(data.size());
    for (const SubjectSamples& s : data) subjects.push_back(s.subject);
    std::vector<data::LosoSplit> splits = data::loso_splits(subjects);

    LosoReport report;
    report.folds.resize(splits.size());

    const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
    if (jobs == 1) {
        for (std::size_t i = 0; i < splits.size(); ++i) {
            report.folds[i] = run_fold(data, splits[i], options);
        }
    } else {
        std::vector<std::exception_ptr> errors(splits.size());
        for (std::size_t begin = 0; begin < splits.size(); begin += jobs) {
            const std::size_t end = std::min(begin + jobs, splits.size());
            std::vector<std::thread> pool;
            for (std::size_t i = begin; i < end; ++i) {
                pool.emplace_back([&, i] {
                    try {
                        report.folds[i] = run_fold(data, splits[i], options);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            }
            for (std::thread& t : pool) t.join();
        }
        for (const std::exception_ptr& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    double sum = 0.0;
    for (const FoldReport& fold : report.folds) sum += fold.eval.accuracy;
    report.mean_accuracy = sum / static_cast<double>(report.folds.size());
    return report;
}

std::vector<SweepPoint> sweep_labeled_data(const std::vector<SubjectSamples>& data,
                                           const LosoOptions& options,
                                           const std::vector<std::size_t>& sizes) {
    for (std::size_t i = 1; i < sizes.size(); ++i) {
        if (sizes[i] <= sizes[i - 1]) throw ConfigError("sweep: sizes must be strictly ascending");
    }
    std::vector<SweepPoint> out;
    out.reserve(sizes.size());
    for (std::size_t size : sizes) {
        SweepPoint point;
        point.requested = size;
        LosoOptions opts = options;
        opts.subsample = size;
        point.report = run_loso(data, opts);
        point.used = size;
        out.push_back(std::move(point));
    }
    return out;
}

}  // namespace raaf::train
