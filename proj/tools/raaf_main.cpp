// Command-line surface for the activity-frame attention pipeline:
// ingest raw recordings, train/evaluate LOSO folds, run sweeps and
// latency benchmarks, and export interpretability tables.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "raaf/checkpoint.hpp"
#include "raaf/dataset.hpp"
#include "raaf/errors.hpp"
#include "raaf/frame.hpp"
#include "raaf/gradcheck.hpp"
#include "raaf/model.hpp"
#include "raaf/synthetic.hpp"
#include "raaf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct RunConfig {
    raaf::data::DatasetConfig dataset;
    bool has_dataset = false;
    raaf::model::ModelConfig model;
    raaf::train::TrainConfig train;
    raaf::frames::FrameMode frame_mode = raaf::frames::FrameMode::kActivity;
    std::string data_dir;
    std::string cache_dir;
    std::string output_dir = "runs";
    std::string raw_text;  // echoed into output directories
};

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw raaf::ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunConfig load_run_config(const std::string& path) {
    RunConfig run;
    run.raw_text = read_file(path);
    json j;
    try {
        j = json::parse(run.raw_text);
    } catch (const json::exception& e) {
        throw raaf::ConfigError(std::string("config '") + path + "': bad JSON: " + e.what());
    }

    const std::string config_dir = fs::path(path).parent_path().string();
    run.data_dir = j.value("data_dir", config_dir.empty() ? std::string(".") : config_dir);
    run.cache_dir = j.value("cache_dir", std::string());
    run.output_dir = j.value("output_dir", std::string("runs"));

    const std::string mode = j.value("frame_mode", std::string("activity"));
    if (mode == "activity") {
        run.frame_mode = raaf::frames::FrameMode::kActivity;
    } else if (mode == "stacked") {
        run.frame_mode = raaf::frames::FrameMode::kStacked;
    } else {
        throw raaf::ConfigError("config: frame_mode must be \"activity\" or \"stacked\"");
    }

    if (j.contains("dataset")) {
        run.dataset = raaf::data::dataset_config_from_json(j["dataset"].dump());
        run.has_dataset = true;
    }

    json mj = j.value("model", json::object());
    if (run.has_dataset) {
        // Frame geometry follows from the dataset unless pinned explicitly.
        const std::size_t n_rows = run.dataset.n_rows();
        if (!mj.contains("frame_rows")) {
            mj["frame_rows"] = run.frame_mode == raaf::frames::FrameMode::kActivity
                                   ? n_rows * (n_rows - 1) / 2 + 1
                                   : n_rows;
        }
        if (!mj.contains("frame_cols")) mj["frame_cols"] = 9;
        if (!mj.contains("n_classes")) mj["n_classes"] = run.dataset.n_classes;
    }
    run.model = raaf::model::ModelConfig::from_json_string(mj.dump());

    run.train = raaf::train::TrainConfig::from_json_string(j.value("train", json::object()).dump());

    if (const char* env_seed = std::getenv("RAAF_SEED")) {
        try {
            run.train.seed = std::stoull(env_seed);
        } catch (const std::exception&) {
            throw raaf::ConfigError("RAAF_SEED must be an unsigned integer");
        }
    }
    return run;
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw raaf::DataError("cannot create output directory '" + dir + "'");
}

void echo_config(const RunConfig& run, const std::string& dir) {
    std::ofstream os(dir + "/config.json", std::ios::trunc);
    os << run.raw_text;
}

std::vector<raaf::train::SubjectSamples> gather_samples(const RunConfig& run) {
    std::vector<raaf::data::SubjectData> data;
    if (!run.cache_dir.empty()) {
        data = raaf::data::load_cache(run.cache_dir);
    } else {
        if (!run.has_dataset) throw raaf::ConfigError("config: missing \"dataset\" section");
        data = raaf::data::build_samples(run.dataset, run.data_dir,
                                         run.model.frames_per_sample, run.frame_mode);
    }
    std::vector<raaf::train::SubjectSamples> out;
    out.reserve(data.size());
    for (auto& subj : data) {
        out.push_back({std::move(subj.subject), std::move(subj.samples)});
    }
    return out;
}

raaf::train::LosoOptions loso_options(const RunConfig& run) {
    raaf::train::LosoOptions opts;
    opts.model = run.model;
    opts.train = run.train;
    opts.frame_mode = run.frame_mode;
    if (!run.has_dataset) throw raaf::ConfigError("config: missing \"dataset\" section");
    opts.row_labels = run.dataset.row_labels();
    return opts;
}

void write_history_csv(const std::string& path, const std::vector<raaf::train::EpochMetrics>& hist) {
    std::ofstream os(path, std::ios::trunc);
    os << "epoch,loss,accuracy,mean_reward\n";
    char buf[128];
    for (const auto& m : hist) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", m.epoch, m.loss, m.accuracy,
                      m.mean_reward);
        os << buf;
    }
}

void write_eval_outputs(const std::string& dir, const raaf::train::EvalResult& eval) {
    {
        std::ofstream os(dir + "/confusion.csv", std::ios::trunc);
        eval.confusion.write_csv(os);
    }
    {
        std::ofstream os(dir + "/heatmap.csv", std::ios::trunc);
        eval.heatmap.write_csv(os);
    }
    {
        std::ofstream os(dir + "/eval.csv", std::ios::trunc);
        char buf[160];
        os << "samples,accuracy,latency_mean_s,latency_p95_s\n";
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", eval.n_samples, eval.accuracy,
                      eval.latency_mean_s, eval.latency_p95_s);
        os << buf;
    }
}

void write_involvement_csv(const std::string& path,
                           const std::vector<raaf::train::Involvement>& inv) {
    std::ofstream os(path, std::ios::trunc);
    os << "modality,percent,visits\n";
    char buf[160];
    for (const auto& row : inv) {
        std::snprintf(buf, sizeof(buf), "%s,%.4f,%llu\n", row.group.c_str(), row.percent,
                      static_cast<unsigned long long>(row.visits));
        os << buf;
    }
}

/// Train/test assembly shared by `train`, `eval` and `heatmap`: splits by
/// held-out subject and standardises both sides with train statistics.
struct FoldData {
    std::vector<raaf::frames::Sample> train_set;
    std::vector<raaf::frames::Sample> test_set;
};

FoldData make_fold(const RunConfig& run, const std::vector<raaf::train::SubjectSamples>& data,
                   const std::string& held_out) {
    FoldData fold;
    bool found = false;
    for (const auto& subj : data) {
        if (subj.subject == held_out) {
            fold.test_set = subj.samples;
            found = true;
        } else {
            fold.train_set.insert(fold.train_set.end(), subj.samples.begin(), subj.samples.end());
        }
    }
    if (!found) throw raaf::DataError("fold subject '" + held_out + "' not found in dataset");

    const auto row_labels = run.dataset.row_labels();
    raaf::frames::FrameLayout layout(row_labels.size(), run.frame_mode);
    auto stats = raaf::frames::compute_stats(fold.train_set, layout, row_labels);
    raaf::frames::normalize(fold.train_set, layout, row_labels, stats);
    raaf::frames::normalize(fold.test_set, layout, row_labels, stats);
    return fold;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_ingest(const RunConfig& run, const std::string& dataset_name, const std::string& out_dir) {
    if (!run.has_dataset) throw raaf::ConfigError("ingest: config has no \"dataset\" section");
    if (!dataset_name.empty() && dataset_name != run.dataset.name) {
        throw raaf::ConfigError("ingest: config describes dataset '" + run.dataset.name +
                                "', not '" + dataset_name + "'");
    }
    ensure_dir(out_dir);
    raaf::data::IngestStats stats;
    auto data = raaf::data::build_samples(run.dataset, run.data_dir, run.model.frames_per_sample,
                                          run.frame_mode, &stats);
    raaf::data::write_cache(out_dir, data, run.dataset.n_rows());
    echo_config(run, out_dir);
    std::cout << "ingested " << stats.rows_in << " rows (" << stats.rows_used << " used, "
              << stats.dropped_nonfinite << " dropped, " << stats.discarded_by_label
              << " discarded) into " << stats.samples << " samples across " << data.size()
              << " subjects\n";
    return kExitOk;
}

int cmd_train(const RunConfig& run, const std::string& fold, std::uint64_t seed_override,
              bool has_seed, const std::string& checkpoint_out, const std::string& out_dir) {
    RunConfig local = run;
    if (has_seed && !std::getenv("RAAF_SEED")) local.train.seed = seed_override;
    auto data = gather_samples(local);
    FoldData fold_data = make_fold(local, data, fold);

    const std::uint64_t seed = raaf::train::fold_seed(local.train.seed, fold);
    raaf::model::RaafModel net(local.model, seed);
    raaf::train::TrainConfig tc = local.train;
    tc.seed = seed;
    raaf::train::Trainer trainer(net, tc);
    auto history = trainer.fit(fold_data.train_set);

    ensure_dir(fs::path(checkpoint_out).parent_path().string());
    net.save(checkpoint_out);
    {
        std::ofstream os(checkpoint_out + ".json", std::ios::trunc);
        os << local.model.to_json_string() << '\n';
    }
    ensure_dir(out_dir);
    write_history_csv(out_dir + "/metrics.csv", history);
    echo_config(local, out_dir);
    std::cout << "trained fold " << fold << " for " << history.size() << " epochs; final loss "
              << (history.empty() ? 0.0 : history.back().loss) << "\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& run, const std::string& checkpoint, const std::string& fold,
             const std::string& out_dir, bool write_heatmap_outputs) {
    RunConfig local = run;
    {
        std::ifstream sidecar(checkpoint + ".json");
        if (sidecar) {
            std::stringstream ss;
            ss << sidecar.rdbuf();
            local.model = raaf::model::ModelConfig::from_json_string(ss.str());
        }
    }
    auto data = gather_samples(local);
    FoldData fold_data = make_fold(local, data, fold);

    raaf::model::RaafModel net(local.model, 0);
    net.load(checkpoint);

    raaf::train::EvalOptions opts;
    opts.seed = raaf::train::fold_seed(local.train.seed, fold) ^ 0xe7a1e7a1ULL;
    raaf::train::EvalResult eval = raaf::train::evaluate(net, fold_data.test_set, opts);

    ensure_dir(out_dir);
    write_eval_outputs(out_dir, eval);
    if (write_heatmap_outputs) {
        const auto row_labels = local.dataset.row_labels();
        raaf::frames::FrameLayout layout(row_labels.size(), local.frame_mode);
        std::vector<std::string> groups;
        for (const auto& ch : local.dataset.channels) groups.push_back(ch.group);
        auto inv = raaf::train::modality_involvement(eval.heatmap, layout, groups);
        write_involvement_csv(out_dir + "/involvement.csv", inv);
    }
    echo_config(local, out_dir);
    std::cout << "fold " << fold << ": accuracy " << eval.accuracy << " over " << eval.n_samples
              << " samples, latency mean " << eval.latency_mean_s << " s (p95 "
              << eval.latency_p95_s << " s)\n";
    return kExitOk;
}

int cmd_loso(const RunConfig& run, const std::string& dataset_name, const std::string& out_dir,
             std::size_t jobs) {
    if (!dataset_name.empty() && run.has_dataset && dataset_name != run.dataset.name) {
        throw raaf::ConfigError("loso: config describes dataset '" + run.dataset.name +
                                "', not '" + dataset_name + "'");
    }
    auto data = gather_samples(run);
    raaf::train::LosoOptions opts = loso_options(run);
    opts.jobs = jobs;
    raaf::train::LosoReport report = raaf::train::run_loso(data, opts);

    ensure_dir(out_dir);
    {
        std::ofstream os(out_dir + "/loso.csv", std::ios::trunc);
        os << "fold,accuracy,samples,latency_mean_s\n";
        char buf[160];
        for (const auto& fold : report.folds) {
            std::snprintf(buf, sizeof(buf), "%s,%.6f,%zu,%.6f\n", fold.held_out.c_str(),
                          fold.eval.accuracy, fold.eval.n_samples, fold.eval.latency_mean_s);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), "mean,%.6f,,\n", report.mean_accuracy);
        os << buf;
    }
    for (const auto& fold : report.folds) {
        const std::string fold_dir = out_dir + "/fold_" + fold.held_out;
        ensure_dir(fold_dir);
        write_history_csv(fold_dir + "/metrics.csv", fold.history);
        write_eval_outputs(fold_dir, fold.eval);
    }
    echo_config(run, out_dir);
    std::cout << "LOSO mean accuracy " << report.mean_accuracy << " over " << report.folds.size()
              << " folds\n";
    return kExitOk;
}

int cmd_sweep(const RunConfig& run, const std::vector<std::size_t>& sizes,
              const std::string& out_dir) {
    auto data = gather_samples(run);
    raaf::train::LosoOptions opts = loso_options(run);
    auto points = raaf::train::sweep_labeled_data(data, opts, sizes);

    ensure_dir(out_dir);
    std::ofstream os(out_dir + "/sweep.csv", std::ios::trunc);
    os << "requested_size,mean_accuracy\n";
    char buf[96];
    for (const auto& point : points) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f\n", point.requested, point.report.mean_accuracy);
        os << buf;
        std::cout << "size " << point.requested << ": mean accuracy "
                  << point.report.mean_accuracy << "\n";
    }
    echo_config(run, out_dir);
    return kExitOk;
}

int cmd_bench(const RunConfig& run, std::size_t n_samples, const std::string& out_dir) {
    raaf::model::RaafModel net(run.model, run.train.seed);
    auto samples = raaf::synthetic::make_random_samples(run.model, n_samples, run.model.n_classes,
                                                        run.train.seed);
    raaf::train::EvalOptions opts;
    opts.seed = run.train.seed;
    raaf::train::EvalResult eval = raaf::train::evaluate(net, samples, opts);

    ensure_dir(out_dir);
    std::ofstream os(out_dir + "/bench.csv", std::ios::trunc);
    os << "samples,latency_mean_s,latency_p95_s\n";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", eval.n_samples, eval.latency_mean_s,
                  eval.latency_p95_s);
    os << buf;
    std::cout << "latency over " << eval.n_samples << " samples: mean " << eval.latency_mean_s
              << " s, p95 " << eval.latency_p95_s << " s\n";
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials) {
    auto results = raaf::gradcheck::run_all(seed, trials);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": max rel err "
                  << r.max_rel_err << " (tolerance " << r.tolerance << ", " << r.trials
                  << " trials)\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-stream recurrent attention pipeline for wearable-sensor activity frames"};
    app.require_subcommand(1);

    std::string config_path;
    std::string dataset_name;
    std::string out_dir;
    std::string fold;
    std::string checkpoint;
    std::string checkpoint_out;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t bench_samples = 20;
    std::uint64_t gc_seed = 1234;
    std::size_t gc_trials = 100;
    std::vector<std::size_t> sizes;

    auto* ingest = app.add_subcommand("ingest", "Transform raw recordings into cached frames");
    ingest->add_option("--config", config_path)->required();
    ingest->add_option("--dataset", dataset_name);
    ingest->add_option("--out", out_dir)->required();

    auto* train_cmd = app.add_subcommand("train", "Train one leave-one-subject-out fold");
    train_cmd->add_option("--config", config_path)->required();
    train_cmd->add_option("--fold", fold)->required();
    auto* seed_opt = train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--checkpoint-out", checkpoint_out)->required();
    train_cmd->add_option("--out", out_dir);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out subject");
    eval_cmd->add_option("--config", config_path)->required();
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--fold", fold)->required();
    eval_cmd->add_option("--out", out_dir);

    auto* loso = app.add_subcommand("loso", "Full leave-one-subject-out cross-validation");
    loso->add_option("--config", config_path)->required();
    loso->add_option("--dataset", dataset_name);
    loso->add_option("--out", out_dir);
    loso->add_option("--jobs", jobs);

    auto* sweep = app.add_subcommand("sweep", "Accuracy vs labeled-training-set size");
    sweep->add_option("--config", config_path)->required();
    sweep->add_option("--sizes", sizes)->required()->delimiter(',');
    sweep->add_option("--out", out_dir);

    auto* bench = app.add_subcommand("bench", "Per-sample forward latency");
    bench->add_option("--config", config_path)->required();
    bench->add_option("--samples", bench_samples);
    bench->add_option("--out", out_dir);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gradcheck->add_option("--seed", gc_seed);
    gradcheck->add_option("--trials", gc_trials);

    auto* heatmap = app.add_subcommand("heatmap", "Glimpse heatmap and modality involvement");
    heatmap->add_option("--config", config_path)->required();
    heatmap->add_option("--checkpoint", checkpoint)->required();
    heatmap->add_option("--fold", fold)->required();
    heatmap->add_option("--out", out_dir);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_trials);

        RunConfig run = load_run_config(config_path);
        if (out_dir.empty()) out_dir = run.output_dir;

        if (ingest->parsed()) return cmd_ingest(run, dataset_name, out_dir);
        if (train_cmd->parsed()) {
            return cmd_train(run, fold, seed, seed_opt->count() > 0, checkpoint_out, out_dir);
        }
        if (eval_cmd->parsed()) return cmd_eval(run, checkpoint, fold, out_dir, false);
        if (heatmap->parsed()) return cmd_eval(run, checkpoint, fold, out_dir, true);
        if (loso->parsed()) return cmd_loso(run, dataset_name, out_dir, jobs);
        if (sweep->parsed()) return cmd_sweep(run, sizes, out_dir);
        if (bench->parsed()) return cmd_bench(run, bench_samples, out_dir);
    } catch (const raaf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const raaf::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const raaf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
