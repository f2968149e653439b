// Acceptance suite: runs every gate criterion end to end and prints one
// [PASS]/[FAIL] line per criterion. Returns nonzero if any gate fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "raaf/dataset.hpp"
#include "raaf/frame.hpp"
#include "raaf/gradcheck.hpp"
#include "raaf/model.hpp"
#include "raaf/nn.hpp"
#include "raaf/synthetic.hpp"
#include "raaf/train.hpp"

namespace fs = std::filesystem;
using namespace raaf;

namespace {

std::string g_cli_path;

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw Failure(message);
}

std::string workspace(const char* name) {
    const std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), "cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = g_cli_path + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// -------------------------------------------------------------------------

void criterion_permutation_exactness() {
    const std::vector<std::size_t> expected{1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 3, 5, 7, 9, 2, 4, 6, 8,
                                            1, 4, 7, 1, 5, 8, 2, 5, 9, 3, 6, 9, 4, 8, 3, 7, 2, 6,
                                            1};
    require(frames::build_permutation(9).seq == expected,
            "permutation for 9 rows deviates from the reference sequence");
}

void criterion_pair_coverage() {
    for (std::size_t n : {3u, 5u, 7u, 9u, 11u, 13u}) {
        frames::PermutationSequence perm = frames::build_permutation(n);
        require(perm.seq.size() == n * (n - 1) / 2 + 1,
                "length law violated for n=" + std::to_string(n));
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (std::size_t i = 0; i + 1 < perm.seq.size(); ++i) {
            seen.insert({std::min(perm.seq[i], perm.seq[i + 1]),
                         std::max(perm.seq[i], perm.seq[i + 1])});
        }
        require(seen.size() == n * (n - 1) / 2,
                "pair coverage violated for n=" + std::to_string(n));
    }
}

void criterion_expansion_templates() {
    Rng rng(123);
    const std::size_t odd_axes[9] = {0, 1, 2, 0, 1, 2, 0, 1, 2};
    const std::size_t even_axes[9] = {0, 1, 2, 1, 2, 0, 2, 0, 1};
    for (int trial = 0; trial < 200; ++trial) {
        const std::array<double, 3> row{rng.normal(), rng.normal(), rng.normal()};
        const auto odd = frames::expand_row(row, 2 * rng.index(100) + 1);
        const auto even = frames::expand_row(row, 2 * (rng.index(100) + 1));
        for (std::size_t k = 0; k < 9; ++k) {
            require(odd[k] == row[odd_axes[k]], "odd expansion template mismatch");
            require(even[k] == row[even_axes[k]], "even expansion template mismatch");
        }
    }
}

void criterion_gradient_suite() {
    for (const auto& result : gradcheck::run_all(20240809, 100)) {
        std::ostringstream msg;
        msg << result.name << ": max rel err " << result.max_rel_err << " vs tolerance "
            << result.tolerance;
        require(result.pass, msg.str());
    }
}

void criterion_reinforce_unbiased() {
    const Tensor theta = Tensor::from({3}, {0.2, -0.1, 0.4});
    const double arm_reward[3] = {1.0, 0.0, 0.5};
    const Tensor probs = nn::softmax(theta);

    double expected_reward = 0.0;
    for (std::size_t a = 0; a < 3; ++a) expected_reward += probs[a] * arm_reward[a];

    const int episodes = 10000;
    Rng rng(777001);
    double sum[3] = {0, 0, 0}, sum_sq[3] = {0, 0, 0};
    for (int e = 0; e < episodes; ++e) {
        const double u = rng.uniform();
        std::size_t arm = 0;
        double acc = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            acc += probs[a];
            if (u < acc) {
                arm = a;
                break;
            }
        }
        Tensor g = nn::softmax_xent_backward(probs, arm, -arm_reward[arm]);
        for (std::size_t j = 0; j < 3; ++j) {
            sum[j] += g[j];
            sum_sq[j] += g[j] * g[j];
        }
    }
    for (std::size_t j = 0; j < 3; ++j) {
        const double mean = sum[j] / episodes;
        const double var = sum_sq[j] / episodes - mean * mean;
        const double se = std::sqrt(var / episodes);
        const double truth = probs[j] * (arm_reward[j] - expected_reward);
        std::ostringstream msg;
        msg << "component " << j << ": estimate " << mean << " vs " << truth << " (3se "
            << 3 * se << ")";
        require(std::fabs(mean - truth) <= 3.0 * se, msg.str());
    }
}

double best_train_accuracy(bool freeze_location) {
    auto data = synthetic::make_quadrant_dataset({});
    model::ModelConfig mc = synthetic::quadrant_model_config();
    train::TrainConfig tc = synthetic::quadrant_train_config();
    tc.freeze_location = freeze_location;

    model::RaafModel net(mc, tc.seed);
    train::Trainer trainer(net, tc);
    double best = 0.0;
    for (std::size_t e = 0; e < tc.epochs; ++e) {
        best = std::max(best, trainer.train_epoch(data).accuracy);
        if (best >= 1.0) break;
    }
    return best;
}

void criterion_learning_sanity() {
    // Both runs get the benchmark's fixed epoch budget (65, well inside
    // the 200-epoch allowance).
    const double enabled = best_train_accuracy(false);
    std::ostringstream msg;
    msg << "policy-gradient run reached " << 100 * enabled << "% train accuracy";
    require(enabled >= 0.95, msg.str() + " (< 95%)");

    const double frozen = best_train_accuracy(true);
    std::ostringstream msg2;
    msg2 << "enabled " << 100 * enabled << "% vs frozen-location " << 100 * frozen << "%";
    require(enabled - frozen >= 0.10, msg2.str() + " (gap < 10 points)");
    std::cout << "        (" << msg2.str() << ")\n";
}

void criterion_determinism() {
    require(!g_cli_path.empty(), "determinism criterion needs --cli <path>");
    const std::string dir = workspace("raaf_accept_det");
    synthetic::SurrogateSpec spec;
    spec.n_subjects = 2;
    spec.rows_per_block = 120;
    spec.blocks_per_class = 1;
    spec.window_seconds = 0.5;
    data::DatasetConfig dataset = synthetic::write_surrogate_pamap2(dir, spec);

    std::ofstream os(dir + "/run.json");
    os << "{\n  \"dataset\": " << data::dataset_config_to_json(dataset)
       << ",\n  \"model\": {\"conv_channels\": [2,2], \"glimpse_window\": [8,4], \"scales\": 1,"
          " \"glimpse_branch_dim\": 8, \"glimpse_dim\": 12, \"attn_hidden\": 8,"
          " \"frame_hidden\": 8, \"glimpses\": 2, \"frames_per_sample\": 2, \"mc_copies\": 2},"
          "\n  \"train\": {\"epochs\": 2, \"batch_size\": 8, \"seed\": 99,"
          " \"early_stop_patience\": 0},\n  \"data_dir\": \""
       << dir << "\"\n}\n";
    os.close();

    for (const char* tag : {"a", "b"}) {
        const int code = run_cli("train --config " + dir + "/run.json --fold subject101" +
                                 " --checkpoint-out " + dir + "/" + tag + ".ckpt --out " + dir +
                                 "/out_" + tag);
        require(code == 0, std::string("train run ") + tag + " failed");
    }
    require(file_bytes(dir + "/a.ckpt") == file_bytes(dir + "/b.ckpt"),
            "checkpoints differ between identical runs");
    require(file_bytes(dir + "/out_a/metrics.csv") == file_bytes(dir + "/out_b/metrics.csv"),
            "metrics differ between identical runs");
}

void criterion_accounting() {
    model::ModelConfig cfg = synthetic::quadrant_model_config();
    model::RaafModel net(cfg, 17);
    auto samples = synthetic::make_quadrant_dataset({});

    train::EvalOptions opts;
    opts.seed = 41;
    train::EvalResult eval = train::evaluate(net, samples, opts);

    const std::uint64_t expected = static_cast<std::uint64_t>(samples.size()) * cfg.mc_copies *
                                   cfg.glimpses * cfg.frames_per_sample;
    require(eval.heatmap.total() == expected, "heatmap visit total != samples*M*T*F");

    std::vector<std::uint64_t> per_class(cfg.n_classes, 0);
    for (const auto& s : samples) ++per_class[s.label];
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        require(eval.confusion.row_sum(c) == per_class[c],
                "confusion row sum != class count for class " + std::to_string(c));
    }
    require(std::fabs(eval.confusion.accuracy() - eval.accuracy) < 1e-12,
            "trace/total accuracy mismatch");

    frames::FrameLayout layout(9, frames::FrameMode::kActivity);
    std::vector<std::string> groups;
    for (int i = 0; i < 9; ++i) groups.push_back("mod" + std::to_string(i));
    auto inv = train::modality_involvement(eval.heatmap, layout, groups);
    double total = 0.0;
    for (const auto& row : inv) total += row.percent;
    require(std::fabs(total - 100.0) < 0.1, "involvement percentages do not close to 100");
}

void criterion_soft_targets() {
    // Full-scale dataset accuracies are soft targets, reported when the
    // real recordings are available (see README); the gate here is that
    // the latency benchmark runs and reports per-sample figures.
    model::ModelConfig cfg;
    cfg.frame_rows = 79;
    cfg.frame_cols = 9;
    cfg.n_classes = 6;
    cfg.retina = model::RetinaConfig{64, 16, 3, 2};
    cfg.glimpses = 30;
    cfg.frames_per_sample = 5;
    cfg.mc_copies = 20;

    model::RaafModel net(cfg, 3);
    auto samples = synthetic::make_random_samples(cfg, 3, cfg.n_classes, 5);
    train::EvalOptions opts;
    opts.seed = 3;
    train::EvalResult eval = train::evaluate(net, samples, opts);
    require(eval.latency_mean_s > 0.0, "latency benchmark reported nothing");
    std::cout << "        (paper-scale forward latency: mean " << eval.latency_mean_s
              << " s/sample, p95 " << eval.latency_p95_s
              << " s; full-dataset accuracy runs are informational and need the raw recordings)\n";
}

double surrogate_loso_accuracy(const std::vector<train::SubjectSamples>& data,
                               frames::FrameMode mode, const data::DatasetConfig& dataset) {
    const std::size_t n_rows = dataset.n_rows();
    train::LosoOptions opts;
    opts.model.frame_rows =
        mode == frames::FrameMode::kActivity ? n_rows * (n_rows - 1) / 2 + 1 : n_rows;
    opts.model.frame_cols = 9;
    opts.model.n_classes = 6;
    opts.model.conv1_channels = 4;
    opts.model.conv2_channels = 8;
    opts.model.retina = model::RetinaConfig{6, 4, 2, 2};
    opts.model.glimpse_branch_dim = 16;
    opts.model.glimpse_dim = 24;
    opts.model.attn_hidden = 16;
    opts.model.frame_hidden = 32;
    opts.model.glimpses = 4;
    opts.model.frames_per_sample = 2;
    opts.model.mc_copies = 4;
    opts.model.location_variance = 0.22;

    opts.train.lr = 1e-2;
    opts.train.epochs = 120;
    opts.train.batch_size = 8;
    opts.train.seed = 4242;
    opts.train.early_stop_patience = 0;

    opts.frame_mode = mode;
    opts.row_labels = dataset.row_labels();
    return train::run_loso(data, opts).mean_accuracy;
}

void criterion_ablation_direction() {
    const std::string dir = workspace("raaf_accept_abl");
    synthetic::SurrogateSpec spec;
    spec.n_channels = 5;
    spec.rows_per_block = 200;
    spec.blocks_per_class = 8;
    spec.noise_sigma = 0.2;
    data::DatasetConfig dataset = synthetic::write_surrogate_pamap2(dir, spec);

    auto build = [&](frames::FrameMode mode) {
        auto subj = data::build_samples(dataset, dir, 2, mode);
        std::vector<train::SubjectSamples> out;
        for (auto& s : subj) out.push_back({std::move(s.subject), std::move(s.samples)});
        return out;
    };

    const double activity =
        surrogate_loso_accuracy(build(frames::FrameMode::kActivity), frames::FrameMode::kActivity,
                                dataset);
    const double stacked =
        surrogate_loso_accuracy(build(frames::FrameMode::kStacked), frames::FrameMode::kStacked,
                                dataset);
    std::ostringstream msg;
    msg << "pairwise-adjacent frames " << 100 * activity << "% vs stacked " << 100 * stacked
        << "%";
    std::cout << "        (" << msg.str() << ")\n";
    require(activity > stacked, msg.str() + " — direction violated");
}

struct Criterion {
    std::string name;
    std::function<void()> run;
};

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--cli") g_cli_path = argv[i + 1];
    }

    const std::vector<Criterion> criteria{
        {"1. permutation exactness (9 rows, 37-element sequence)", criterion_permutation_exactness},
        {"2. pair coverage and length law for odd row counts 3..13", criterion_pair_coverage},
        {"3. expansion templates (odd/even, randomized)", criterion_expansion_templates},
        {"4. finite-difference gradient suite (100 trials per layer)", criterion_gradient_suite},
        {"5. score-function estimator unbiased on a 3-arm bandit (3 s.e.)",
         criterion_reinforce_unbiased},
        {"6. learning sanity on the salient-band benchmark (>=95%, +10pt vs frozen)",
         criterion_learning_sanity},
        {"7. bit-identical checkpoints and metrics for identical seeds", criterion_determinism},
        {"8. accounting invariants (confusion rows, heatmap totals, closure)",
         criterion_accounting},
        {"9. paper-scale soft targets reported informationally", criterion_soft_targets},
        {"10. activity frames beat stacked frames on the surrogate task",
         criterion_ablation_direction},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        const auto start = std::chrono::steady_clock::now();
        try {
            criterion.run();
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::cout << "[PASS] " << criterion.name << " (" << secs << " s)\n";
        } catch (const std::exception& e) {
            ++failures;
            std::cout << "[FAIL] " << criterion.name << ": " << e.what() << "\n";
        }
        std::cout.flush();
    }
    if (failures) {
        std::cout << failures << " criterion(s) failed\n";
        return 1;
    }
    std::cout << "all acceptance criteria passed\n";
    return 0;
}
