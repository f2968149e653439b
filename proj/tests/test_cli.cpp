#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "raaf/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

const char* cli_bin() { return std::getenv("RAAF_CLI_BIN"); }

CliResult run_cli(const std::string& args, const std::string& env = "") {
    const std::string out_file =
        (fs::temp_directory_path() / "raaf_cli_out.txt").string();
    const std::string cmd =
        env + (env.empty() ? "" : " ") + cli_bin() + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    r.output = ss.str();
    return r;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Builds a tiny surrogate dataset plus a fast run config; returns the
/// config path. Everything lives under one temp workspace.
struct Workspace {
    std::string root;
    std::string config;

    explicit Workspace(const char* name) {
        root = (fs::temp_directory_path() / name).string();
        fs::remove_all(root);
        fs::create_directories(root);

        raaf::synthetic::SurrogateSpec spec;
        spec.n_subjects = 2;
        spec.rows_per_block = 120;
        spec.blocks_per_class = 1;
        spec.window_seconds = 0.5;
        spec.seed = 31;
        raaf::data::DatasetConfig dataset = raaf::synthetic::write_surrogate_pamap2(root, spec);

        json run;
        run["dataset"] = json::parse(raaf::data::dataset_config_to_json(dataset));
        run["model"] = {{"conv_channels", {2, 2}},
                        {"glimpse_window", {8, 4}},
                        {"scales", 1},
                        {"glimpse_branch_dim", 8},
                        {"glimpse_dim", 12},
                        {"attn_hidden", 8},
                        {"frame_hidden", 8},
                        {"glimpses", 2},
                        {"frames_per_sample", 2},
                        {"mc_copies", 2},
                        {"location_variance", 0.22}};
        run["train"] = {{"lr", 1e-3},   {"epochs", 1},{"batch_size", 8},
                        {"seed", 2024}, {"baseline", true}, {"early_stop_patience", 0}};
        run["data_dir"] = root;
        run["output_dir"] = root + "/runs";
        config = root + "/run.json";
        std::ofstream os(config);
        os << run.dump(2);
    }
};

}  // namespace

TEST_CASE("command line surface") {
    REQUIRE_MESSAGE(cli_bin() != nullptr, "RAAF_CLI_BIN must point at the CLI binary");
    Workspace ws("raaf_cli_ws");

    SUBCASE("gradcheck subcommand prints per-layer verdicts") {
        CliResult r = run_cli("gradcheck --trials 3 --seed 9");
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("[PASS] linear") != std::string::npos);
        CHECK(r.output.find("[PASS] full_path") != std::string::npos);
    }

    SUBCASE("ingest then train, eval and heatmap") {
        const std::string cache = ws.root + "/cache";
        CliResult ing = run_cli("ingest --config " + ws.config + " --out " + cache);
        CHECK(ing.exit_code == 0);
        CHECK(fs::exists(cache + "/manifest.csv"));
        CHECK(fs::exists(cache + "/config.json"));
        CHECK(ing.output.find("ingested") != std::string::npos);

        const std::string ckpt = ws.root + "/fold.ckpt";
        CliResult tr = run_cli("train --config " + ws.config + " --fold subject101" +
                               " --checkpoint-out " + ckpt + " --out " + ws.root + "/train_out");
        CHECK(tr.exit_code == 0);
        CHECK(fs::exists(ckpt));
        CHECK(fs::exists(ckpt + ".json"));
        CHECK(fs::exists(ws.root + "/train_out/metrics.csv"));

        CliResult ev = run_cli("eval --config " + ws.config + " --checkpoint " + ckpt +
                               " --fold subject101 --out " + ws.root + "/eval_out");
        CHECK(ev.exit_code == 0);
        CHECK(fs::exists(ws.root + "/eval_out/confusion.csv"));
        CHECK(fs::exists(ws.root + "/eval_out/heatmap.csv"));
        CHECK(fs::exists(ws.root + "/eval_out/eval.csv"));

        CliResult hm = run_cli("heatmap --config " + ws.config + " --checkpoint " + ckpt +
                               " --fold subject101 --out " + ws.root + "/heat_out");
        CHECK(hm.exit_code == 0);
        REQUIRE(fs::exists(ws.root + "/heat_out/involvement.csv"));

        // involvement percentages close to 100
        std::ifstream inv(ws.root + "/heat_out/involvement.csv");
        std::string line;
        std::getline(inv, line);  // header
        double total = 0.0;
        while (std::getline(inv, line)) {
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            total += std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        }
        CHECK(std::fabs(total - 100.0) < 0.1);
    }

    SUBCASE("training runs are reproducible and seed-sensitive") {
        const std::string ck_a = ws.root + "/a.ckpt";
        const std::string ck_b = ws.root + "/b.ckpt";
        const std::string ck_c = ws.root + "/c.ckpt";
        CHECK(run_cli("train --config " + ws.config + " --fold subject102 --checkpoint-out " +
                      ck_a + " --out " + ws.root + "/ra")
                  .exit_code == 0);
        CHECK(run_cli("train --config " + ws.config + " --fold subject102 --checkpoint-out " +
                      ck_b + " --out " + ws.root + "/rb")
                  .exit_code == 0);
        CHECK(file_bytes(ck_a) == file_bytes(ck_b));
        CHECK(file_bytes(ws.root + "/ra/metrics.csv") == file_bytes(ws.root + "/rb/metrics.csv"));

        CHECK(run_cli("train --config " + ws.config + " --fold subject102 --checkpoint-out " +
                          ck_c + " --out " + ws.root + "/rc",
                      "RAAF_SEED=999")
                  .exit_code == 0);
        CHECK(file_bytes(ck_a) != file_bytes(ck_c));
    }

    SUBCASE("loso and sweep write comma-separated reports") {
        CliResult ls = run_cli("loso --config " + ws.config + " --out " + ws.root + "/loso_out");
        CHECK(ls.exit_code == 0);
        CHECK(ls.output.find("mean accuracy") != std::string::npos);
        REQUIRE(fs::exists(ws.root + "/loso_out/loso.csv"));
        std::ifstream loso_csv(ws.root + "/loso_out/loso.csv");
        std::string line;
        std::getline(loso_csv, line);
        CHECK(line == "fold,accuracy,samples,latency_mean_s");
        std::size_t fold_lines = 0;
        bool has_mean = false;
        while (std::getline(loso_csv, line)) {
            if (line.rfind("mean,", 0) == 0) has_mean = true;
            else ++fold_lines;
        }
        CHECK(fold_lines == 2);
        CHECK(has_mean);
        CHECK(fs::exists(ws.root + "/loso_out/fold_subject101/metrics.csv"));
        CHECK(fs::exists(ws.root + "/loso_out/fold_subject102/confusion.csv"));

        CliResult sw = run_cli("sweep --config " + ws.config + " --sizes 6,12 --out " + ws.root +
                               "/sweep_out");
        CHECK(sw.exit_code == 0);
        REQUIRE(fs::exists(ws.root + "/sweep_out/sweep.csv"));
        std::ifstream sweep_csv(ws.root + "/sweep_out/sweep.csv");
        std::getline(sweep_csv, line);
        CHECK(line == "requested_size,mean_accuracy");
        std::size_t rows = 0;
        while (std::getline(sweep_csv, line)) rows += !line.empty();
        CHECK(rows == 2);
    }

    SUBCASE("bench reports latency") {
        CliResult r = run_cli("bench --config " + ws.config + " --samples 4 --out " + ws.root +
                              "/bench_out");
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("latency") != std::string::npos);
        CHECK(fs::exists(ws.root + "/bench_out/bench.csv"));
    }

    SUBCASE("exit codes distinguish config and data errors") {
        CliResult bad_json = run_cli("loso --config " + ws.root + "/missing.json");
        CHECK(bad_json.exit_code == 2);

        const std::string broken = ws.root + "/broken.json";
        {
            std::ofstream os(broken);
            os << "{ not json";
        }
        CHECK(run_cli("loso --config " + broken).exit_code == 2);

        // valid config pointing at a directory without data files
        json j = json::parse(file_bytes(ws.config));
        j["data_dir"] = ws.root + "/nowhere";
        const std::string moved = ws.root + "/moved.json";
        {
            std::ofstream os(moved);
            os << j.dump();
        }
        CHECK(run_cli("ingest --config " + moved + " --out " + ws.root + "/x").exit_code == 3);

        // dataset name mismatch
        CHECK(run_cli("ingest --config " + ws.config + " --dataset wrong --out " + ws.root + "/y")
                  .exit_code == 2);
    }
}
