#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pointdistill/commands.hpp"
#include "pointdistill/errors.hpp"

namespace fs = std::filesystem;
using namespace pdistill;

namespace {

std::ofstream open_output(const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot open " + (dir / name).string() + " for writing");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local-graph knowledge distillation for point-cloud encoders"};
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool print_defaults = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "run seed (overrides the config)");
    app.add_option("--out", out_dir, "output directory");
    app.add_flag("--print-defaults", print_defaults, "print every config key with its default and exit");
    app.add_option("--set", overrides, "override one config key, key=value (repeatable)");

    auto* synth = app.add_subcommand("synth", "write synthetic frames");
    std::optional<std::size_t> frames;
    synth->add_option("--frames", frames, "number of frames (overrides synth.frames)");

    auto* train = app.add_subcommand("train", "run distillation and write metrics, report and checkpoints");

    auto* inspect = app.add_subcommand("inspect-scores", "dump importance scores and selection for one frame");
    std::string frame;
    inspect->add_option("frame", frame, "frame file (.bin)")->required();

    auto* bench = app.add_subcommand("knn-bench", "time brute-force vs grid KNN and check they agree");

    auto* sweep = app.add_subcommand("sweep", "one training run per value of K, N or tau");
    std::string axis;
    std::vector<double> values;
    bool parallel = false;
    sweep->add_option("--axis", axis, "K | N | tau")->required();
    sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');
    sweep->add_flag("--parallel", parallel, "run values concurrently (same output as serial)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (print_defaults) {
        std::cout << format_config(RunConfig{});
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) apply_config_file(cfg, config_path);
        for (const auto& o : overrides) apply_override(cfg, o);
        if (seed) cfg.seed = *seed;

        if (synth->parsed()) {
            if (frames) cfg.synth_frames = *frames;
            cmd_synth(cfg, out_dir.empty() ? "frames" : out_dir, std::cout);
        } else if (train->parsed()) {
            const fs::path dir = out_dir.empty() ? "run" : out_dir;
            cmd_train(cfg, dir, std::cerr);
            std::cout << (dir / "report.json").string() << '\n';
        } else if (inspect->parsed()) {
            ScoreSummary s;
            if (out_dir.empty()) {
                s = cmd_inspect_scores(cfg, frame, std::cout);
            } else {
                auto csv = open_output(out_dir, "scores.csv");
                s = cmd_inspect_scores(cfg, frame, csv);
                if (!s.histogram.empty()) {
                    auto hist = open_output(out_dir, "histogram.csv");
                    write_histogram_csv(s.histogram, hist);
                }
            }
            std::cerr << s.candidates << " candidates, " << s.selected << " selected\n";
            if (!s.histogram.empty()) {
                std::cerr << "single-point voxel fraction: " << s.single_point_fraction << '\n';
                if (out_dir.empty()) write_histogram_csv(s.histogram, std::cerr);
            }
        } else if (bench->parsed()) {
            if (out_dir.empty()) {
                cmd_knn_bench(cfg, std::cout);
            } else {
                auto csv = open_output(out_dir, "knn_bench.csv");
                cmd_knn_bench(cfg, csv);
            }
        } else if (sweep->parsed()) {
            const SweepAxis a = parse_sweep_axis(axis);
            if (out_dir.empty()) {
                cmd_sweep(cfg, a, values, parallel, std::cout, std::cerr);
            } else {
                auto csv = open_output(out_dir, "sweep_" + axis + ".csv");
                cmd_sweep(cfg, a, values, parallel, csv, std::cerr);
            }
        }
    } catch (const TrainingAborted& e) {
        std::cerr << "training aborted at step " << e.step() << " (scene " << e.scene_id() << "): " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
