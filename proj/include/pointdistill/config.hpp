#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pointdistill/distill.hpp"

namespace pdistill {

/// Everything a command can be configured with. Flat `key = value` on disk.
struct RunConfig {
    std::uint64_t seed = 0;
    SceneSpec scene;
    GridConfig grid;
    std::vector<std::size_t> teacher_widths{64, 64};
    std::vector<std::size_t> student_widths{16, 16};
    TeacherMode teacher_mode = TeacherMode::proxy_trained;
    std::size_t teacher_steps = 300;
    double teacher_lr = 1e-2;
    double teacher_momentum = 0.9;
    std::size_t teacher_scenes = 4;
    DistillConfig distill;
    std::size_t train_scenes = 8;
    std::string data_dir;
    std::size_t flush_every = 50;
    std::size_t synth_frames = 4;
    std::vector<std::size_t> bench_sizes{1000, 10000, 100000};
    std::size_t bench_dims = 3;
};

struct ConfigKey {
    std::string key;
    std::string doc;
};

/// Every recognized key, in print order.
const std::vector<ConfigKey>& config_keys();

/// Applies `key = value` lines. `#` starts a comment; blank lines are ignored.
/// Unknown keys and bad values raise ConfigError naming the line number.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "<config>");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
/// One `key=value` override, as given on the command line.
void apply_override(RunConfig& cfg, const std::string& assignment);

std::string get_value(const RunConfig& cfg, const std::string& key);
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Full config as `key = value` lines with doc comments; feeding it back reproduces `cfg`.
std::string format_config(const RunConfig& cfg);

/// key -> value for report echoes.
std::map<std::string, std::string> config_map(const RunConfig& cfg);

/// Validated training setup derived from a config. Pillar grids get their z size forced to the full range.
TrainSetup make_train_setup(const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace pdistill
