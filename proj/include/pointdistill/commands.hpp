#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pointdistill/config.hpp"

namespace pdistill {

/// Writes cfg.synth_frames synthetic frames as frame_XXXXXX.bin and logs one count line per frame.
std::vector<std::filesystem::path> cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                             std::ostream& log);

/// Full training run; artifacts go to out_dir when it is non-empty.
RunReport cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

struct ScoreSummary {
    std::size_t candidates = 0;
    std::size_t selected = 0;
    std::vector<std::size_t> histogram;   // voxel units only
    double single_point_fraction = 0.0;   // voxel units only
};

/// Per-candidate scores for one frame as CSV `id,x,y,z,count,score,selected,phi`.
ScoreSummary cmd_inspect_scores(const RunConfig& cfg, const std::filesystem::path& frame, std::ostream& csv);

/// `points_per_voxel,voxels` rows for a count histogram.
void write_histogram_csv(std::span<const std::size_t> histogram, std::ostream& out);

/// Times brute-force and grid KNN for each size in cfg.bench_sizes as CSV `N,K,method,wall_ms,checked`.
void cmd_knn_bench(const RunConfig& cfg, std::ostream& csv);

enum class SweepAxis { K, N, tau };
SweepAxis parse_sweep_axis(const std::string& name);

/// One run per value sharing seed and teacher; CSV `value,final_loss,alignment`.
void cmd_sweep(const RunConfig& cfg, SweepAxis axis, std::span<const double> values, bool parallel,
               std::ostream& csv, std::ostream& log);

}  // namespace pdistill
