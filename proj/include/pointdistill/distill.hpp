#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pointdistill/encoders.hpp"
#include "pointdistill/graph.hpp"
#include "pointdistill/numerics.hpp"
#include "pointdistill/pointcloud.hpp"
#include "pointdistill/sampler.hpp"
#include "pointdistill/voxelizer.hpp"

namespace pdistill {

/// local: match graph features G^S, G^T. feature: match adapter(A^S) against A^T directly.
enum class DistillMode { local, feature };
/// importance: phi = softmax(score / tau). uniform: phi = 1/N.
enum class Reweight { importance, uniform };

struct DistillConfig {
    DistillMode mode = DistillMode::local;
    Reweight reweight = Reweight::importance;
    UnitKind unit = UnitKind::voxel;
    std::size_t N = 1024;
    std::size_t K = 16;
    double tau = 1.0;
    std::size_t c_out = 0;  // 0: use the teacher width
    double lr = 1e-2;
    double momentum = 0.9;
    std::size_t steps = 500;
    std::size_t batch = 1;
    std::uint64_t seed = 0;
    /// Propagate -dL/dG^S into the teacher-side aggregator as well. Off by default: the
    /// teacher branch is a stop-gradient target.
    bool train_gamma_teacher = false;

    void validate() const;
};

/// (1/N) sum_i phi_i ||G_S[i] - G_T[i]||^2 and its gradient w.r.t. G_S.
struct LossResult {
    double loss = 0.0;
    Matrix grad;
};
LossResult distill_loss(const Matrix& g_student, const Matrix& g_teacher, std::span<const double> phi);

/// Mean over rows of cos(a_i, b_i); rows where either side is zero count as 0.
double mean_row_cosine(const Matrix& a, const Matrix& b);
/// Sum over rows of w_i cos(a_i, b_i).
double weighted_row_cosine(const Matrix& a, const Matrix& b, std::span<const double> w);

struct DistillState {
    TeacherArtifact teacher;
    EncoderParams student;
    GammaParams gamma_s;
    GammaParams gamma_t;
    LinearParams adapter;  // feature mode only
    std::vector<std::vector<double>> velocity;
    std::size_t step = 0;
};

/// Fresh student (seeded), aggregators and adapter for the given teacher.
DistillState init_state(TeacherArtifact teacher, const DistillConfig& cfg, const std::vector<std::size_t>& student_widths);

/// Everything that depends only on the scene and the frozen teacher encoder: candidates,
/// scores, the top-N selection and its neighbor lists. Cacheable per scene.
struct TeacherView {
    std::string scene_id;
    std::size_t candidates = 0;
    Matrix inputs;                  // encoder inputs for every candidate
    ImportanceScores scores;
    SelectedSet selection;          // features = A^T
    NeighborLists nbrs;

    bool empty() const { return selection.effective() == 0; }
};

TeacherView make_teacher_view(const PointCloud& cloud, const TeacherArtifact& teacher, const DistillConfig& cfg,
                              const GridConfig& grid, std::size_t workers = 1);

struct Intermediates {
    bool skipped = false;
    std::string scene_id;
    std::size_t n_effective = 0;
    std::vector<std::size_t> student_indices;  // rows of the student features that were matched
    EncoderCache student_cache;
    Matrix student_features;                   // all candidates
    Matrix A_S;
    FusedGraphCache gs_cache;
    FusedGraphCache gt_cache;
    Matrix G_S;
    Matrix G_T;
    Matrix adapted;                            // feature mode: adapter(A_S)
    std::vector<double> phi;
    double loss = 0.0;
    Matrix dmatched;                           // dL/d(G_S) or dL/d(adapted)
};

Intermediates forward_view(const TeacherView& view, const DistillState& state, const DistillConfig& cfg,
                           BnMode bn_mode);
Intermediates forward_pipeline(const PointCloud& cloud, const DistillState& state, const DistillConfig& cfg,
                               const GridConfig& grid, BnMode bn_mode);

struct Gradients {
    EncoderGrads student;
    DenseBlockGrads gamma_s;
    DenseBlockGrads gamma_t;
    LinearParams adapter;

    Gradients() = default;
    explicit Gradients(const DistillState& like);
    void accumulate(const Gradients& other);
    void scale_by(double f);
};

Gradients backward_pipeline(const Intermediates& im, const TeacherView& view, const DistillState& state,
                            const DistillConfig& cfg);

/// Trainable (value, grad) pairs in a fixed order for the configured mode.
std::vector<ParamSlot> trainable_slots(DistillState& state, const Gradients& grads, const DistillConfig& cfg);

struct StepMetrics {
    std::size_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double phi_entropy = 0.0;
    double n_effective = 0.0;
    bool skipped = false;
};

/// One optimizer step on the mean loss over `views`. Scenes run concurrently up to `workers`;
/// gradients and running statistics are folded in scene order.
StepMetrics train_step(std::span<const TeacherView* const> views, DistillState& state, const DistillConfig& cfg,
                       std::size_t workers = 1);

struct EvalResult {
    double loss = 0.0;
    double alignment = 0.0;           // mean row cosine of the matched pair
    double alignment_weighted = 0.0;  // phi-weighted row cosine
};

/// Batch-statistics forward on each view without touching `state`.
EvalResult evaluate(std::span<const TeacherView> views, const DistillState& state, const DistillConfig& cfg);

struct TrainSetup {
    DistillConfig distill;
    TeacherConfig teacher;
    std::vector<std::size_t> student_widths{16, 16};
    GridConfig grid;
    SceneSpec scene;
    std::size_t train_scenes = 8;
    std::filesystem::path data_dir;   // if set, frames are loaded from *.bin files here
    std::filesystem::path out_dir;    // if set, metrics/report/checkpoints are written here
    std::size_t flush_every = 50;
    std::size_t workers = 1;
    std::map<std::string, std::string> config_echo;
};

struct RunReport {
    std::map<std::string, std::string> config;
    std::vector<StepMetrics> metrics;
    EvalResult initial;
    EvalResult final;
    std::uint64_t teacher_hash_before = 0;
    std::uint64_t teacher_hash_after = 0;
    std::string teacher_provenance;
    std::vector<std::string> checkpoints;
};

/// Seed of the index-th synthetic scene of a run.
std::uint64_t scene_seed(std::uint64_t run_seed, std::size_t index);

/// Scene pool for a setup: synthetic scenes from seed streams, or frames from data_dir.
std::vector<PointCloud> load_scenes(const TrainSetup& setup);

/// Full loop. Writes metrics.csv, report.json and checkpoints/ when out_dir is set.
RunReport train(const TrainSetup& setup);
/// Same, reusing an already built teacher.
RunReport train(const TrainSetup& setup, const TeacherArtifact& teacher);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);
std::string report_json(const RunReport& r);

}  // namespace pdistill
