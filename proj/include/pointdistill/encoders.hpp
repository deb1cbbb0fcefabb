#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pointdistill/numerics.hpp"
#include "pointdistill/pointcloud.hpp"
#include "pointdistill/rng.hpp"
#include "pointdistill/voxelizer.hpp"

namespace pdistill {

/// Stack of linear -> batch norm -> ReLU blocks.
struct EncoderParams {
    std::vector<DenseBlock> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().linear.in_dim(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().linear.out_dim(); }

    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// `widths` are the output widths of successive layers.
EncoderParams make_encoder(std::size_t in_dim, const std::vector<std::size_t>& widths, Rng& rng);

struct EncoderCache {
    std::vector<DenseBlockCache> layers;
};

struct EncoderGrads {
    std::vector<DenseBlockGrads> layers;

    EncoderGrads() = default;
    explicit EncoderGrads(const EncoderParams& like);
    void accumulate(const EncoderGrads& other);
    void scale_by(double f);
};

/// Running stats are left untouched; see apply_running_stats.
Matrix encoder_forward(const EncoderParams& p, const Matrix& X, BnMode bn_mode, EncoderCache* cache = nullptr);
Matrix encoder_backward(const EncoderParams& p, const EncoderCache& cache, const Matrix& dY, EncoderGrads& grads);
void apply_running_stats(EncoderParams& p, const EncoderCache& cache);

void collect_slots(EncoderParams& p, const EncoderGrads& g, std::vector<ParamSlot>& out);

/// FNV-1a over every stored real (weights, biases, batch-norm parameters and stats).
std::uint64_t param_hash(const EncoderParams& p);

/// What the encoders consume per candidate unit.
enum class UnitKind { voxel, point };

inline constexpr std::size_t kPointFeatureWidth = 4;

/// Raw xyz + intensity per point.
Matrix point_input_features(const PointCloud& cloud);

enum class TeacherMode { frozen_random, proxy_trained };

struct TeacherConfig {
    TeacherMode mode = TeacherMode::proxy_trained;
    std::uint64_t seed = 0;
    UnitKind unit = UnitKind::voxel;
    std::vector<std::size_t> widths{64, 64};
    // proxy task
    std::size_t steps = 300;
    double lr = 1e-2;
    double momentum = 0.9;
    std::size_t scenes = 4;
    SceneSpec scene;
    GridConfig grid;
};

struct TeacherProvenance {
    TeacherMode mode = TeacherMode::frozen_random;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double proxy_loss_initial = 0.0;
    double proxy_loss_final = 0.0;

    std::string to_string() const;
};

/// A teacher encoder that cannot be modified after construction.
class TeacherArtifact {
public:
    TeacherArtifact(EncoderParams params, TeacherProvenance provenance)
        : params_(std::move(params)), provenance_(provenance) {}

    const EncoderParams& params() const { return params_; }
    const TeacherProvenance& provenance() const { return provenance_; }

private:
    EncoderParams params_;
    TeacherProvenance provenance_;
};

/// frozen_random: seeded init with unit batch-norm stats. proxy_trained: regress
/// log(1 + voxel count) per unit through a throwaway linear head, then freeze. Both end in eval mode.
TeacherArtifact make_teacher(const TeacherConfig& cfg);

/// Regression target and inputs for the proxy task on one scene.
struct ProxyBatch {
    Matrix inputs;
    std::vector<double> targets;
};
ProxyBatch proxy_batch(const PointCloud& cloud, const GridConfig& grid, UnitKind unit);

// Checkpoints: see docs/checkpoint_format.md.

struct Checkpoint {
    std::string kind;         // encoder | gamma_student | gamma_teacher | adapter
    std::string provenance;   // free text, single line
    std::vector<LinearParams> linears;
    std::vector<bool> has_bn;
    std::vector<BatchNormState> norms;  // parallel to linears; ignored where !has_bn
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const EncoderParams& p, std::string kind, std::string provenance);
EncoderParams encoder_from_checkpoint(const Checkpoint& ck);

}  // namespace pdistill
