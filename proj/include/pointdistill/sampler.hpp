#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pointdistill/numerics.hpp"
#include "pointdistill/voxelizer.hpp"

namespace pdistill {

enum class ScoreKind { voxel_count, channel_max };

struct ImportanceScores {
    std::vector<double> scores;
    ScoreKind kind = ScoreKind::voxel_count;

    std::size_t size() const { return scores.size(); }
};

/// Score of a voxel = number of points inside it.
ImportanceScores voxel_importance(const VoxelGrid& grid);

/// Score of a unit = max over channels of its (teacher) feature row.
ImportanceScores point_importance(const Matrix& features);

/// The to-be-distilled subset. Row i of `coords`/`features` belongs to candidate indices[i].
struct SelectedSet {
    std::vector<std::size_t> indices;  // by descending score, ties by ascending candidate id
    Matrix coords;
    std::vector<double> scores;
    Matrix features;
    std::size_t requested = 0;

    std::size_t effective() const { return indices.size(); }
};

/// Ids of the `n` best scores (descending, ties to the lower id). Returns all ids if fewer.
std::vector<std::size_t> top_n_indices(std::span<const double> scores, std::size_t n);

SelectedSet top_n_select(const ImportanceScores& scores, const Matrix& coords, const Matrix& features,
                         std::size_t n);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

/// phi = softmax(counts / tau).
std::vector<double> reweight_voxel(std::span<const double> counts_sel, double tau);
/// phi = softmax(rowmax(G_T) / tau). Teacher-derived; callers treat it as a constant.
std::vector<double> reweight_point(const Matrix& graph_teacher, double tau);

std::vector<double> uniform_weights(std::size_t n);

/// Shannon entropy in nats.
double entropy(std::span<const double> p);

}  // namespace pdistill
