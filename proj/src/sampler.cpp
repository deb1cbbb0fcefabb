#include "pointdistill/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pointdistill/errors.hpp"

namespace pdistill {

ImportanceScores voxel_importance(const VoxelGrid& grid) {
    if (grid.empty()) throw DomainError("voxel_importance: grid has no occupied voxels");
    ImportanceScores s;
    s.kind = ScoreKind::voxel_count;
    s.scores.reserve(grid.size());
    for (const auto& v : grid.occupied) s.scores.push_back(static_cast<double>(v.point_ids.size()));
    return s;
}

ImportanceScores point_importance(const Matrix& features) {
    if (features.cols == 0) throw DomainError("point_importance: features need at least one channel");
    ImportanceScores s;
    s.kind = ScoreKind::channel_max;
    s.scores.resize(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) {
        const auto row = features.row(i);
        s.scores[i] = *std::max_element(row.begin(), row.end());
    }
    return s;
}

std::vector<std::size_t> top_n_indices(std::span<const double> scores, std::size_t n) {
    if (n == 0) throw DomainError("top_n_select: N must be at least 1");
    std::vector<std::size_t> ids(scores.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    const auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    const std::size_t keep = std::min(n, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(), better);
    ids.resize(keep);
    return ids;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m.rows) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(m.rows, m.cols));
        }
        std::copy_n(m.row(rows[i]).begin(), m.cols, out.row(i).begin());
    }
    return out;
}

SelectedSet top_n_select(const ImportanceScores& scores, const Matrix& coords, const Matrix& features,
                         std::size_t n) {
    if (coords.rows != scores.size() || features.rows != scores.size()) {
        throw ShapeError("top_n_select: " + std::to_string(scores.size()) + " scores vs coords " +
                         shape_str(coords.rows, coords.cols) + " and features " +
                         shape_str(features.rows, features.cols));
    }
    SelectedSet sel;
    sel.requested = n;
    sel.indices = top_n_indices(scores.scores, n);
    sel.coords = gather_rows(coords, sel.indices);
    sel.features = gather_rows(features, sel.indices);
    sel.scores.reserve(sel.indices.size());
    for (const auto id : sel.indices) sel.scores.push_back(scores.scores[id]);
    return sel;
}

std::vector<double> reweight_voxel(std::span<const double> counts_sel, double tau) {
    return softmax_temp(counts_sel, tau);
}

std::vector<double> reweight_point(const Matrix& graph_teacher, double tau) {
    return softmax_temp(point_importance(graph_teacher).scores, tau);
}

std::vector<double> uniform_weights(std::size_t n) {
    if (n == 0) throw DomainError("uniform_weights: empty set");
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (const double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

}  // namespace pdistill
