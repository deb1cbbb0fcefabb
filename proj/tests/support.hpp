#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "pointdistill/distill.hpp"
#include "pointdistill/rng.hpp"

namespace pdtest {

using namespace pdistill;

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline DenseBlock random_block(Rng& rng, std::size_t in, std::size_t out) {
    DenseBlock b(in, out);
    init_uniform(b.linear, rng);
    for (std::size_t c = 0; c < out; ++c) {
        b.bn.scale[c] = rng.uniform(0.5, 1.5);
        b.bn.shift[c] = rng.uniform(-0.5, 0.5);
        b.bn.running_mean[c] = rng.uniform(-0.3, 0.3);
        b.bn.running_var[c] = rng.uniform(0.5, 2.0);
    }
    return b;
}

/// Clustered coordinates: a few Gaussian blobs, optionally with exact duplicates.
inline Matrix clustered_coords(Rng& rng, std::size_t n, std::size_t d, std::size_t blobs, bool duplicates) {
    Matrix centers = random_matrix(rng, blobs, d, -10.0, 10.0);
    Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t b = rng.uniform_int(0, blobs - 1);
        for (std::size_t a = 0; a < d; ++a) m(i, a) = centers(b, a) + 0.3 * rng.normal();
        if (duplicates && i > 0 && rng.uniform01() < 0.1) {
            const std::size_t src = rng.uniform_int(0, i - 1);
            for (std::size_t a = 0; a < d; ++a) m(i, a) = m(src, a);
        }
    }
    return m;
}

/// Independent KNN oracle: full sort of every row by (squared distance, id), self forced first.
inline NeighborLists knn_oracle(const Matrix& coords, std::size_t K) {
    const std::size_t n = coords.rows;
    NeighborLists out;
    out.k = std::min(K, n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (std::size_t a = 0; a < coords.cols; ++a) {
                const double diff = coords(i, a) - coords(j, a);
                d2 += diff * diff;
            }
            cand.emplace_back(d2, j);
        }
        std::sort(cand.begin(), cand.end());
        out.ids.push_back(i);
        for (std::size_t j = 0; j + 1 < out.k; ++j) out.ids.push_back(cand[j].second);
    }
    return out;
}

/// Reference weighted loss: (1/N) sum_i w_i ||a_i - b_i||^2, written independently of distill_loss.
inline double reference_loss(const Matrix& a, const Matrix& b, const std::vector<double>& w) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < a.rows; ++i) {
        long double sq = 0.0L;
        for (std::size_t c = 0; c < a.cols; ++c) {
            const long double d = static_cast<long double>(a(i, c)) - b(i, c);
            sq += d * d;
        }
        acc += w[i] * sq;
    }
    return static_cast<double>(acc / a.rows);
}

/// A cloud that occupies exactly `voxels` cells of unit_cell_grid(), 1 to 4 points per cell.
inline GridConfig unit_cell_grid() {
    GridConfig g;
    g.origin = {0.0, 0.0, 0.0};
    g.voxel_size = {1.0, 1.0, 1.0};
    g.bounds = {10.0, 10.0, 4.0};
    return g;
}

inline PointCloud fixture_cloud(std::uint64_t seed, std::size_t voxels) {
    Rng rng(seed);
    std::vector<std::size_t> cells(400);
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[rng.uniform_int(0, i - 1)]);
    PointCloud pc;
    pc.frame_id = "fixture-" + std::to_string(seed);
    for (std::size_t v = 0; v < voxels; ++v) {
        const double cx = static_cast<double>(cells[v] % 10), cy = static_cast<double>(cells[v] / 10 % 10),
                     cz = static_cast<double>(cells[v] / 100);
        const std::size_t n = 1 + rng.uniform_int(0, 3);
        for (std::size_t k = 0; k < n; ++k)
            pc.points.push_back({cx + rng.uniform(0.05, 0.95), cy + rng.uniform(0.05, 0.95), cz + rng.uniform(0.05, 0.95),
                                 rng.uniform01()});
    }
    return pc;
}

/// Randomizes running statistics so eval-mode batch norm is not an identity.
inline void randomize_running_stats(std::vector<DenseBlock*> blocks, Rng& rng) {
    for (DenseBlock* b : blocks)
        for (std::size_t c = 0; c < b->bn.channels(); ++c) {
            b->bn.running_mean[c] = rng.uniform(-0.5, 0.5);
            b->bn.running_var[c] = rng.uniform(0.3, 2.0);
            b->bn.scale[c] = rng.uniform(0.5, 1.5);
            b->bn.shift[c] = rng.uniform(-0.2, 0.5);
        }
}

/// Max relative error between backward_pipeline and central differences of forward_view's loss
/// over every trainable coordinate, batch norm in eval mode.
inline double end_to_end_grad_error(const TeacherView& view, DistillState& state, const DistillConfig& cfg,
                                    double eps = 1e-6) {
    const Intermediates im = forward_view(view, state, cfg, BnMode::eval);
    const Gradients grads = backward_pipeline(im, view, state, cfg);
    const std::vector<ParamSlot> slots = trainable_slots(state, grads, cfg);
    auto loss = [&] { return forward_view(view, state, cfg, BnMode::eval).loss; };
    double worst = 0.0;
    for (const ParamSlot& s : slots) worst = std::max(worst, grad_check(loss, s.value, s.grad, eps));
    return worst;
}

/// Small scene that voxelizes to a few hundred voxels.
inline SceneSpec small_scene(std::uint64_t seed) {
    SceneSpec s;
    s.n_ground = 400;
    s.n_clusters = 4;
    s.points_per_cluster_min = 30;
    s.points_per_cluster_max = 80;
    s.ground_extent = 6.0;
    s.n_noise = 20;
    s.seed = seed;
    return s;
}

inline GridConfig small_grid() {
    GridConfig g;
    g.origin = {-8.0, -8.0, -1.0};
    g.bounds = {8.0, 8.0, 3.0};
    g.voxel_size = {0.5, 0.5, 0.5};
    return g;
}

/// Fast setup for pipeline tests: frozen random teacher, tiny widths, small scenes.
inline TrainSetup small_setup(std::uint64_t seed) {
    TrainSetup s;
    s.distill.N = 64;
    s.distill.K = 6;
    s.distill.steps = 5;
    s.distill.seed = seed;
    s.teacher.mode = TeacherMode::frozen_random;
    s.teacher.seed = seed;
    s.teacher.widths = {12, 8};
    s.student_widths = {6, 4};
    s.scene = small_scene(0);
    s.grid = small_grid();
    s.teacher.scene = s.scene;
    s.teacher.grid = s.grid;
    s.train_scenes = 2;
    return s;
}

}  // namespace pdtest
