#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "support.hpp"

using namespace pdistill;

namespace {

GridConfig unit_grid() {
    GridConfig g;
    g.origin = {0.0, 0.0, 0.0};
    g.voxel_size = {1.0, 1.0, 1.0};
    g.bounds = {4.0, 4.0, 4.0};
    return g;
}

PointCloud cloud_of(std::initializer_list<Point> pts) { return PointCloud{pts, "t"}; }

}  // namespace

TEST(Voxelize, FloorConvention) {
    const VoxelGrid g = voxelize(cloud_of({{0.5, 0.5, 0.5, 0.0}}), unit_grid());
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g.occupied[0].cell, (CellIndex{0, 0, 0}));
    EXPECT_EQ(g.centers[0], (Vec3{0.5, 0.5, 0.5}));
}

TEST(Voxelize, HalfOpenCells) {
    const VoxelGrid g = voxelize(cloud_of({{1.0, 0.2, 0.2, 0.0}}), unit_grid());
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g.occupied[0].cell, (CellIndex{1, 0, 0}));
}

TEST(Voxelize, OutOfBoundsCountedAsDiscards) {
    const VoxelGrid g = voxelize(cloud_of({{4.0, 1.0, 1.0, 0.0}, {-0.01, 1.0, 1.0, 0.0}, {1.0, 1.0, 1.0, 0.0}}), unit_grid());
    EXPECT_EQ(g.size(), 1u);
    EXPECT_EQ(g.discarded, 2u);
}

TEST(Voxelize, EmptyCloud) {
    const VoxelGrid g = voxelize(PointCloud{}, unit_grid());
    EXPECT_TRUE(g.empty());
    EXPECT_EQ(g.discarded, 0u);
}

TEST(Voxelize, InvalidConfigRejected) {
    GridConfig g = unit_grid();
    g.voxel_size[1] = 0.0;
    EXPECT_THROW(g.validate(), DomainError);
    GridConfig h = unit_grid();
    h.bounds[0] = -1.0;
    EXPECT_THROW(h.validate(), DomainError);
}

TEST(VoxelizeProperty, PartitionConservationAndOrder) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SceneSpec spec;  // defaults: ~10k points
        spec.seed = seed;
        const PointCloud pc = synth_scene(spec);
        const GridConfig cfg;
        const VoxelGrid g = voxelize(pc, cfg);

        std::vector<int> seen(pc.size(), 0);
        std::size_t total = 0;
        for (std::size_t v = 0; v < g.size(); ++v) {
            EXPECT_EQ(g.counts[v], g.occupied[v].point_ids.size());
            EXPECT_GE(g.counts[v], 1u);
            total += g.counts[v];
            for (const std::size_t id : g.occupied[v].point_ids) {
                ++seen[id];
                const Point& p = pc.points[id];
                const double xyz[3] = {p.x, p.y, p.z};
                for (int a = 0; a < 3; ++a) {
                    EXPECT_EQ(static_cast<std::int64_t>(std::floor((xyz[a] - cfg.origin[a]) / cfg.voxel_size[a])),
                              g.occupied[v].cell[a]);
                }
            }
            if (v > 0) {
                const auto& a = g.occupied[v - 1].cell;
                const auto& b = g.occupied[v].cell;
                EXPECT_LT(std::tie(a[2], a[1], a[0]), std::tie(b[2], b[1], b[0]));
            }
        }
        EXPECT_EQ(total + g.discarded, pc.size());
        std::size_t out_of_bounds = 0;
        for (std::size_t i = 0; i < pc.size(); ++i) {
            EXPECT_LE(seen[i], 1);
            if (seen[i] == 0) ++out_of_bounds;
        }
        EXPECT_EQ(out_of_bounds, g.discarded);
    }
}

TEST(VoxelizeProperty, TranslationCovariance) {
    Rng rng(21);
    const PointCloud pc = synth_scene(pdtest::small_scene(4));
    const GridConfig cfg = pdtest::small_grid();
    const VoxelGrid base = voxelize(pc, cfg);
    for (int trial = 0; trial < 10; ++trial) {
        // Integer multiples of the cell size keep every float comparison exact.
        const double shift[3] = {0.5 * static_cast<double>(rng.uniform_int(0, 40)) - 10.0,
                                 0.5 * static_cast<double>(rng.uniform_int(0, 40)) - 10.0,
                                 0.5 * static_cast<double>(rng.uniform_int(0, 8)) - 2.0};
        PointCloud moved = pc;
        for (Point& p : moved.points) {
            p.x += shift[0];
            p.y += shift[1];
            p.z += shift[2];
        }
        GridConfig mc = cfg;
        for (int a = 0; a < 3; ++a) {
            mc.origin[a] += shift[a];
            mc.bounds[a] += shift[a];
        }
        const VoxelGrid g = voxelize(moved, mc);
        ASSERT_EQ(g.size(), base.size());
        EXPECT_EQ(g.counts, base.counts);
        for (std::size_t v = 0; v < g.size(); ++v) {
            EXPECT_EQ(g.occupied[v].cell, base.occupied[v].cell);
            EXPECT_EQ(g.occupied[v].point_ids, base.occupied[v].point_ids);
        }
    }
}

TEST(Voxelize, PillarModeUsesOneZBin) {
    const GridConfig cfg = GridConfig::pillar({0.0, 0.0, -1.0}, 1.0, 1.0, {4.0, 4.0, 3.0});
    const VoxelGrid g = voxelize(cloud_of({{0.5, 0.5, -0.9, 0.0}, {0.5, 0.5, 2.9, 0.0}, {1.5, 0.5, 0.0, 0.0}}), cfg);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g.counts[0], 2u);
    EXPECT_EQ(g.occupied[0].cell[2], 0);
    const Matrix kc = g.knn_coords();
    EXPECT_EQ(kc.cols, 2u);
    EXPECT_EQ(kc(1, 0), 1.5);
}

TEST(VoxelFeatures, SinglePointAtCenter) {
    const PointCloud pc = cloud_of({{2.5, 1.5, 0.5, 0.25}});
    const VoxelGrid g = voxelize(pc, unit_grid());
    const Matrix f = voxel_input_features(g, pc);
    ASSERT_EQ(f.cols, kVoxelFeatureWidth);
    EXPECT_EQ(f(0, 0), f(0, 4));
    EXPECT_EQ(f(0, 1), f(0, 5));
    EXPECT_EQ(f(0, 2), f(0, 6));
    EXPECT_EQ(f(0, 3), 0.25);
    EXPECT_NEAR(f(0, 7), std::log(2.0), 1e-15);
}

TEST(VoxelFeatures, SymmetricPairMeansCenter) {
    const PointCloud pc = cloud_of({{1.25, 1.5, 1.75, 0.0}, {1.75, 1.5, 1.25, 1.0}});
    const VoxelGrid g = voxelize(pc, unit_grid());
    const Matrix f = voxel_input_features(g, pc);
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(f(0, a), 1.5, 1e-15);
    EXPECT_NEAR(f(0, 3), 0.5, 1e-15);
    EXPECT_NEAR(f(0, 7), std::log(3.0), 1e-15);
}

TEST(VoxelFeatures, RowsMatchRecomputation) {
    const PointCloud pc = synth_scene(pdtest::small_scene(8));
    const VoxelGrid g = voxelize(pc, pdtest::small_grid());
    const Matrix f = voxel_input_features(g, pc);
    ASSERT_EQ(f.rows, g.size());
    for (std::size_t v = 0; v < g.size(); v += 7) {
        double sum[4] = {0, 0, 0, 0};
        for (const std::size_t id : g.occupied[v].point_ids) {
            const Point& p = pc.points[id];
            sum[0] += p.x;
            sum[1] += p.y;
            sum[2] += p.z;
            sum[3] += p.intensity;
        }
        const double n = static_cast<double>(g.occupied[v].point_ids.size());
        for (int a = 0; a < 4; ++a) EXPECT_NEAR(f(v, a), sum[a] / n, 1e-12);
        for (int a = 0; a < 3; ++a) {
            const double center = g.config.origin[a] + (static_cast<double>(g.occupied[v].cell[a]) + 0.5) * g.config.voxel_size[a];
            EXPECT_NEAR(f(v, 4 + a), center, 1e-12);
        }
        EXPECT_NEAR(f(v, 7), std::log1p(n), 1e-15);
    }
}

TEST(CountHistogram, ConservesVoxelsAndPoints) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        SceneSpec spec;
        spec.seed = seed;
        const PointCloud pc = synth_scene(spec);
        const VoxelGrid g = voxelize(pc, GridConfig{});
        const auto hist = count_histogram(g);
        EXPECT_EQ(hist[0], 0u);
        std::size_t voxels = 0, points = 0;
        for (std::size_t c = 0; c < hist.size(); ++c) {
            voxels += hist[c];
            points += c * hist[c];
        }
        EXPECT_EQ(voxels, g.size());
        EXPECT_EQ(points + g.discarded, pc.size());
        EXPECT_DOUBLE_EQ(single_point_fraction(g), static_cast<double>(hist[1]) / static_cast<double>(g.size()));
    }
}

TEST(CountHistogram, HandBuiltCase) {
    const PointCloud pc = cloud_of({{0.1, 0.1, 0.1, 0}, {0.2, 0.2, 0.2, 0}, {1.5, 0.5, 0.5, 0}, {2.5, 0.5, 0.5, 0},
                                    {2.6, 0.6, 0.6, 0}, {2.7, 0.7, 0.7, 0}});
    const VoxelGrid g = voxelize(pc, unit_grid());
    EXPECT_EQ(count_histogram(g), (std::vector<std::size_t>{0, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(single_point_fraction(g), 1.0 / 3.0);
}
