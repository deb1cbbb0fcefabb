#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "pointdistill/numerics.hpp"
#include "pointdistill/pointcloud.hpp"

namespace pdistill {

enum class GridMode { voxel, pillar };

using Vec3 = std::array<double, 3>;
using CellIndex = std::array<std::int64_t, 3>;

/// Half-open cells [origin + k*size, origin + (k+1)*size) clipped to [origin, bounds).
struct GridConfig {
    Vec3 origin{-20.0, -20.0, -1.0};
    Vec3 voxel_size{0.4, 0.4, 0.4};
    Vec3 bounds{20.0, 20.0, 3.0};
    GridMode mode = GridMode::voxel;

    /// Pillar grids use one z-bin spanning [origin.z, bounds.z).
    static GridConfig pillar(Vec3 origin, double dx, double dy, Vec3 bounds);

    void validate() const;
    std::array<std::int64_t, 3> dims() const;
    /// 2 for pillars (BEV), 3 for voxels.
    std::size_t coord_dims() const { return mode == GridMode::pillar ? 2 : 3; }
};

struct Voxel {
    CellIndex cell{};
    std::vector<std::size_t> point_ids;  // ascending
};

struct VoxelGrid {
    GridConfig config;
    std::vector<Voxel> occupied;        // sorted by (iz, iy, ix)
    std::vector<std::size_t> counts;    // counts[i] == occupied[i].point_ids.size()
    std::vector<Vec3> centers;
    std::size_t discarded = 0;          // points outside [origin, bounds)

    std::size_t size() const { return occupied.size(); }
    bool empty() const { return occupied.empty(); }

    /// Candidate coordinates for neighbor search: centers, dropping z in pillar mode.
    Matrix knn_coords() const;
};

VoxelGrid voxelize(const PointCloud& cloud, const GridConfig& cfg);

inline constexpr std::size_t kVoxelFeatureWidth = 8;

/// Per occupied voxel: mean xyz, mean intensity, center xyz, log(1 + count).
Matrix voxel_input_features(const VoxelGrid& grid, const PointCloud& cloud);

/// hist[c] = number of voxels holding exactly c points; hist[0] is always 0.
std::vector<std::size_t> count_histogram(const VoxelGrid& grid);
double single_point_fraction(const VoxelGrid& grid);

}  // namespace pdistill
