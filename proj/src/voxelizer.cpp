#include "pointdistill/voxelizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "pointdistill/errors.hpp"

namespace pdistill {

GridConfig GridConfig::pillar(Vec3 origin, double dx, double dy, Vec3 bounds) {
    GridConfig cfg;
    cfg.origin = origin;
    cfg.bounds = bounds;
    cfg.voxel_size = {dx, dy, bounds[2] - origin[2]};
    cfg.mode = GridMode::pillar;
    return cfg;
}

void GridConfig::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (!(voxel_size[a] > 0.0)) throw DomainError("voxel size must be positive on every axis");
        if (!(bounds[a] > origin[a])) throw DomainError("grid bounds must exceed origin on every axis");
    }
    if (mode == GridMode::pillar && voxel_size[2] < bounds[2] - origin[2]) {
        throw DomainError("pillar mode requires voxel_size.z to span the full z range");
    }
}

std::array<std::int64_t, 3> GridConfig::dims() const {
    std::array<std::int64_t, 3> d{};
    for (int a = 0; a < 3; ++a) {
        d[a] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((bounds[a] - origin[a]) / voxel_size[a])));
    }
    return d;
}

Matrix VoxelGrid::knn_coords() const {
    const std::size_t d = config.coord_dims();
    Matrix m(centers.size(), d);
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t a = 0; a < d; ++a) m(i, a) = centers[i][a];
    return m;
}

VoxelGrid voxelize(const PointCloud& cloud, const GridConfig& cfg) {
    cfg.validate();
    const auto dims = cfg.dims();
    VoxelGrid grid;
    grid.config = cfg;

    // (linear key, point id); the key orders cells by (iz, iy, ix).
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    keyed.reserve(cloud.size());
    for (std::size_t id = 0; id < cloud.size(); ++id) {
        const Point& p = cloud.points[id];
        const double c[3] = {p.x, p.y, p.z};
        std::int64_t idx[3];
        bool inside = true;
        for (int a = 0; a < 3 && inside; ++a) {
            if (!(c[a] >= cfg.origin[a] && c[a] < cfg.bounds[a])) {
                inside = false;
                break;
            }
            idx[a] = std::min(static_cast<std::int64_t>(std::floor((c[a] - cfg.origin[a]) / cfg.voxel_size[a])),
                              dims[a] - 1);
        }
        if (!inside) {
            ++grid.discarded;
            continue;
        }
        const auto key = (static_cast<std::uint64_t>(idx[2]) * static_cast<std::uint64_t>(dims[1]) +
                          static_cast<std::uint64_t>(idx[1])) *
                             static_cast<std::uint64_t>(dims[0]) +
                         static_cast<std::uint64_t>(idx[0]);
        keyed.emplace_back(key, id);
    }
    std::sort(keyed.begin(), keyed.end());

    for (std::size_t k = 0; k < keyed.size();) {
        const std::uint64_t key = keyed[k].first;
        Voxel v;
        const auto nx = static_cast<std::uint64_t>(dims[0]);
        const auto ny = static_cast<std::uint64_t>(dims[1]);
        v.cell = {static_cast<std::int64_t>(key % nx), static_cast<std::int64_t>((key / nx) % ny),
                  static_cast<std::int64_t>(key / (nx * ny))};
        for (; k < keyed.size() && keyed[k].first == key; ++k) v.point_ids.push_back(keyed[k].second);
        Vec3 center;
        for (int a = 0; a < 3; ++a) center[a] = cfg.origin[a] + (static_cast<double>(v.cell[a]) + 0.5) * cfg.voxel_size[a];
        grid.counts.push_back(v.point_ids.size());
        grid.centers.push_back(center);
        grid.occupied.push_back(std::move(v));
    }
    return grid;
}

Matrix voxel_input_features(const VoxelGrid& grid, const PointCloud& cloud) {
    Matrix F(grid.size(), kVoxelFeatureWidth);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& ids = grid.occupied[i].point_ids;
        double sx = 0.0, sy = 0.0, sz = 0.0, si = 0.0;
        for (const std::size_t id : ids) {
            if (id >= cloud.size()) throw ShapeError("voxel_input_features: grid does not belong to this cloud");
            const Point& p = cloud.points[id];
            sx += p.x;
            sy += p.y;
            sz += p.z;
            si += p.intensity;
        }
        const double n = static_cast<double>(ids.size());
        auto row = F.row(i);
        row[0] = sx / n;
        row[1] = sy / n;
        row[2] = sz / n;
        row[3] = si / n;
        row[4] = grid.centers[i][0];
        row[5] = grid.centers[i][1];
        row[6] = grid.centers[i][2];
        row[7] = std::log1p(n);
    }
    return F;
}

std::vector<std::size_t> count_histogram(const VoxelGrid& grid) {
    std::size_t max_count = 0;
    for (const auto c : grid.counts) max_count = std::max(max_count, c);
    std::vector<std::size_t> hist(max_count + 1, 0);
    for (const auto c : grid.counts) ++hist[c];
    return hist;
}

double single_point_fraction(const VoxelGrid& grid) {
    if (grid.empty()) return 0.0;
    const auto singles = std::count(grid.counts.begin(), grid.counts.end(), std::size_t{1});
    return static_cast<double>(singles) / static_cast<double>(grid.size());
}

}  // namespace pdistill
