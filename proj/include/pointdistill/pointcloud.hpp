#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pdistill {

struct Point {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double intensity = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

/// A lidar frame in load order.
struct PointCloud {
    std::vector<Point> points;
    std::string frame_id;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Decodes the KITTI `.bin` layout: little-endian float32 (x, y, z, intensity) per point, no header.
PointCloud decode_point_cloud(std::span<const std::byte> bytes, std::string frame_id = {});
std::vector<std::byte> encode_point_cloud(const PointCloud& cloud);

PointCloud load_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// Synthetic scene: a jittered ground plane, Gaussian object blobs and uniform outliers.
struct SceneSpec {
    std::size_t n_ground = 6000;
    std::size_t n_clusters = 12;
    std::size_t points_per_cluster_min = 100;
    std::size_t points_per_cluster_max = 400;
    double cluster_extent = 0.5;   // blob sigma, meters
    double ground_extent = 20.0;   // ground covers [-e, e]^2
    double ground_jitter = 0.02;   // z sigma of ground points
    double noise_height = 3.0;     // outliers span z in [0, h]
    std::size_t n_noise = 200;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deterministic in `spec.seed`. Ground, clusters and noise draw from separate streams.
PointCloud synth_scene(const SceneSpec& spec);

}  // namespace pdistill
