#include "pointdistill/pointcloud.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pointdistill/errors.hpp"
#include "pointdistill/rng.hpp"

namespace pdistill {

namespace {

constexpr std::size_t kBytesPerPoint = 16;

float read_f32_le(const std::byte* p) {
    std::uint32_t u = 0;
    for (int k = 3; k >= 0; --k) u = (u << 8) | std::to_integer<std::uint32_t>(p[k]);
    return std::bit_cast<float>(u);
}

void write_f32_le(std::byte* p, float v) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    for (int k = 0; k < 4; ++k) {
        p[k] = static_cast<std::byte>(u & 0xFFu);
        u >>= 8;
    }
}

// Synthetic points are rounded to float32 so that a written frame reloads identically.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Point rounded(double x, double y, double z, double intensity) { return {f32(x), f32(y), f32(z), f32(intensity)}; }

}  // namespace

PointCloud decode_point_cloud(std::span<const std::byte> bytes, std::string frame_id) {
    if (bytes.size() % kBytesPerPoint != 0) {
        throw FormatError("point cloud length " + std::to_string(bytes.size()) + " bytes is not a multiple of " +
                          std::to_string(kBytesPerPoint) + " (" + std::to_string(bytes.size() % kBytesPerPoint) +
                          " trailing bytes)");
    }
    PointCloud cloud;
    cloud.frame_id = std::move(frame_id);
    const std::size_t n = bytes.size() / kBytesPerPoint;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::byte* p = bytes.data() + i * kBytesPerPoint;
        Point pt{read_f32_le(p), read_f32_le(p + 4), read_f32_le(p + 8), read_f32_le(p + 12)};
        if (!std::isfinite(pt.x) || !std::isfinite(pt.y) || !std::isfinite(pt.z) || !std::isfinite(pt.intensity)) {
            throw FormatError("non-finite value in point " + std::to_string(i));
        }
        cloud.points.push_back(pt);
    }
    return cloud;
}

std::vector<std::byte> encode_point_cloud(const PointCloud& cloud) {
    std::vector<std::byte> out(cloud.size() * kBytesPerPoint);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Point& pt = cloud.points[i];
        std::byte* p = out.data() + i * kBytesPerPoint;
        write_f32_le(p, static_cast<float>(pt.x));
        write_f32_le(p + 4, static_cast<float>(pt.y));
        write_f32_le(p + 8, static_cast<float>(pt.z));
        write_f32_le(p + 12, static_cast<float>(pt.intensity));
    }
    return out;
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open point cloud file " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    try {
        return decode_point_cloud(std::as_bytes(std::span(raw)), path.stem().string());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    const auto bytes = encode_point_cloud(cloud);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void SceneSpec::validate() const {
    if (!(cluster_extent > 0.0) || !(ground_extent > 0.0) || !(noise_height > 0.0) || !(ground_jitter >= 0.0)) {
        throw DomainError("scene extents must be positive");
    }
    if (points_per_cluster_min > points_per_cluster_max) {
        throw DomainError("points_per_cluster_min exceeds points_per_cluster_max");
    }
}

PointCloud synth_scene(const SceneSpec& spec) {
    spec.validate();
    const Rng root(spec.seed);
    Rng ground = root.split(0);
    Rng blobs = root.split(1);
    Rng noise = root.split(2);
    const double e = spec.ground_extent;

    PointCloud cloud;
    cloud.frame_id = "synth-" + std::to_string(spec.seed);
    for (std::size_t i = 0; i < spec.n_ground; ++i) {
        const double x = ground.uniform(-e, e);
        const double y = ground.uniform(-e, e);
        const double z = spec.ground_jitter > 0.0 ? ground.normal(0.0, spec.ground_jitter) : 0.0;
        cloud.points.push_back(rounded(x, y, z, ground.uniform01()));
    }
    for (std::size_t c = 0; c < spec.n_clusters; ++c) {
        const double cx = blobs.uniform(-e, e);
        const double cy = blobs.uniform(-e, e);
        const double cz = spec.cluster_extent;
        const auto count = blobs.uniform_int(spec.points_per_cluster_min, spec.points_per_cluster_max);
        for (std::uint64_t k = 0; k < count; ++k) {
            const double x = blobs.normal(cx, spec.cluster_extent);
            const double y = blobs.normal(cy, spec.cluster_extent);
            const double z = blobs.normal(cz, spec.cluster_extent);
            cloud.points.push_back(rounded(x, y, z, blobs.uniform01()));
        }
    }
    for (std::size_t i = 0; i < spec.n_noise; ++i) {
        const double x = noise.uniform(-e, e);
        const double y = noise.uniform(-e, e);
        const double z = noise.uniform(0.0, spec.noise_height);
        cloud.points.push_back(rounded(x, y, z, noise.uniform01()));
    }
    return cloud;
}

}  // namespace pdistill
