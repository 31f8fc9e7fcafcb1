#include "sslam/point_cloud.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_map>

namespace sslam {

void PointCloud::validate() const {
    if (!normals.empty() && normals.size() != positions.size()) {
        throw PreconditionError("point cloud: normals do not match positions");
    }
    if (!colors.empty() && colors.size() != positions.size()) {
        throw PreconditionError("point cloud: colors do not match positions");
    }
}

PointCloud PointCloud::transformed(const Pose& t) const {
    PointCloud out;
    out.positions.reserve(positions.size());
    for (const auto& p : positions) out.positions.push_back(t * p);
    if (has_normals()) {
        const Mat3 r = t.rotation();
        out.normals.reserve(normals.size());
        for (const auto& n : normals) out.normals.push_back(r * n);
    }
    out.colors = colors;
    return out;
}

void PointCloud::append(const PointCloud& other) {
    const bool keep_normals = (empty() || has_normals()) && other.has_normals();
    const bool keep_colors = (empty() || has_colors()) && other.has_colors();
    positions.insert(positions.end(), other.positions.begin(), other.positions.end());
    if (keep_normals) {
        normals.insert(normals.end(), other.normals.begin(), other.normals.end());
    } else {
        normals.clear();
    }
    if (keep_colors) {
        colors.insert(colors.end(), other.colors.begin(), other.colors.end());
    } else {
        colors.clear();
    }
}

PointCloud PointCloud::select(const std::vector<int>& indices) const {
    PointCloud out;
    out.positions.reserve(indices.size());
    for (int i : indices) out.positions.push_back(positions[static_cast<std::size_t>(i)]);
    if (has_normals()) {
        for (int i : indices) out.normals.push_back(normals[static_cast<std::size_t>(i)]);
    }
    if (has_colors()) {
        for (int i : indices) out.colors.push_back(colors[static_cast<std::size_t>(i)]);
    }
    return out;
}

double TriangleMesh::surface_area() const {
    double a = 0.0;
    for (const auto& t : triangles) {
        a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    }
    return a;
}

void TriangleMesh::compute_face_normals() {
    face_normals.resize(triangles.size());
    for (std::size_t i = 0; i < triangles.size(); ++i) {
        const auto& t = triangles[i];
        const Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
        const double len = n.norm();
        face_normals[i] = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
    }
}

SpatialIndex build_index(const PointCloud& cloud) {
    return SpatialIndex(std::span<const Vec3>(cloud.positions));
}

PointCloud estimate_normals(const PointCloud& cloud, double radius, int min_neighbors,
                            const std::optional<Vec3>& viewpoint) {
    if (!(radius > 0.0)) throw PreconditionError("estimate_normals: radius must be positive");
    PointCloud out = cloud;
    out.normals.assign(cloud.size(), Vec3::Constant(std::numeric_limits<double>::quiet_NaN()));
    const SpatialIndex index = build_index(cloud);
    std::vector<int> nbrs;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        index.radius_search(p, radius, nbrs);
        if (static_cast<int>(nbrs.size()) < std::max(min_neighbors, 3)) continue;
        Vec3 mean = Vec3::Zero();
        for (int j : nbrs) mean += cloud.positions[static_cast<std::size_t>(j)];
        mean /= static_cast<double>(nbrs.size());
        Mat3 cov = Mat3::Zero();
        for (int j : nbrs) {
            const Vec3 d = cloud.positions[static_cast<std::size_t>(j)] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        Vec3 n = es.eigenvectors().col(0).normalized();
        if (viewpoint) {
            if (n.dot(*viewpoint - p) < 0.0) n = -n;
        } else if (n.z() < 0.0) {
            n = -n;
        }
        out.normals[i] = n;
    }
    return out;
}

namespace {

struct VoxelKey {
    std::int64_t x, y, z;
    bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
    std::size_t operator()(const VoxelKey& k) const {
        return static_cast<std::size_t>(k.x * 73856093LL ^ k.y * 19349663LL ^ k.z * 83492791LL);
    }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
    if (!(voxel > 0.0)) throw PreconditionError("voxel_downsample: voxel must be positive");
    struct Accum {
        Vec3 p = Vec3::Zero(), n = Vec3::Zero(), c = Vec3::Zero();
        int count = 0;
    };
    std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slots;
    std::vector<Accum> acc;
    const bool normals = cloud.has_normals();
    const bool colors = cloud.has_colors();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                           static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                           static_cast<std::int64_t>(std::floor(p.z() / voxel))};
        auto [it, inserted] = slots.try_emplace(key, acc.size());
        if (inserted) acc.emplace_back();
        Accum& a = acc[it->second];
        a.p += p;
        if (normals && is_valid_normal(cloud.normals[i])) a.n += cloud.normals[i];
        if (colors) a.c += cloud.colors[i];
        ++a.count;
    }
    PointCloud out;
    out.positions.reserve(acc.size());
    for (const auto& a : acc) {
        const double inv = 1.0 / a.count;
        out.positions.push_back(a.p * inv);
        if (normals) {
            const double len = a.n.norm();
            out.normals.push_back(len > 0.0 ? Vec3(a.n / len)
                                            : Vec3::Constant(std::numeric_limits<double>::quiet_NaN()));
        }
        if (colors) out.colors.push_back(a.c * inv);
    }
    return out;
}

PointCloud sample_mesh_uniform(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
    PointCloud out;
    if (n == 0) return out;
    std::vector<double> cdf(mesh.triangles.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        total += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                           .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]])
                           .norm();
        cdf[i] = total;
    }
    if (!(total > 0.0)) throw PreconditionError("sample_mesh_uniform: mesh has zero area");

    std::vector<Vec3> fn = mesh.face_normals;
    if (fn.size() != mesh.triangles.size()) {
        TriangleMesh copy = mesh;
        copy.compute_face_normals();
        fn = std::move(copy.face_normals);
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    out.positions.reserve(n);
    out.normals.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const double r = uni(rng) * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
        if (it == cdf.end()) --it;
        const std::size_t ti = static_cast<std::size_t>(it - cdf.begin());
        const auto& t = mesh.triangles[ti];
        const double r1 = std::sqrt(uni(rng));
        const double r2 = uni(rng);
        const double a = 1.0 - r1, b = r1 * (1.0 - r2), c = r1 * r2;
        out.positions.push_back(a * mesh.vertices[t[0]] + b * mesh.vertices[t[1]] + c * mesh.vertices[t[2]]);
        out.normals.push_back(fn[ti]);
    }
    return out;
}

}  // namespace sslam
