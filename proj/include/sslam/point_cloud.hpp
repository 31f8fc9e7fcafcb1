#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "sslam/kdtree.hpp"
#include "sslam/pose.hpp"

namespace sslam {

/// Positions with optional per-point normals and RGB colors in [0, 1].
/// A normal that could not be estimated is stored as NaN (see is_valid_normal).
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;
    std::vector<Vec3> colors;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
    bool has_normals() const { return !normals.empty() && normals.size() == positions.size(); }
    bool has_colors() const { return !colors.empty() && colors.size() == positions.size(); }

    /// Throws when optional attributes do not match the position count.
    void validate() const;

    PointCloud transformed(const Pose& t) const;
    void append(const PointCloud& other);
    PointCloud select(const std::vector<int>& indices) const;
};

inline bool is_valid_normal(const Vec3& n) { return n.allFinite(); }

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Eigen::Vector3i> triangles;
    std::vector<Vec3> face_normals;

    bool empty() const { return triangles.empty(); }
    double surface_area() const;
    void compute_face_normals();
};

SpatialIndex build_index(const PointCloud& cloud);

/// Per-point normal from the smallest-eigenvalue eigenvector of the neighborhood covariance
/// within `radius`. Normals face `viewpoint` when given, otherwise +z.
/// Points with fewer than `min_neighbors` neighbors (self included) get NaN normals.
PointCloud estimate_normals(const PointCloud& cloud, double radius, int min_neighbors = 3,
                            const std::optional<Vec3>& viewpoint = std::nullopt);

/// One point per occupied voxel at the centroid of its points; colors averaged,
/// normals averaged and renormalized. Output order follows first occupancy.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

/// Area-weighted uniform samples with face normals, deterministic per seed.
PointCloud sample_mesh_uniform(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

enum class PlyFormat { Ascii, BinaryLittleEndian };

void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyFormat format = PlyFormat::BinaryLittleEndian);
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh,
               PlyFormat format = PlyFormat::BinaryLittleEndian);
PointCloud read_ply(const std::filesystem::path& path);
TriangleMesh read_ply_mesh(const std::filesystem::path& path);

}  // namespace sslam
