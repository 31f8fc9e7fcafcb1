#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sslam/camera.hpp"
#include "sslam/point_cloud.hpp"
#include "sslam/pose.hpp"

namespace sslam {

struct TsdfParams {
    double voxel_size = 0.01;
    double truncation = 0.04;
    double max_depth = 5.0;
    // Surface sample density for registration clouds, capped at max_surface_samples.
    double samples_per_m2 = 2500.0;
    std::size_t max_surface_samples = 60000;
    std::uint64_t seed = 0;
};

/// A depth frame and its camera-to-world pose.
struct PosedDepth {
    const DepthImage* depth = nullptr;
    Pose camera_to_world;
};

/// Truncated signed distance volume over a fixed voxel grid.
///
/// Voxel (i, j, k) is centered at origin + voxel_size * (i + 0.5, j + 0.5, k + 0.5).
/// Storage is allocated lazily in 8^3 bricks; voxels in unallocated bricks read as
/// sdf = truncation, weight = 0. A frame updates exactly the voxels that project
/// onto a valid depth pixel with |depth - z| <= truncation, so the fused result does
/// not depend on integration order.
class TsdfVolume {
public:
    static constexpr int kBrick = 8;

    TsdfVolume(const Vec3& origin, double voxel_size, double truncation, const Vec3i& dims);

    /// Volume bounding every valid back-projected depth of `frames`, padded by the truncation.
    static TsdfVolume bounding(std::span<const PosedDepth> frames, const Intrinsics& intrinsics,
                               const TsdfParams& params);

    void integrate(const DepthImage& depth, const Intrinsics& intrinsics, const Pose& camera_to_world,
                   double max_depth = 1e9);

    const Vec3& origin() const { return origin_; }
    double voxel_size() const { return voxel_; }
    double truncation() const { return trunc_; }
    const Vec3i& dims() const { return dims_; }

    bool in_bounds(const Vec3i& v) const {
        return (v.array() >= 0).all() && (v.array() < dims_.array()).all();
    }
    float sdf(const Vec3i& v) const;
    float weight(const Vec3i& v) const;
    Vec3 voxel_center(const Vec3i& v) const {
        return origin_ + voxel_ * (v.cast<double>() + Vec3::Constant(0.5));
    }

    /// Overwrites one voxel, allocating its brick. sdf is clamped to the truncation.
    void set_voxel(const Vec3i& v, float sdf, float weight);

    std::size_t allocated_bricks() const { return bricks_.size(); }
    std::size_t observed_voxels() const;

    /// Calls f(voxel, sdf, weight) for every voxel with weight > 0.
    template <typename F>
    void for_each_observed(F&& f) const {
        for (std::size_t b = 0; b < bricks_.size(); ++b) {
            const Brick& brick = bricks_[b];
            for (int n = 0; n < kBrick * kBrick * kBrick; ++n) {
                if (brick.weight[n] <= 0.0f) continue;
                const Vec3i v = brick.base + Vec3i(n % kBrick, (n / kBrick) % kBrick, n / (kBrick * kBrick));
                f(v, brick.sdf[n], brick.weight[n]);
            }
        }
    }

private:
    struct Brick {
        Vec3i base;
        std::vector<float> sdf, weight;
    };

    std::int64_t brick_slot(const Vec3i& brick_coord) const;
    int allocate(const Vec3i& brick_coord);
    void allocate_band(const DepthImage& depth, const Intrinsics& intrinsics, const Pose& camera_to_world,
                       double max_depth);

    Vec3 origin_;
    double voxel_;
    double trunc_;
    Vec3i dims_;
    Vec3i brick_dims_;
    std::vector<std::int32_t> brick_index_;  // -1 when unallocated
    std::vector<Brick> bricks_;
};

/// Marching-cubes zero isosurface over cubes whose eight corners all have weight > 0.
/// Triangles are wound so face normals point toward positive signed distance.
TriangleMesh extract_mesh(const TsdfVolume& volume);

/// Fuses all frames, extracts the surface, and returns uniform samples with normals.
/// Throws PreconditionError for no frames and Error when the fused surface is empty.
PointCloud fuse_submap_surface(std::span<const PosedDepth> frames, const Intrinsics& intrinsics,
                               const TsdfParams& params);

}  // namespace sslam
