#include "sslam/tsdf.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "marching_cubes_tables.hpp"

namespace sslam {

namespace {

constexpr int kBrickVoxels = TsdfVolume::kBrick * TsdfVolume::kBrick * TsdfVolume::kBrick;

bool valid_depth(float d, double max_depth) { return std::isfinite(d) && d > 0.0f && d <= max_depth; }

}  // namespace

TsdfVolume::TsdfVolume(const Vec3& origin, double voxel_size, double truncation, const Vec3i& dims)
    : origin_(origin), voxel_(voxel_size), trunc_(truncation), dims_(dims) {
    if (!(voxel_size > 0.0) || !(truncation > 0.0)) {
        throw PreconditionError("tsdf: voxel size and truncation must be positive");
    }
    if ((dims.array() <= 0).any()) throw PreconditionError("tsdf: dims must be positive");
    brick_dims_ = (dims.array() + kBrick - 1) / kBrick;
    brick_index_.assign(static_cast<std::size_t>(brick_dims_.prod()), -1);
}

TsdfVolume TsdfVolume::bounding(std::span<const PosedDepth> frames, const Intrinsics& intrinsics,
                                const TsdfParams& params) {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& f : frames) {
        const DepthImage& d = *f.depth;
        for (int v = 0; v < d.rows(); v += 2) {
            for (int u = 0; u < d.cols(); u += 2) {
                const float z = d(v, u);
                if (!valid_depth(z, params.max_depth)) continue;
                const Vec3 p = f.camera_to_world * intrinsics.backproject(u, v, z);
                lo = lo.cwiseMin(p);
                hi = hi.cwiseMax(p);
            }
        }
    }
    if (!(lo.array() <= hi.array()).all()) {
        lo = hi = Vec3::Zero();
    }
    const double pad = params.truncation + 2.0 * params.voxel_size;
    lo -= Vec3::Constant(pad);
    hi += Vec3::Constant(pad);
    const Vec3i dims = ((hi - lo) / params.voxel_size).array().ceil().cast<int>().max(1);
    return TsdfVolume(lo, params.voxel_size, params.truncation, dims);
}

std::int64_t TsdfVolume::brick_slot(const Vec3i& b) const {
    if ((b.array() < 0).any() || (b.array() >= brick_dims_.array()).any()) return -1;
    return (static_cast<std::int64_t>(b.z()) * brick_dims_.y() + b.y()) * brick_dims_.x() + b.x();
}

int TsdfVolume::allocate(const Vec3i& b) {
    const std::int64_t slot = brick_slot(b);
    if (slot < 0) return -1;
    auto& idx = brick_index_[static_cast<std::size_t>(slot)];
    if (idx < 0) {
        idx = static_cast<std::int32_t>(bricks_.size());
        Brick brick;
        brick.base = b * kBrick;
        brick.sdf.assign(kBrickVoxels, static_cast<float>(trunc_));
        brick.weight.assign(kBrickVoxels, 0.0f);
        bricks_.push_back(std::move(brick));
    }
    return idx;
}

float TsdfVolume::sdf(const Vec3i& v) const {
    if (!in_bounds(v)) return static_cast<float>(trunc_);
    const std::int64_t slot = brick_slot(Vec3i(v / kBrick));
    const std::int32_t idx = brick_index_[static_cast<std::size_t>(slot)];
    if (idx < 0) return static_cast<float>(trunc_);
    const Vec3i l = v - bricks_[idx].base;
    return bricks_[idx].sdf[(l.z() * kBrick + l.y()) * kBrick + l.x()];
}

float TsdfVolume::weight(const Vec3i& v) const {
    if (!in_bounds(v)) return 0.0f;
    const std::int64_t slot = brick_slot(Vec3i(v / kBrick));
    const std::int32_t idx = brick_index_[static_cast<std::size_t>(slot)];
    if (idx < 0) return 0.0f;
    const Vec3i l = v - bricks_[idx].base;
    return bricks_[idx].weight[(l.z() * kBrick + l.y()) * kBrick + l.x()];
}

void TsdfVolume::set_voxel(const Vec3i& v, float sdf, float weight) {
    if (!in_bounds(v)) throw PreconditionError("tsdf: voxel out of bounds");
    const int idx = allocate(Vec3i(v / kBrick));
    const Vec3i l = v - bricks_[idx].base;
    const int n = (l.z() * kBrick + l.y()) * kBrick + l.x();
    const float t = static_cast<float>(trunc_);
    bricks_[idx].sdf[n] = std::clamp(sdf, -t, t);
    bricks_[idx].weight[n] = weight;
}

std::size_t TsdfVolume::observed_voxels() const {
    std::size_t n = 0;
    for (const auto& b : bricks_) {
        for (float w : b.weight) n += w > 0.0f ? 1 : 0;
    }
    return n;
}

// Allocates every brick that may hold a voxel center inside this frame's truncation band.
// A voxel that rounds to pixel (u, v) lies within half a pixel of that pixel's ray, so the
// segment's bounding box is padded by the pixel half-diagonal at the far end.
void TsdfVolume::allocate_band(const DepthImage& depth, const Intrinsics& K, const Pose& camera_to_world,
                               double max_depth) {
    const double half_pixel = 0.5 * std::sqrt(1.0 / (K.fx * K.fx) + 1.0 / (K.fy * K.fy));
    for (int v = 0; v < depth.rows(); ++v) {
        for (int u = 0; u < depth.cols(); ++u) {
            const float d = depth(v, u);
            if (!valid_depth(d, max_depth)) continue;
            const double near = std::max(1e-6, d - trunc_);
            const double far = d + trunc_;
            const Vec3 a = camera_to_world * K.backproject(u, v, near);
            const Vec3 b = camera_to_world * K.backproject(u, v, far);
            const double pad = far * half_pixel + 1e-6;
            const Vec3 lo = a.cwiseMin(b) - Vec3::Constant(pad) - origin_;
            const Vec3 hi = a.cwiseMax(b) + Vec3::Constant(pad) - origin_;
            // Voxel centers sit at (i + 0.5) * voxel; convert the box into brick coordinates.
            const Vec3i blo = ((lo / voxel_ - Vec3::Constant(0.5)) / kBrick).array().floor().cast<int>();
            const Vec3i bhi = ((hi / voxel_ - Vec3::Constant(0.5)) / kBrick).array().floor().cast<int>();
            for (int z = blo.z(); z <= bhi.z(); ++z) {
                for (int y = blo.y(); y <= bhi.y(); ++y) {
                    for (int x = blo.x(); x <= bhi.x(); ++x) allocate(Vec3i(x, y, z));
                }
            }
        }
    }
}

void TsdfVolume::integrate(const DepthImage& depth, const Intrinsics& K, const Pose& camera_to_world,
                           double max_depth) {
    if (depth.rows() != K.height || depth.cols() != K.width) {
        throw PreconditionError("tsdf: depth image does not match intrinsics");
    }
    allocate_band(depth, K, camera_to_world, max_depth);

    const Pose world_to_camera = camera_to_world.inverse();
    const Mat3 R = world_to_camera.rotation();
    const Vec3 t = world_to_camera.translation();
    const float trunc = static_cast<float>(trunc_);

    for (auto& brick : bricks_) {
        for (int n = 0; n < kBrickVoxels; ++n) {
            const Vec3i v = brick.base + Vec3i(n % kBrick, (n / kBrick) % kBrick, n / (kBrick * kBrick));
            if (!in_bounds(v)) continue;
            const Vec3 pc = R * voxel_center(v) + t;
            if (pc.z() <= 0.0) continue;
            const long u = std::lround(K.fx * pc.x() / pc.z() + K.cx);
            const long r = std::lround(K.fy * pc.y() / pc.z() + K.cy);
            if (!K.contains(u, r)) continue;
            const float d = depth(r, u);
            if (!valid_depth(d, max_depth)) continue;
            const float sdf = static_cast<float>(d - pc.z());
            if (sdf < -trunc || sdf > trunc) continue;
            float& s = brick.sdf[n];
            float& w = brick.weight[n];
            s = (s * w + sdf) / (w + 1.0f);
            w += 1.0f;
        }
    }
}

TriangleMesh extract_mesh(const TsdfVolume& volume) {
    using detail::kMcEdgeTable;
    using detail::kMcTriTable;
    static constexpr std::array<std::array<int, 3>, 8> kCorner{{
        {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
    static constexpr std::array<std::array<int, 2>, 12> kEdge{{
        {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

    TriangleMesh mesh;
    const Vec3i dims = volume.dims();
    std::unordered_map<std::int64_t, int> edge_vertex;

    auto corner_linear = [&](const Vec3i& v) {
        return (static_cast<std::int64_t>(v.z()) * dims.y() + v.y()) * dims.x() + v.x();
    };

    volume.for_each_observed([&](const Vec3i& base, float, float) {
        if ((base.array() + 1 >= dims.array()).any()) return;
        std::array<float, 8> s;
        std::array<Vec3i, 8> c;
        int cube = 0;
        for (int k = 0; k < 8; ++k) {
            c[k] = base + Vec3i(kCorner[k][0], kCorner[k][1], kCorner[k][2]);
            if (volume.weight(c[k]) <= 0.0f) return;
            s[k] = volume.sdf(c[k]);
            if (s[k] < 0.0f) cube |= 1 << k;
        }
        const int edges = kMcEdgeTable[cube];
        if (edges == 0) return;

        std::array<int, 12> vid{};
        for (int e = 0; e < 12; ++e) {
            if (!(edges & (1 << e))) continue;
            const int a = kEdge[e][0], b = kEdge[e][1];
            // Key each edge by its lower corner and axis so neighbouring cubes share vertices.
            const Vec3i lo = c[a].cwiseMin(c[b]);
            int axis = 0;
            for (int k = 0; k < 3; ++k) {
                if (c[a][k] != c[b][k]) axis = k;
            }
            const std::int64_t key = corner_linear(lo) * 3 + axis;
            auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
            if (inserted) {
                const double t = s[a] / (s[a] - s[b]);
                const Vec3 pa = volume.voxel_center(c[a]);
                const Vec3 pb = volume.voxel_center(c[b]);
                mesh.vertices.push_back(pa + t * (pb - pa));
            }
            vid[e] = it->second;
        }

        // Cube-averaged sdf gradient orients each triangle toward free space.
        const Vec3 grad((s[1] + s[2] + s[5] + s[6]) - (s[0] + s[3] + s[4] + s[7]),
                        (s[2] + s[3] + s[6] + s[7]) - (s[0] + s[1] + s[4] + s[5]),
                        (s[4] + s[5] + s[6] + s[7]) - (s[0] + s[1] + s[2] + s[3]));
        for (const int* tri = kMcTriTable[cube]; *tri != -1; tri += 3) {
            Eigen::Vector3i f(vid[tri[0]], vid[tri[1]], vid[tri[2]]);
            if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
            const Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
            if (n.squaredNorm() == 0.0) continue;
            if (n.dot(grad) < 0.0) std::swap(f[1], f[2]);
            mesh.triangles.push_back(f);
        }
    });
    mesh.compute_face_normals();
    return mesh;
}

PointCloud fuse_submap_surface(std::span<const PosedDepth> frames, const Intrinsics& intrinsics,
                               const TsdfParams& params) {
    if (frames.empty()) throw PreconditionError("fuse_submap_surface: no frames");
    intrinsics.validate();
    TsdfVolume volume = TsdfVolume::bounding(frames, intrinsics, params);
    for (const auto& f : frames) volume.integrate(*f.depth, intrinsics, f.camera_to_world, params.max_depth);
    const TriangleMesh mesh = extract_mesh(volume);
    if (mesh.empty()) throw Error("fuse_submap_surface: fused surface is empty (degenerate submap)");
    const double area = mesh.surface_area();
    const auto n = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(params.max_surface_samples), std::ceil(area * params.samples_per_m2)));
    return sample_mesh_uniform(mesh, std::max<std::size_t>(n, 1), params.seed);
}

}  // namespace sslam
