#include "sslam/submap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "sslam/registration.hpp"

namespace sslam {

namespace {

// Hash grid over point positions with cells of the largest radius.
class PointGrid {
public:
    PointGrid(double cell, const std::vector<SubmapPoint>& points) : cell_(cell), points_(points) {
        for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i].position))].push_back(int(i));
    }

    bool any_within(const Vec3& p, double r) const {
        const Vec3i c = cell_of(p);
        const double r2 = r * r;
        for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto it = cells_.find(key(c + Vec3i(dx, dy, dz)));
                    if (it == cells_.end()) continue;
                    for (int i : it->second) {
                        if ((points_[i].position - p).squaredNorm() < r2) return true;
                    }
                }
            }
        }
        return false;
    }

    void insert(int i) { cells_[key(cell_of(points_[i].position))].push_back(i); }

private:
    Vec3i cell_of(const Vec3& p) const { return (p / cell_).array().floor().cast<int>(); }
    static std::int64_t key(const Vec3i& c) {
        return (std::int64_t(c.x()) * 73856093) ^ (std::int64_t(c.y()) * 19349663) ^ (std::int64_t(c.z()) * 83492791);
    }

    double cell_;
    const std::vector<SubmapPoint>& points_;
    std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

bool valid_depth(const DepthImage& d, int u, int v) {
    return u >= 0 && v >= 0 && u < d.cols() && v < d.rows() && d(v, u) > 0.0f && std::isfinite(d(v, u));
}

// Camera-frame normal from the depth cross stencil, facing the camera; NaN on
// missing neighbours or depth discontinuities.
Vec3 depth_normal(const DepthImage& depth, const Intrinsics& k, int u, int v) {
    const Vec3 nan = Vec3::Constant(std::numeric_limits<double>::quiet_NaN());
    const double z = depth(v, u);
    const int nb[4][2] = {{u - 1, v}, {u + 1, v}, {u, v - 1}, {u, v + 1}};
    Vec3 p[4];
    for (int i = 0; i < 4; ++i) {
        if (!valid_depth(depth, nb[i][0], nb[i][1])) return nan;
        const double zn = depth(nb[i][1], nb[i][0]);
        if (std::abs(zn - z) > 0.05 * z) return nan;
        p[i] = k.backproject(nb[i][0], nb[i][1], zn);
    }
    Vec3 n = (p[1] - p[0]).cross(p[3] - p[2]);
    const double len = n.norm();
    if (!(len > 0.0)) return nan;
    n /= len;
    if (n.dot(k.backproject(u, v, z)) > 0.0) n = -n;
    return n;
}

}  // namespace

void Submap::add_frame(std::int64_t frame_id, const Pose& pose) {
    frame_ids.push_back(frame_id);
    frame_poses.push_back(pose);
}

PointCloud Submap::cloud() const {
    PointCloud c;
    c.positions.reserve(points.size());
    c.normals.reserve(points.size());
    c.colors.reserve(points.size());
    for (const auto& p : points) {
        c.positions.push_back(p.position);
        c.normals.push_back(p.normal);
        c.colors.push_back(p.f_c.head<3>());
    }
    return c;
}

Submap create_submap(int id, const Frame& keyframe, const Submap* prev) {
    Submap s;
    s.id = id;
    s.keyframe_id = keyframe.id;
    s.keyframe_pose = keyframe.pose;
    s.add_frame(keyframe.id, keyframe.pose);
    s.local_keyframes.push_back(keyframe.id);
    if (!prev) return s;

    const Intrinsics& k = keyframe.intrinsics;
    const Pose world_to_cam = keyframe.pose.inverse();
    for (std::size_t i = 0; i < prev->points.size(); ++i) {
        const Vec3 pc = world_to_cam * prev->points[i].position;
        if (!(pc.z() > 0.0)) continue;
        const Eigen::Vector2d px = k.project(pc);
        const long u = std::lround(px.x()), v = std::lround(px.y());
        if (!k.contains(u, v)) continue;
        const double d = keyframe.depth(v, u);
        if (!(d > 0.0) || pc.z() > 1.1 * d) continue;
        s.links[int(s.points.size())] = PointLink{prev->id, int(i)};
        s.points.push_back(prev->points[i]);
    }
    return s;
}

int add_points(Submap& submap, const Frame& frame, const Pose& pose, int samples, std::uint64_t seed,
               const ResolutionParams& params) {
    const DepthImage& depth = frame.depth;
    const Intrinsics& k = frame.intrinsics;
    const GrayImage gray = frame.gray.size() != 0 ? frame.gray
                           : frame.color.empty() ? GrayImage::Zero(depth.rows(), depth.cols())
                                                 : to_gray(frame.color);
    const int h = int(depth.rows()), w = int(depth.cols());

    std::vector<int> valid;
    std::vector<double> grad;
    for (int v = 1; v + 1 < h; ++v) {
        for (int u = 1; u + 1 < w; ++u) {
            if (!valid_depth(depth, u, v)) continue;
            const double gx = 0.5 * (gray(v, u + 1) - gray(v, u - 1));
            const double gy = 0.5 * (gray(v + 1, u) - gray(v - 1, u));
            valid.push_back(v * w + u);
            grad.push_back(std::hypot(gx, gy));
        }
    }
    if (valid.empty() || samples <= 0) return 0;

    const double scale = percentile(grad, params.gradient_percentile);
    std::vector<int> by_grad(valid.size());
    std::iota(by_grad.begin(), by_grad.end(), 0);
    const std::size_t top = std::max<std::size_t>(1, std::size_t(params.top_gradient_fraction * valid.size()));
    std::partial_sort(by_grad.begin(), by_grad.begin() + top, by_grad.end(),
                      [&](int a, int b) { return grad[a] > grad[b] || (grad[a] == grad[b] && a < b); });

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> any(0, valid.size() - 1), best(0, top - 1);
    const int biased = int(std::lround(params.biased_share * samples));
    std::vector<int> picks;
    picks.reserve(std::size_t(samples));
    for (int i = 0; i < samples - biased; ++i) picks.push_back(int(any(rng)));
    for (int i = 0; i < biased; ++i) picks.push_back(by_grad[best(rng)]);

    PointGrid grid(params.rho_max, submap.points);
    const Mat3 r = pose.rotation();
    int added = 0;
    for (int c : picks) {
        const int u = valid[c] % w, v = valid[c] / w;
        const Vec3 n_cam = depth_normal(depth, k, u, v);
        if (!is_valid_normal(n_cam)) continue;
        const double g = scale > 0.0 ? std::min(1.0, grad[c] / scale) : 0.0;
        const double rho = params.rho_max - (params.rho_max - params.rho_min) * g;
        const Vec3 p = pose * k.backproject(u, v, depth(v, u));
        if (grid.any_within(p, rho)) continue;

        SubmapPoint sp;
        sp.position = p;
        sp.normal = r * n_cam;
        sp.radius = rho;
        sp.f_g.head<3>() = sp.normal;
        if (!frame.color.empty()) {
            sp.f_c.head<3>() = Vec3(frame.color.r(v, u), frame.color.g(v, u), frame.color.b(v, u));
        } else {
            sp.f_c.head<3>().setConstant(gray(v, u));
        }
        submap.points.push_back(sp);
        grid.insert(int(submap.points.size()) - 1);
        ++added;
    }
    return added;
}

void apply_correction(Submap& submap, const Pose& t) {
    const Mat3 r = t.rotation();
    for (auto& p : submap.points) {
        p.position = t * p.position;
        p.normal = r * p.normal;
    }
    submap.keyframe_pose = t * submap.keyframe_pose;
    for (auto& fp : submap.frame_poses) fp = t * fp;
}

PointCloud GlobalMap::cloud() const {
    PointCloud c;
    c.positions = positions;
    c.colors.reserve(size());
    for (const auto& f : f_c) c.colors.push_back(f.head<3>());
    return c;
}

GlobalMap fuse_features(std::span<const Submap> submaps) {
    std::map<int, std::size_t> index_of;  // submap id -> position in `submaps`
    std::vector<std::size_t> offset(submaps.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < submaps.size(); ++i) {
        if (!index_of.emplace(submaps[i].id, i).second) throw Error("fuse_features: duplicate submap id");
        offset[i] = total;
        total += submaps[i].points.size();
    }

    std::vector<std::size_t> parent(total);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (std::size_t i = 0; i < submaps.size(); ++i) {
        const Submap& s = submaps[i];
        for (const auto& [local, link] : s.links) {
            const auto it = index_of.find(link.submap);
            if (local < 0 || std::size_t(local) >= s.points.size() || it == index_of.end() || link.index < 0 ||
                std::size_t(link.index) >= submaps[it->second].points.size()) {
                throw Error("fuse_features: dangling correspondence link");
            }
            const std::size_t a = find(offset[i] + std::size_t(local));
            const std::size_t b = find(offset[it->second] + std::size_t(link.index));
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
    }

    // Roots are the smallest member index, so output follows first occurrence.
    GlobalMap out;
    std::vector<int> slot(total, -1);
    std::vector<int> count;
    std::size_t g = 0;
    for (const auto& s : submaps) {
        for (const auto& p : s.points) {
            const std::size_t root = find(g++);
            if (slot[root] < 0) {
                slot[root] = int(out.positions.size());
                out.positions.push_back(Vec3::Zero());
                out.f_g.push_back(Feature::Zero());
                out.f_c.push_back(Feature::Zero());
                out.provenance.emplace_back();
                count.push_back(0);
            }
            const int k = slot[root];
            out.positions[k] += p.position;
            out.f_g[k] += p.f_g;
            out.f_c[k] += p.f_c;
            out.provenance[k].push_back(s.id);
            ++count[k];
        }
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double n = count[k];
        out.positions[k] /= n;
        out.f_g[k] /= n;
        out.f_c[k] /= n;
        auto& prov = out.provenance[k];
        std::sort(prov.begin(), prov.end());
        prov.erase(std::unique(prov.begin(), prov.end()), prov.end());
    }
    return out;
}

void write_submap_ply(const std::filesystem::path& path, const Submap& submap) { write_ply(path, submap.cloud()); }

void write_global_map_ply(const std::filesystem::path& path, const GlobalMap& map) { write_ply(path, map.cloud()); }

void write_links_csv(const std::filesystem::path& path, std::span<const Submap> submaps) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os << "submap,index,prev_submap,prev_index\n";
    for (const auto& s : submaps) {
        for (const auto& [local, link] : s.links) os << s.id << ',' << local << ',' << link.submap << ',' << link.index << '\n';
    }
}

}  // namespace sslam
