#include "sslam/synthetic.hpp"

#include <cmath>
#include <random>

namespace sslam {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double unit_hash(std::uint64_t h) { return double(h >> 11) * 0x1.0p-53; }

std::uint64_t cell_hash(std::uint64_t seed, int face, std::int64_t i, std::int64_t j) {
    return mix(mix(mix(seed ^ std::uint64_t(face)) ^ std::uint64_t(i)) ^ std::uint64_t(j));
}

Mat3 look_rotation(double yaw, double pitch) {
    const Vec3 f(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch), std::sin(pitch));
    const Vec3 r = f.cross(Vec3::UnitZ()).normalized();
    const Vec3 d = f.cross(r);
    Mat3 m;
    m << r, d, f;
    return m;
}

}  // namespace

Intrinsics SyntheticSceneSpec::intrinsics() const {
    Intrinsics k;
    k.fx = k.fy = focal;
    k.cx = (width - 1) / 2.0;
    k.cy = (height - 1) / 2.0;
    k.width = width;
    k.height = height;
    return k;
}

void SyntheticSceneSpec::validate() const {
    if (!((room_max - room_min).array() > 0.0).all()) throw PreconditionError("synthetic: room dimensions must be positive");
    if (frames < 1) throw PreconditionError("synthetic: frame count must be at least 1");
    if (width < 8 || height < 8 || !(focal > 0.0)) throw PreconditionError("synthetic: bad camera");
    if (!(texture_cell > 0.0) || depth_noise < 0.0 || interior_boxes < 0 || !(box_min_size > 0.0) ||
        box_max_size < box_min_size) {
        throw PreconditionError("synthetic: bad texture, noise or box settings");
    }
}

SyntheticSceneSpec SyntheticSceneSpec::from_config(const KeyValueConfig& c) {
    SyntheticSceneSpec s;
    for (int a = 0; a < 3; ++a) {
        const std::string axis(1, "xyz"[a]);
        c.get("room_min_" + axis, s.room_min[a]);
        c.get("room_max_" + axis, s.room_max[a]);
    }
    c.get("interior_boxes", s.interior_boxes);
    c.get("box_min_size", s.box_min_size);
    c.get("box_max_size", s.box_max_size);
    c.get("texture_cell", s.texture_cell);
    c.get("width", s.width);
    c.get("height", s.height);
    c.get("focal", s.focal);
    c.get("frames", s.frames);
    c.get("loop_side", s.loop_side);
    c.get("camera_height", s.camera_height);
    c.get("yaw_deg", s.yaw_deg);
    c.get("pitch_deg", s.pitch_deg);
    c.get("yaw_wobble_deg", s.yaw_wobble_deg);
    c.get("closed_loop", s.closed_loop);
    c.get("depth_noise", s.depth_noise);
    c.get("drift_rot_deg", s.drift_rot_deg);
    c.get("drift_trans", s.drift_trans);
    c.get("gt_cloud_points", s.gt_cloud_points);
    s.validate();
    return s;
}

SyntheticScene::SyntheticScene(const SyntheticSceneSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    spec_.validate();
    std::mt19937_64 rng(mix(seed));
    std::uniform_real_distribution<double> size(spec.box_min_size, spec.box_max_size), u01(0.0, 1.0);
    const Vec3 center = 0.5 * (spec.room_min + spec.room_max);
    const double clearance = spec.loop_side * M_SQRT1_2 + 0.5;
    const double yaw = deg2rad(spec.yaw_deg);
    const Vec3 lo = spec.room_min + Vec3::Constant(0.05), hi = spec.room_max - Vec3::Constant(0.05);
    for (int b = 0; b < spec.interior_boxes; ++b) {
        const Vec3 ext(size(rng), size(rng), 2.0 * size(rng));
        Vec3 c;
        for (int attempt = 0;; ++attempt) {
            c = Vec3(lo.x() + u01(rng) * (hi.x() - lo.x()), lo.y() + u01(rng) * (hi.y() - lo.y()), 0.0);
            const Eigen::Vector2d off = (c - center).head<2>();
            // Two thirds of the boxes go in front of the camera's mean heading.
            const bool in_view = 3 * b >= 2 * spec.interior_boxes ||
                                 off.dot(Eigen::Vector2d(std::cos(yaw), std::sin(yaw))) > 0.7 * off.norm();
            if ((off.norm() > clearance + 0.5 * ext.head<2>().norm() && in_view) || attempt > 1000) break;
        }
        AlignedBox box;
        box.lo = Vec3(c.x() - 0.5 * ext.x(), c.y() - 0.5 * ext.y(), spec.room_min.z());
        box.hi = Vec3(c.x() + 0.5 * ext.x(), c.y() + 0.5 * ext.y(), spec.room_min.z() + std::min(ext.z(), hi.z() - lo.z()));
        box.lo = box.lo.cwiseMax(spec.room_min);
        box.hi = box.hi.cwiseMin(hi);
        boxes_.push_back(box);
    }
}

std::optional<SyntheticScene::Hit> SyntheticScene::cast(const Vec3& o, const Vec3& d) const {
    Hit best;
    best.t = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0) continue;
        const bool pos = d[a] > 0.0;
        const double t = ((pos ? spec_.room_max[a] : spec_.room_min[a]) - o[a]) / d[a];
        if (t > 0.0 && t < best.t) {
            best.t = t;
            best.face = 2 * a + (pos ? 1 : 0);
        }
    }
    for (std::size_t b = 0; b < boxes_.size(); ++b) {
        double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
        int axis = -1;
        bool miss = false;
        for (int a = 0; a < 3; ++a) {
            if (d[a] == 0.0) {
                if (o[a] < boxes_[b].lo[a] || o[a] > boxes_[b].hi[a]) miss = true;
                continue;
            }
            double t1 = (boxes_[b].lo[a] - o[a]) / d[a], t2 = (boxes_[b].hi[a] - o[a]) / d[a];
            if (t1 > t2) std::swap(t1, t2);
            if (t1 > tmin) {
                tmin = t1;
                axis = a;
            }
            tmax = std::min(tmax, t2);
        }
        if (miss || axis < 0 || tmin > tmax || tmin <= 0.0 || tmin >= best.t) continue;
        best.t = tmin;
        best.face = 6 + 6 * int(b) + 2 * axis + (d[axis] > 0.0 ? 0 : 1);
    }
    if (best.face < 0) return std::nullopt;
    best.point = o + best.t * d;
    return best;
}

Vec3 SyntheticScene::shade(const Hit& hit) const {
    const int axis = (hit.face < 6 ? hit.face : hit.face - 6) % 6 / 2;
    const double s = hit.point[(axis + 1) % 3] / spec_.texture_cell, t = hit.point[(axis + 2) % 3] / spec_.texture_cell;
    const double fs = std::floor(s), ft = std::floor(t);
    const std::uint64_t h = cell_hash(seed_, hit.face, std::int64_t(fs), std::int64_t(ft));
    const double level = 0.1 + 0.8 * unit_hash(h);
    const double dx = (s - fs) - (0.2 + 0.6 * unit_hash(mix(h))), dy = (t - ft) - (0.2 + 0.6 * unit_hash(mix(h + 1)));
    const double gray = dx * dx + dy * dy < 0.06 ? 1.0 - level : level;
    const std::uint64_t fh = mix(seed_ ^ (std::uint64_t(hit.face) << 32));
    const Vec3 tint(0.7 + 0.3 * unit_hash(fh), 0.7 + 0.3 * unit_hash(mix(fh)), 0.7 + 0.3 * unit_hash(mix(fh + 7)));
    return gray * tint;
}

double SyntheticScene::ray_depth(const Pose& camera_to_world, double u, double v) const {
    const Intrinsics k = spec_.intrinsics();
    const Vec3 dir = camera_to_world.rotation() * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    const auto hit = cast(camera_to_world.translation(), dir);
    return hit ? hit->t : 0.0;
}

Frame SyntheticScene::render(const Pose& camera_to_world, std::int64_t id, double timestamp, std::uint64_t rng_seed) const {
    Frame f;
    f.id = id;
    f.timestamp = timestamp;
    f.intrinsics = spec_.intrinsics();
    f.pose = camera_to_world;
    const int h = spec_.height, w = spec_.width;
    f.depth = DepthImage::Zero(h, w);
    f.color = ColorImage{ImageF::Zero(h, w), ImageF::Zero(h, w), ImageF::Zero(h, w)};
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> noise(0.0, spec_.depth_noise > 0.0 ? spec_.depth_noise : 1.0);
    const Mat3 r = camera_to_world.rotation();
    const Vec3 o = camera_to_world.translation();
    const Intrinsics& k = f.intrinsics;
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            const auto hit = cast(o, r * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0));
            if (!hit) continue;
            double z = hit->t;
            if (spec_.depth_noise > 0.0) z = std::max(0.0, z + noise(rng));
            f.depth(v, u) = float(z);
            const Vec3 c = shade(*hit);
            f.color.r(v, u) = float(c.x());
            f.color.g(v, u) = float(c.y());
            f.color.b(v, u) = float(c.z());
        }
    }
    f.gray = to_gray(f.color);
    return f;
}

Pose SyntheticScene::ground_truth_pose(int i) const {
    const int n = spec_.frames;
    const double s = n == 1 ? 0.0 : spec_.closed_loop ? double(i) / (n - 1) : double(i) / n;
    const double half = 0.5 * spec_.loop_side;
    const Eigen::Vector2d corners[4] = {{-half, -half}, {half, -half}, {half, half}, {-half, half}};
    const double p = 4.0 * s;
    const int seg = std::min(3, int(std::floor(p)));
    const Eigen::Vector2d xy = corners[seg] + (p - seg) * (corners[(seg + 1) % 4] - corners[seg]);
    const Vec3 center = 0.5 * (spec_.room_min + spec_.room_max);
    const Vec3 pos(center.x() + xy.x(), center.y() + xy.y(), spec_.room_min.z() + spec_.camera_height);
    const double yaw = deg2rad(spec_.yaw_deg + spec_.yaw_wobble_deg * std::sin(2.0 * kPi * s));
    return Pose(look_rotation(yaw, deg2rad(spec_.pitch_deg)), pos);
}

PointCloud SyntheticScene::surface_samples(int n, std::uint64_t seed) const {
    struct Face {
        Vec3 lo, hi;  // degenerate along its axis
    };
    std::vector<Face> faces;
    auto add_box = [&](const Vec3& lo, const Vec3& hi, bool skip_bottom) {
        for (int a = 0; a < 3; ++a) {
            for (int side = 0; side < 2; ++side) {
                if (skip_bottom && a == 2 && side == 0) continue;
                Face f{lo, hi};
                f.lo[a] = f.hi[a] = side ? hi[a] : lo[a];
                faces.push_back(f);
            }
        }
    };
    add_box(spec_.room_min, spec_.room_max, false);
    for (const auto& b : boxes_) add_box(b.lo, b.hi, true);
    std::vector<double> areas;
    for (const auto& f : faces) {
        const Vec3 e = f.hi - f.lo;
        areas.push_back(e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
    }
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    PointCloud out;
    out.positions.reserve(std::size_t(std::max(n, 0)));
    for (int i = 0; i < n; ++i) {
        const Face& f = faces[pick(rng)];
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = f.lo[a] + u01(rng) * (f.hi[a] - f.lo[a]);
        out.positions.push_back(p);
    }
    return out;
}

SyntheticSequence generate_synthetic(const SyntheticSceneSpec& spec, std::uint64_t seed) {
    const SyntheticScene scene(spec, seed);
    SyntheticSequence seq;
    seq.boxes = scene.boxes();
    const Pose bias(Eigen::AngleAxisd(deg2rad(spec.drift_rot_deg), -Vec3::UnitY()).toRotationMatrix(),
                    Vec3(spec.drift_trans, 0.0, 0.0));
    Pose odo;
    for (int i = 0; i < spec.frames; ++i) {
        const Pose gt = scene.ground_truth_pose(i);
        const double ts = 1.0 + i / 30.0;
        seq.frames.push_back(scene.render(gt, i, ts, mix(seed ^ mix(std::uint64_t(i) + 1))));
        odo = i == 0 ? gt : odo * (seq.ground_truth[std::size_t(i - 1)].pose.inverse() * gt) * bias;
        seq.ground_truth.push_back(i, ts, gt);
        seq.odometry.push_back(i, ts, odo);
    }
    seq.gt_cloud = scene.surface_samples(spec.gt_cloud_points, mix(seed + 17));
    return seq;
}

}  // namespace sslam
