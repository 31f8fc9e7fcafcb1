#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sslam/camera.hpp"
#include "sslam/config.hpp"
#include "sslam/frame.hpp"
#include "sslam/point_cloud.hpp"
#include "sslam/trajectory.hpp"

namespace sslam {

struct AlignedBox {
    Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
};

/// Box room with interior boxes, seen from a camera circling a square loop.
/// World z points up.
struct SyntheticSceneSpec {
    Vec3 room_min = Vec3(-2.0, -2.0, 0.0);
    Vec3 room_max = Vec3(2.0, 2.0, 2.5);
    int interior_boxes = 6;
    double box_min_size = 0.25;
    double box_max_size = 0.6;
    double texture_cell = 0.12;  // meters per checker cell

    int width = 320, height = 240;
    double focal = 250.0;

    int frames = 120;
    double loop_side = 0.6;
    double camera_height = 1.3;
    double yaw_deg = 45.0;  // heading of the view, toward the (+x, +y) corner
    double pitch_deg = -15.0;
    double yaw_wobble_deg = 8.0;
    bool closed_loop = true;

    double depth_noise = 0.0;   // meters, Gaussian
    double drift_rot_deg = 0.05;  // per-frame bias about the camera's vertical axis
    double drift_trans = 0.001;   // per-frame bias along the camera x axis
    int gt_cloud_points = 200000;

    Intrinsics intrinsics() const;
    void validate() const;
    /// Reads the keys named like the fields (room_min_x ... drift_trans).
    static SyntheticSceneSpec from_config(const KeyValueConfig& cfg);
};

struct SyntheticSequence {
    std::vector<Frame> frames;  // poses are ground truth
    Trajectory ground_truth;
    Trajectory odometry;  // drifted
    PointCloud gt_cloud;
    std::vector<AlignedBox> boxes;
};

class SyntheticScene {
public:
    SyntheticScene(const SyntheticSceneSpec& spec, std::uint64_t seed);

    /// Distance along the camera z axis to the first surface hit through pixel (u, v),
    /// with no noise; 0 when nothing is hit.
    double ray_depth(const Pose& camera_to_world, double u, double v) const;
    /// Renders depth (with the spec's noise drawn from `rng_seed`), color and gray.
    Frame render(const Pose& camera_to_world, std::int64_t id, double timestamp, std::uint64_t rng_seed) const;

    Pose ground_truth_pose(int i) const;
    const std::vector<AlignedBox>& boxes() const { return boxes_; }
    const SyntheticSceneSpec& spec() const { return spec_; }

    /// Uniform samples over all room and box faces.
    PointCloud surface_samples(int n, std::uint64_t seed) const;

private:
    struct Hit {
        double t = 0.0;
        int face = -1;  // room faces 0..5, then 6 per box
        Vec3 point;
    };
    std::optional<Hit> cast(const Vec3& origin, const Vec3& dir) const;
    Vec3 shade(const Hit& hit) const;

    SyntheticSceneSpec spec_;
    std::uint64_t seed_;
    std::vector<AlignedBox> boxes_;
};

SyntheticSequence generate_synthetic(const SyntheticSceneSpec& spec, std::uint64_t seed);

}  // namespace sslam
