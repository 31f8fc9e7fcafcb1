#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "sslam/frame.hpp"
#include "sslam/point_cloud.hpp"

namespace sslam {

inline constexpr int kFeatureDim = 32;
using Feature = Eigen::Matrix<double, kFeatureDim, 1>;

/// f_c holds RGB in its first three slots and f_g the normal observed at creation.
/// `normal` is the geometric normal, kept in the world frame through corrections.
struct SubmapPoint {
    Vec3 position = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    Feature f_g = Feature::Zero();
    Feature f_c = Feature::Zero();
    double radius = 0.0;
};

struct PointLink {
    int submap = -1;
    int index = -1;
    bool operator==(const PointLink&) const = default;
};

struct Submap {
    int id = 0;
    std::int64_t keyframe_id = 0;
    Pose keyframe_pose;
    std::vector<SubmapPoint> points;
    std::vector<std::int64_t> frame_ids;
    std::vector<Pose> frame_poses;
    std::vector<std::int64_t> local_keyframes;
    std::map<int, PointLink> links;  // local index -> point of an earlier submap

    std::size_t size() const { return points.size(); }
    void add_frame(std::int64_t frame_id, const Pose& pose);
    /// Positions, normals and colors.
    PointCloud cloud() const;
};

struct ResolutionParams {
    double rho_min = 0.02;
    double rho_max = 0.08;
    double gradient_percentile = 95.0;
    // Share of samples drawn from the strongest-gradient pixels.
    double top_gradient_fraction = 0.05;
    double biased_share = 0.2;
};

/// New submap anchored at `keyframe`. Points of `prev` that project inside the
/// keyframe image, in front of the camera and within 1.1x the observed depth are
/// copied with a link back to their source.
Submap create_submap(int id, const Frame& keyframe, const Submap* prev = nullptr);

/// Samples pixels of `frame` seen from `pose` and adds each back-projected point
/// whose neighbourhood of radius rho holds no existing point. Returns the count added.
int add_points(Submap& submap, const Frame& frame, const Pose& pose, int samples, std::uint64_t seed,
               const ResolutionParams& params = {});

/// Left-composes `t` onto points, normals, keyframe and frame poses.
void apply_correction(Submap& submap, const Pose& t);

struct GlobalMap {
    std::vector<Vec3> positions;
    std::vector<Feature> f_g, f_c;
    std::vector<std::vector<int>> provenance;  // contributing submap ids, ascending

    std::size_t size() const { return positions.size(); }
    PointCloud cloud() const;
};

/// Merges linked points into their mean position and mean features.
/// Throws Error when a link names a missing submap or point.
GlobalMap fuse_features(std::span<const Submap> submaps);

void write_submap_ply(const std::filesystem::path& path, const Submap& submap);
void write_global_map_ply(const std::filesystem::path& path, const GlobalMap& map);
/// Rows of submap,index,prev_submap,prev_index.
void write_links_csv(const std::filesystem::path& path, std::span<const Submap> submaps);

}  // namespace sslam
