#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sslam/point_cloud.hpp"
#include "sslam/pose.hpp"

namespace sslam {

inline constexpr int kFpfhBins = 33;
using FpfhFeature = Eigen::Matrix<float, kFpfhBins, 1>;

/// One 33-bin histogram per point. Each 11-bin block sums to 100, or the whole
/// histogram is zero when the point has no neighbours.
struct FpfhFeatureSet {
    std::vector<FpfhFeature> features;
    std::size_t size() const { return features.size(); }
};

struct RegistrationResult {
    Pose transform;  // maps source points into the target frame
    double fitness = 0.0;
    double inlier_rmse = 0.0;
    std::size_t correspondence_count = 0;
    bool failed = false;
};

struct LoopConstraint {
    int source = -1;
    int target = -1;
    Pose T_st;
    double fitness = 0.0;
    double inlier_rmse = 0.0;
};

FpfhFeatureSet compute_fpfh(const PointCloud& cloud, double radius);

struct RansacParams {
    int max_iterations = 100000;
    double confidence = 0.95;
    double max_corr_dist = 0.075;
    double edge_length_ratio = 0.9;
    std::uint64_t seed = 0;
};

RegistrationResult global_registration(const PointCloud& source, const PointCloud& target,
                                       const FpfhFeatureSet& source_features,
                                       const FpfhFeatureSet& target_features, const RansacParams& params);

struct IcpParams {
    double max_corr_dist = 0.02;
    int max_iterations = 30;
    double relative_tolerance = 1e-6;
    // Results below this fitness are flagged as failed.
    double min_fitness = 0.1;
};

/// Point-to-plane ICP. Throws InsufficientDataError if fewer than 6 correspondences exist at `init`.
RegistrationResult icp_point_to_plane(const PointCloud& source, const PointCloud& target, const Pose& init,
                                      const IcpParams& params = {});

/// Inlier statistics of `transform` without optimizing. Fitness is the fraction of target
/// points that are the nearest neighbour of some inlier source point.
RegistrationResult evaluate_registration(const PointCloud& source, const PointCloud& target,
                                         const SpatialIndex& target_index, const Pose& transform,
                                         double max_corr_dist);

struct LoopRegistrationParams {
    double coarse_voxel = 0.05;
    double normal_radius = 0.1;
    double fpfh_radius = 0.25;
    double coarse_corr_dist = 0.075;
    double fine_corr_dist = 0.02;
    int max_iterations = 100000;
    double confidence = 0.95;
    std::uint64_t seed = 0;
};

/// Coarse FPFH + RANSAC alignment followed by point-to-plane ICP at full resolution.
/// Both surfaces need normals. A failed stage yields fitness 0.
LoopConstraint compute_loop_constraint(const PointCloud& source_surface, const PointCloud& target_surface,
                                       const LoopRegistrationParams& params = {});

struct PrefilterResult {
    std::vector<LoopConstraint> kept;
    double t_min = std::numeric_limits<double>::infinity();
};

/// Drops low-fitness edges, then edges whose translation exceeds a percentile cut
/// chosen so the surviving magnitudes have standard deviation below sigma_min.
PrefilterResult prefilter_loop_edges(std::span<const LoopConstraint> constraints, double sigma_min,
                                     double f_min);

/// Linear-interpolation percentile (p in [0, 100]) of a non-empty sample.
double percentile(std::vector<double> values, double p);

}  // namespace sslam
