#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "sslam/frame.hpp"
#include "sslam/submap.hpp"

namespace sslam {

struct TrackerConfig {
    double theta = 0.3;   // keyframe translation trigger, meters
    double sigma = 20.0;  // keyframe rotation trigger, degrees
    double max_corr_dist = 0.1;
    int max_iterations = 20;
    double huber_delta = 0.05;
    int samples = 1500;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrackingStats {
    double rmse = 0.0;
    int inliers = 0;
    int iterations = 0;
};

struct TrackingResult {
    Pose pose;
    TrackingStats stats;
};

class TrackingLostError : public Error {
public:
    using Error::Error;
};

/// Huber-weighted point-to-plane ICP of the frame's back-projected depth against
/// the submap points. The pixel sample is drawn once per call and kept across
/// iterations; a step that raises the RMSE is rolled back and ends the loop.
/// Throws PreconditionError for fewer than 100 points with normals and
/// TrackingLostError for fewer than 6 inliers at `init`.
TrackingResult track_frame(const Submap& submap, const Frame& frame, const Pose& init, const TrackerConfig& cfg);

/// True iff the relative rotation exceeds sigma or the relative translation exceeds theta.
bool should_trigger_keyframe(const Pose& current, const Pose& keyframe, const TrackerConfig& cfg);

/// last * (prev_last^-1 * last).
inline Pose constant_velocity(const Pose& last, const Pose& prev_last) { return last * (prev_last.inverse() * last); }

/// CSV stream of frame_id,rmse,inliers,triggered.
class TrackingLog {
public:
    explicit TrackingLog(const std::filesystem::path& path);
    void write(std::int64_t frame_id, const TrackingStats& stats, bool triggered, bool lost = false);

private:
    std::ofstream os_;
};

}  // namespace sslam
