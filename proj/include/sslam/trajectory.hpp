#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sslam/pose.hpp"

namespace sslam {

struct TrajectoryEntry {
    std::int64_t frame_id = 0;
    double timestamp = 0.0;
    Pose pose;
};

/// Ordered list of stamped poses. Timestamps strictly increase and frame ids are unique.
class Trajectory {
public:
    Trajectory() = default;

    void push_back(const TrajectoryEntry& entry);
    void push_back(std::int64_t frame_id, double timestamp, const Pose& pose) {
        push_back(TrajectoryEntry{frame_id, timestamp, pose});
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const TrajectoryEntry& operator[](std::size_t i) const { return entries_[i]; }
    const std::vector<TrajectoryEntry>& entries() const { return entries_; }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    /// Index of the entry with the given frame id, or -1.
    std::ptrdiff_t find(std::int64_t frame_id) const;

    void set_pose(std::size_t i, const Pose& pose) { entries_[i].pose = pose; }

    /// Left-composes every pose with `transform`.
    Trajectory transformed(const Pose& transform) const;

    double path_length() const;

private:
    std::vector<TrajectoryEntry> entries_;
};

struct HornAlignment {
    Pose transform;
    // Set when the target-side points are (near) collinear and the rotation about
    // their common line is not determined.
    bool degenerate = false;
};

/// Closed-form (unit quaternion) rigid alignment of point sets: returns T minimizing
/// sum_i |T * source_i - target_i|^2.
HornAlignment horn_align_points(std::span<const Vec3> source, std::span<const Vec3> target);

/// Aligns source trajectory translations to target translations, pairs matched by index.
HornAlignment horn_align(const Trajectory& source, const Trajectory& target);

/// Root-mean-square translational error with pairs matched by frame id.
/// When `align` is set the estimate is first Horn-aligned onto the ground truth.
double ate_rmse(const Trajectory& estimated, const Trajectory& ground_truth, bool align);

/// TUM text format: "timestamp tx ty tz qx qy qz qw" per line, six decimals.
/// Frame ids are assigned from line order when reading.
Trajectory read_tum_trajectory(const std::filesystem::path& path);
void write_tum_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);

}  // namespace sslam
