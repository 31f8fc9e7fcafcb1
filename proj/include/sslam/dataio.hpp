#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sslam/frame.hpp"
#include "sslam/trajectory.hpp"

namespace sslam {

/// 16-bit TUM depth units per meter.
inline constexpr double kTumDepthScale = 5000.0;
inline constexpr double kTumMaxTimeDiff = 0.02;

/// Depth in meters from a 16-bit grayscale PNG.
DepthImage read_depth_png(const std::filesystem::path& path);
/// Rounds to the nearest 1/5000 m; values beyond 16 bits saturate.
void write_depth_png(const std::filesystem::path& path, const DepthImage& depth);
/// 8-bit RGB (or gray, replicated) PNG to [0, 1] channels.
ColorImage read_color_png(const std::filesystem::path& path);
void write_color_png(const std::filesystem::path& path, const ColorImage& color);

/// For each query stamp, the index of the nearest reference stamp when it lies
/// within max_dt (inclusive, with 1e-9 s slack), else nullopt. References must be sorted.
std::vector<std::optional<std::size_t>> associate(std::span<const double> queries, std::span<const double> references,
                                                  double max_dt = kTumMaxTimeDiff);

struct SequenceEntry {
    std::int64_t id = 0;
    double timestamp = 0.0;
    std::filesystem::path rgb, depth;
    Pose ground_truth;
    std::optional<Pose> odometry;
};

struct SequenceReport {
    std::size_t rgb_entries = 0;
    std::size_t dropped_no_depth = 0;
    std::size_t dropped_no_ground_truth = 0;
    std::size_t dropped_no_odometry = 0;
};

/// Associated TUM frames; images are decoded on demand.
class TumSequence {
public:
    std::vector<SequenceEntry> entries;
    Intrinsics intrinsics;
    SequenceReport report;

    std::size_t size() const { return entries.size(); }
    bool has_odometry() const;
    /// Decodes frame i with its ground-truth pose. Throws FormatError on a corrupt image.
    Frame load(std::size_t i) const;
    Trajectory ground_truth() const;
    Trajectory odometry() const;
};

/// Reads rgb.txt, depth.txt and groundtruth.txt (plus optional odometry.txt and
/// camera.txt "fx fy cx cy width height"). Frames lacking a depth, ground-truth or,
/// when odometry.txt exists, odometry stamp within 0.02 s are dropped and counted.
/// Without camera.txt the standard 640x480 TUM default intrinsics are used.
TumSequence read_tum_sequence(const std::filesystem::path& dir);

/// Writes frames in the same layout. `odometry` may be empty.
void write_tum_sequence(const std::filesystem::path& dir, std::span<const Frame> frames, const Trajectory& ground_truth,
                        const Trajectory& odometry);

/// 525 / 525 / 319.5 / 239.5 at 640x480.
Intrinsics tum_default_intrinsics();

}  // namespace sslam
