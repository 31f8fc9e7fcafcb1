#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sslam/config.hpp"
#include "sslam/dataio.hpp"
#include "sslam/metrics.hpp"
#include "sslam/place_recognition.hpp"
#include "sslam/pose_graph.hpp"
#include "sslam/registration.hpp"
#include "sslam/submap.hpp"
#include "sslam/synthetic.hpp"
#include "sslam/tracking.hpp"
#include "sslam/tsdf.hpp"

namespace sslam {

enum class PipelineMode { Full, Backend };

struct PipelineConfig {
    PipelineMode mode = PipelineMode::Backend;
    TrackerConfig tracker;
    PgoParams pgo;
    LoopRegistrationParams registration;
    BowParams bow;
    TsdfParams fusion;
    ResolutionParams resolution;

    bool loop_closure = true;
    int top_k = 4;
    double sigma_min = 0.15;
    double f_min = 0.1;
    bool prefilter = true;
    int min_loop_distance = 2;

    int map_every = 5;
    int map_samples = 4000;
    double f_score_tau = 0.01;

    // Share of random-transform loop edges added per genuine edge (robustness tests).
    double outlier_ratio = 0.0;
    std::uint64_t seed = 0;
    // When set, run() writes its outputs (and tracking.csv in full mode) here.
    std::filesystem::path output_dir;

    void validate() const;
    /// Keys mirror the fields (see README); unknown keys throw FormatError.
    static PipelineConfig from_config(const KeyValueConfig& cfg);
};

/// Frames in order, each with the pose supplied to backend mode.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual std::size_t size() const = 0;
    virtual Frame frame(std::size_t i) const = 0;
    /// Odometry pose when available, else ground truth.
    virtual std::optional<Pose> input_pose(std::size_t i) const = 0;
    virtual Trajectory ground_truth() const = 0;
    virtual const PointCloud* ground_truth_cloud() const { return nullptr; }
};

class TumFrameSource : public FrameSource {
public:
    explicit TumFrameSource(TumSequence seq, std::optional<PointCloud> gt_cloud = std::nullopt);
    std::size_t size() const override { return seq_.size(); }
    Frame frame(std::size_t i) const override { return seq_.load(i); }
    std::optional<Pose> input_pose(std::size_t i) const override;
    Trajectory ground_truth() const override { return seq_.ground_truth(); }
    const PointCloud* ground_truth_cloud() const override { return gt_cloud_ ? &*gt_cloud_ : nullptr; }

private:
    TumSequence seq_;
    std::optional<PointCloud> gt_cloud_;
};

class SyntheticFrameSource : public FrameSource {
public:
    explicit SyntheticFrameSource(std::shared_ptr<const SyntheticSequence> seq) : seq_(std::move(seq)) {}
    std::size_t size() const override { return seq_->frames.size(); }
    Frame frame(std::size_t i) const override { return seq_->frames[i]; }
    std::optional<Pose> input_pose(std::size_t i) const override { return seq_->odometry[i].pose; }
    Trajectory ground_truth() const override { return seq_->ground_truth; }
    const PointCloud* ground_truth_cloud() const override { return &seq_->gt_cloud; }

private:
    std::shared_ptr<const SyntheticSequence> seq_;
};

struct Event {
    std::int64_t frame_id = -1;
    int submap = -1;
    std::string type;
    std::string detail;
};

struct LoopEdgeRecord {
    int id = -1;  // unique per run; an injected and a genuine edge may join the same pair
    int source = -1, target = -1;
    double fitness = 0.0;
    double weight = 0.0;  // after stage 1
    bool injected = false;
    bool pruned = false;
};

struct PgoRecord {
    int submap = -1;  // completed submap that triggered the optimization
    PgoReport report;
    std::vector<LoopEdgeRecord> edges;  // loop edges entering the optimization
};

struct SlamMetrics {
    double ate_rmse_m = 0.0;
    double odometry_ate_rmse_m = 0.0;
    std::optional<ReconMetrics> reconstruction;
    int n_submaps = 0;
    int n_pgo = 0;
    int n_loop_edges = 0;
    int n_tracking_lost = 0;
    double runtime_s = 0.0;
};

struct SlamResult {
    Trajectory trajectory;
    Trajectory input_trajectory;
    GlobalMap global_map;
    std::vector<Submap> submaps;
    PoseGraph graph;
    SlamMetrics metrics;
    std::vector<Event> events;
    std::vector<PgoRecord> pgo_runs;
};

/// Processes the whole sequence; the last submap is completed like the others. Throws PreconditionError for an empty sequence
/// or backend mode without input poses.
SlamResult run(const PipelineConfig& config, const FrameSource& source);

/// Writes trajectory.txt, global_map.ply, metrics.json, events.jsonl, pose_graph.txt
/// (+ .corr) and links.csv into `dir`.
void write_outputs(const std::filesystem::path& dir, const SlamResult& result);

std::string metrics_json(const SlamMetrics& metrics);

}  // namespace sslam
