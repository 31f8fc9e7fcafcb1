#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sslam/point_cloud.hpp"
#include "sslam/pose.hpp"
#include "sslam/submap.hpp"
#include "sslam/trajectory.hpp"

namespace sslam {

/// Point pairs (p from the source surface, q from the target surface), world frame.
struct CorrespondenceSet {
    std::vector<Vec3> p, q;
    std::size_t size() const { return p.size(); }
    bool empty() const { return p.empty(); }
};

/// For every source point whose transformed position x * p has its nearest target
/// point within eps, the pair (p, nearest).
CorrespondenceSet build_correspondence_set(const PointCloud& source, const PointCloud& target, const Pose& x,
                                           double eps);
CorrespondenceSet build_correspondence_set(const PointCloud& source, const PointCloud& target,
                                           const SpatialIndex& target_index, const Pose& x, double eps);

struct EdgeResidual {
    double value = 0.0;
    bool degenerate = false;  // empty correspondence set
};

/// sum_p |T_s p - T_t x p|^2.
EdgeResidual edge_residual(const Pose& t_s, const Pose& t_t, const Pose& x, const CorrespondenceSet& corr);

/// Minimizer over l in [0, 1] of l * r + mu * (sqrt(l) - 1)^2, i.e. (mu / (mu + r))^2.
double line_process_weight(double residual, double mu);

/// Odometry edges start with an identity constraint; it changes only when the graph
/// is rebased onto corrected submaps.
struct OdometryEdge {
    int source = 0, target = 1;
    Pose constraint;
    CorrespondenceSet corr;
};

struct LoopEdge {
    int source = 0, target = 0;
    Pose constraint;  // T_st
    double fitness = 0.0;
    CorrespondenceSet corr;         // source -> target
    std::size_t reverse_count = 0;  // size of the target -> source set
    double weight = 1.0;            // line process value from the last optimization
};

class PoseGraph {
public:
    std::vector<Pose> nodes;  // correction per submap id; node 0 is the gauge
    std::vector<OdometryEdge> odometry;
    std::vector<LoopEdge> loops;

    /// Appends a node at identity and, unless it is the first, the odometry edge
    /// from its predecessor. Returns the new id.
    int add_node(CorrespondenceSet odometry_corr = {});
    void add_loop(LoopEdge edge);

    /// Throws PreconditionError when an invariant does not hold.
    void validate() const;

    /// Re-expresses stored pairs and constraints after `corrections` have been applied
    /// to the submaps, then resets every node to identity.
    void rebase(const std::vector<Pose>& corrections);

    /// Text dump at `path`; correspondence sets go to `path` + ".corr".
    void save(const std::filesystem::path& path) const;
    static PoseGraph load(const std::filesystem::path& path);
};

struct PgoParams {
    double lambda = 5.0;
    double mu_factor = 0.04;
    double epsilon = 0.05;
    double l_min = 0.25;
    double damping_init = 1e-4;
    double damping_up = 10.0;
    double damping_down = 0.5;
    double max_damping = 1e10;
    int max_iterations = 50;
    double relative_tolerance = 1e-6;
    // Use the mean kappa over all loop edges instead of each edge's own.
    bool global_kappa = false;

    void validate() const;
};

struct PgoReport {
    std::vector<double> stage1_trace;  // objective after every l update and accepted step
    std::vector<double> stage2_trace;
    std::vector<std::pair<int, int>> pruned;
    std::vector<double> stage1_weights;  // per loop edge, in input order
    int stage1_iterations = 0;
    int stage2_iterations = 0;
    double objective_before = 0.0;
    double objective_after = 0.0;
    std::string warning;  // set when LM stalled at maximum damping away from an optimum
};

struct PgoResult {
    std::vector<Pose> corrections;
    std::vector<double> weights;  // surviving loop edges, in graph order
    PgoReport report;
};

/// Two-stage robust optimization. Stage 1 alternates closed-form line-process
/// updates with Levenberg-Marquardt steps and then removes loop edges whose weight
/// is below l_min from `graph`; stage 2 refines with the survivors at weight 1.
/// Node values are updated in place. Throws PreconditionError for a disconnected graph.
PgoResult optimize(PoseGraph& graph, const PgoParams& params = {});

/// Objective of the first stage at the given node values and loop weights.
double robust_objective(const PoseGraph& graph, const std::vector<Pose>& nodes, const std::vector<double>& weights,
                        const PgoParams& params);

/// Applies corrections[id] to each submap and copies its frame poses into the
/// trajectory entries with matching frame ids. Throws PreconditionError when a
/// submap has no correction.
void apply_corrections(std::span<Submap> submaps, Trajectory& trajectory, const std::vector<Pose>& corrections);

}  // namespace sslam
