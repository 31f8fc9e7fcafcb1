#include "sslam/metrics.hpp"

#include "sslam/registration.hpp"

namespace sslam {

namespace {

double within(const PointCloud& from, const SpatialIndex& to, double tau) {
    std::size_t hits = 0;
    for (const Vec3& p : from.positions) {
        double d2 = 0.0;
        if (to.nearest(p, &d2) >= 0 && d2 <= tau * tau) ++hits;
    }
    return 100.0 * double(hits) / double(from.size());
}

}  // namespace

ReconMetrics f_score(const PointCloud& predicted, const PointCloud& ground_truth, double tau, bool pre_align) {
    if (predicted.empty() || ground_truth.empty()) throw PreconditionError("f_score: empty point cloud");
    if (!(tau > 0.0)) throw PreconditionError("f_score: tau must be positive");
    PointCloud pred = predicted;
    if (pre_align) {
        PointCloud gt = ground_truth;
        if (!gt.has_normals()) gt = estimate_normals(gt, 3.0 * tau);
        IcpParams p;
        p.max_corr_dist = 5.0 * tau;
        try {
            pred = pred.transformed(icp_point_to_plane(pred, gt, Pose::Identity(), p).transform);
        } catch (const InsufficientDataError&) {
            // Nothing to align against; score as is.
        }
    }
    ReconMetrics m;
    m.tau = tau;
    m.precision = within(pred, build_index(ground_truth), tau);
    m.recall = within(ground_truth, build_index(pred), tau);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

}  // namespace sslam
