#pragma once

#include "sslam/point_cloud.hpp"

namespace sslam {

/// Percentages in [0, 100] at distance threshold tau (meters).
struct ReconMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double tau = 0.01;
};

/// Precision is the share of predicted points within tau of the ground truth and
/// recall the converse. With `pre_align`, the prediction is first ICP-aligned onto
/// the ground truth. Throws PreconditionError for an empty cloud.
ReconMetrics f_score(const PointCloud& predicted, const PointCloud& ground_truth, double tau = 0.01,
                     bool pre_align = false);

}  // namespace sslam
