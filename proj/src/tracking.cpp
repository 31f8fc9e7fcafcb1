#include "sslam/tracking.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <iomanip>
#include <random>

#include "sslam/kdtree.hpp"

namespace sslam {

namespace {

struct Residuals {
    double rmse = 0.0;
    int inliers = 0;
    Mat6 H = Mat6::Zero();
    Vec6 g = Vec6::Zero();
};

}  // namespace

void TrackerConfig::validate() const {
    if (!(theta > 0.0) || !(sigma > 0.0)) throw PreconditionError("tracker: theta and sigma must be positive");
    if (!(max_corr_dist > 0.0) || !(huber_delta > 0.0) || samples < 6 || max_iterations < 1) {
        throw PreconditionError("tracker: invalid ICP settings");
    }
}

TrackingResult track_frame(const Submap& submap, const Frame& frame, const Pose& init, const TrackerConfig& cfg) {
    cfg.validate();
    std::vector<Vec3> pts, nrm;
    for (const auto& p : submap.points) {
        if (!is_valid_normal(p.normal)) continue;
        pts.push_back(p.position);
        nrm.push_back(p.normal);
    }
    if (pts.size() < 100) throw PreconditionError("track_frame: submap has fewer than 100 points with normals");
    const SpatialIndex index{std::span<const Vec3>(pts)};

    const DepthImage& depth = frame.depth;
    std::vector<Vec3> cam;
    for (int v = 0; v < depth.rows(); ++v) {
        for (int u = 0; u < depth.cols(); ++u) {
            const float d = depth(v, u);
            if (d > 0.0f && std::isfinite(d)) cam.push_back(frame.intrinsics.backproject(u, v, d));
        }
    }
    if (cam.size() > std::size_t(cfg.samples)) {
        std::mt19937_64 rng(cfg.seed ^ (std::uint64_t(frame.id) * 0x9e3779b97f4a7c15ULL));
        for (std::size_t i = 0; i < std::size_t(cfg.samples); ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, cam.size() - 1);
            std::swap(cam[i], cam[pick(rng)]);
        }
        cam.resize(std::size_t(cfg.samples));
    }

    const double max_d2 = cfg.max_corr_dist * cfg.max_corr_dist;
    auto evaluate = [&](const Pose& t) {
        Residuals r;
        double sq = 0.0;
        for (const Vec3& c : cam) {
            const Vec3 q = t * c;
            double d2 = 0.0;
            const int j = index.nearest(q, &d2);
            if (j < 0 || d2 > max_d2) continue;
            const Vec3& n = nrm[j];
            const double e = n.dot(q - pts[j]);
            const double w = std::abs(e) <= cfg.huber_delta ? 1.0 : cfg.huber_delta / std::abs(e);
            Vec6 jac;
            jac << q.cross(n), n;
            r.H.noalias() += w * jac * jac.transpose();
            r.g.noalias() += w * e * jac;
            sq += e * e;
            ++r.inliers;
        }
        if (r.inliers > 0) r.rmse = std::sqrt(sq / r.inliers);
        return r;
    };

    TrackingResult out{init, {}};
    Residuals cur = evaluate(init);
    if (cur.inliers < 6) throw TrackingLostError("track_frame: fewer than 6 inlier correspondences");
    out.stats = {cur.rmse, cur.inliers, 0};
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const Eigen::LDLT<Mat6> ldlt(cur.H);
        const Vec6 step = -ldlt.solve(cur.g);
        if (ldlt.info() != Eigen::Success || !step.allFinite()) break;
        const Pose next = se3_exp(Twist(step)) * out.pose;
        const Residuals cand = evaluate(next);
        if (cand.inliers < 6 || cand.rmse > cur.rmse + 1e-9) break;
        out.pose = next;
        cur = cand;
        out.stats = {cur.rmse, cur.inliers, it + 1};
        if (step.norm() < 1e-9) break;
    }
    return out;
}

bool should_trigger_keyframe(const Pose& current, const Pose& keyframe, const TrackerConfig& cfg) {
    return rad2deg(rotation_distance(current, keyframe)) > cfg.sigma ||
           translation_distance(current, keyframe) > cfg.theta;
}

TrackingLog::TrackingLog(const std::filesystem::path& path) : os_(path) {
    if (!os_) throw Error("cannot write " + path.string());
    os_ << "frame_id,rmse,inliers,triggered,lost\n";
}

void TrackingLog::write(std::int64_t frame_id, const TrackingStats& stats, bool triggered, bool lost) {
    os_ << frame_id << ',' << std::setprecision(9) << stats.rmse << ',' << stats.inliers << ',' << int(triggered) << ','
        << int(lost) << '\n';
}

}  // namespace sslam
