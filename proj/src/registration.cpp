#include "sslam/registration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include <Eigen/Cholesky>

#include "sslam/kdtree.hpp"
#include "sslam/trajectory.hpp"

namespace sslam {

namespace {

constexpr int kSubBins = 11;

// Darboux-frame angles (alpha, phi, theta) between two oriented points, using the
// source that makes the smaller angle with the connecting line.
bool pair_features(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2, double f[3]) {
    Vec3 d = p2 - p1;
    const double len = d.norm();
    if (len == 0.0) return false;
    const double a1 = n1.dot(d) / len;
    const double a2 = n2.dot(d) / len;
    Vec3 u = n1, nv = n2;
    double phi = a1;
    // The tolerance keeps the choice stable under rounding when both angles tie.
    if (std::acos(std::abs(a1)) > std::acos(std::abs(a2)) + 1e-9) {
        u = n2;
        nv = n1;
        d = -d;
        phi = -a2;
    }
    Vec3 v = d.cross(u);
    const double vn = v.norm();
    if (vn == 0.0) return false;
    v /= vn;
    const Vec3 w = u.cross(v);
    f[0] = v.dot(nv);
    f[1] = phi;
    f[2] = std::atan2(w.dot(nv), u.dot(nv));
    // atan2 returns either +pi or -pi for antiparallel normals depending on the sign of a rounding error.
    if (f[2] > kPi - 1e-9) f[2] = -kPi;
    return true;
}

int bin_of(double x, double lo, double hi) {
    const int b = static_cast<int>(std::floor(kSubBins * (x - lo) / (hi - lo)));
    return std::clamp(b, 0, kSubBins - 1);
}

struct Association {
    std::vector<std::pair<int, int>> pairs;  // (source, target)
    double sq_sum = 0.0;
    double rmse() const { return pairs.empty() ? 0.0 : std::sqrt(sq_sum / static_cast<double>(pairs.size())); }
};

Association associate(const PointCloud& source, const SpatialIndex& target_index, const Pose& T,
                      double max_corr_dist) {
    Association a;
    const double max_d2 = max_corr_dist * max_corr_dist;
    for (std::size_t i = 0; i < source.size(); ++i) {
        double d2;
        const int j = target_index.nearest(T * source.positions[i], &d2);
        if (j < 0 || d2 > max_d2) continue;
        a.pairs.emplace_back(static_cast<int>(i), j);
        a.sq_sum += d2;
    }
    return a;
}

// Fraction of target points matched by at least one inlier, so a dense or large
// source cannot push the overlap estimate past the target's covered area.
double fitness_of(const Association& a, std::size_t target_size) {
    if (target_size == 0) return 0.0;
    std::vector<char> hit(target_size, 0);
    std::size_t n = 0;
    for (const auto& pr : a.pairs) {
        if (!hit[pr.second]) {
            hit[pr.second] = 1;
            ++n;
        }
    }
    return static_cast<double>(n) / static_cast<double>(target_size);
}

// Downsampled copy with PCA normals oriented to agree with the averaged input normals.
PointCloud coarse_copy(const PointCloud& surface, double voxel, double normal_radius) {
    const PointCloud down = voxel_downsample(surface, voxel);
    PointCloud out = estimate_normals(down, normal_radius);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!is_valid_normal(out.normals[i])) {
            out.normals[i] = down.normals[i];
        } else if (down.has_normals() && is_valid_normal(down.normals[i]) && out.normals[i].dot(down.normals[i]) < 0) {
            out.normals[i] = -out.normals[i];
        }
    }
    return out;
}

}  // namespace

FpfhFeatureSet compute_fpfh(const PointCloud& cloud, double radius) {
    if (!cloud.has_normals()) throw PreconditionError("compute_fpfh: cloud has no normals");
    const std::size_t n = cloud.size();
    const SpatialIndex index = build_index(cloud);
    std::vector<std::vector<int>> neighbors(n);
    std::vector<std::vector<double>> dists(n);
    std::vector<FpfhFeature> spfh(n, FpfhFeature::Zero());

    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = cloud.positions[i];
        const Vec3& np = cloud.normals[i];
        if (!is_valid_normal(np)) continue;
        index.radius_search(p, radius, neighbors[i], &dists[i]);
        int counted = 0;
        FpfhFeature h = FpfhFeature::Zero();
        for (int j : neighbors[i]) {
            if (j == static_cast<int>(i) || !is_valid_normal(cloud.normals[j])) continue;
            double f[3];
            if (!pair_features(p, np, cloud.positions[j], cloud.normals[j], f)) continue;
            h[bin_of(f[0], -1.0, 1.0)] += 1.0f;
            h[kSubBins + bin_of(f[1], -1.0, 1.0)] += 1.0f;
            h[2 * kSubBins + bin_of(f[2], -kPi, kPi)] += 1.0f;
            ++counted;
        }
        if (counted > 0) spfh[i] = h * (100.0f / static_cast<float>(counted));
    }

    FpfhFeatureSet out;
    out.features.assign(n, FpfhFeature::Zero());
    for (std::size_t i = 0; i < n; ++i) {
        if (spfh[i].isZero()) continue;
        Eigen::Matrix<double, kFpfhBins, 1> acc = Eigen::Matrix<double, kFpfhBins, 1>::Zero();
        for (std::size_t k = 0; k < neighbors[i].size(); ++k) {
            const int j = neighbors[i][k];
            if (j == static_cast<int>(i) || dists[i][k] == 0.0) continue;
            acc += spfh[j].cast<double>() / dists[i][k];
        }
        // Each block: neighbour sum rescaled to 100, plus the point's own SPFH, then to percent.
        Eigen::Matrix<double, kFpfhBins, 1> f = spfh[i].cast<double>();
        for (int b = 0; b < 3; ++b) {
            auto block = acc.segment<kSubBins>(b * kSubBins);
            const double s = block.sum();
            if (s > 0.0) f.segment<kSubBins>(b * kSubBins) += block * (100.0 / s);
            f.segment<kSubBins>(b * kSubBins) *= 100.0 / f.segment<kSubBins>(b * kSubBins).sum();
        }
        out.features[i] = f.cast<float>();
    }
    return out;
}

RegistrationResult evaluate_registration(const PointCloud& source, const PointCloud& target,
                                         const SpatialIndex& target_index, const Pose& transform,
                                         double max_corr_dist) {
    const Association a = associate(source, target_index, transform, max_corr_dist);
    RegistrationResult r;
    r.transform = transform;
    r.correspondence_count = a.pairs.size();
    r.inlier_rmse = a.rmse();
    r.fitness = fitness_of(a, target.size());
    return r;
}

RegistrationResult global_registration(const PointCloud& source, const PointCloud& target,
                                       const FpfhFeatureSet& source_features,
                                       const FpfhFeatureSet& target_features, const RansacParams& params) {
    if (source.empty() || target.empty()) throw PreconditionError("global_registration: empty cloud");
    if (source_features.size() != source.size() || target_features.size() != target.size()) {
        throw PreconditionError("global_registration: feature count does not match cloud size");
    }
    RegistrationResult failed;
    failed.failed = true;
    if (source.size() < 3) return failed;

    // Feature-space nearest neighbour of every source point.
    const KdTree<float, kFpfhBins> feature_index{std::span<const FpfhFeature>(target_features.features)};
    std::vector<int> corr(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) corr[i] = feature_index.nearest(source_features.features[i]);
    const std::size_t nc = corr.size();

    std::mt19937_64 rng(params.seed);
    std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
    const double max_d2 = params.max_corr_dist * params.max_corr_dist;

    bool found = false;
    Pose best;
    std::size_t best_inliers = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    double needed = static_cast<double>(params.max_iterations);

    for (int it = 0; it < params.max_iterations && it < needed; ++it) {
        std::array<std::size_t, 3> s;
        s[0] = pick(rng);
        do s[1] = pick(rng); while (s[1] == s[0]);
        do s[2] = pick(rng); while (s[2] == s[0] || s[2] == s[1]);
        std::array<Vec3, 3> ps, pt;
        for (int k = 0; k < 3; ++k) {
            ps[k] = source.positions[s[k]];
            pt[k] = target.positions[corr[s[k]]];
        }
        bool ok = true;
        for (int a = 0; a < 3 && ok; ++a) {
            const int b = (a + 1) % 3;
            const double ls = (ps[a] - ps[b]).norm(), lt = (pt[a] - pt[b]).norm();
            ok = ls > 0 && lt > 0 && std::min(ls, lt) >= params.edge_length_ratio * std::max(ls, lt);
        }
        if (!ok) continue;
        const HornAlignment h = horn_align_points(ps, pt);
        if (h.degenerate) continue;
        for (int k = 0; k < 3 && ok; ++k) ok = (h.transform * ps[k] - pt[k]).squaredNorm() <= max_d2;
        if (!ok) continue;

        std::size_t inliers = 0;
        double sq = 0.0;
        for (std::size_t i = 0; i < nc; ++i) {
            const double d2 = (h.transform * source.positions[i] - target.positions[corr[i]]).squaredNorm();
            if (d2 <= max_d2) {
                ++inliers;
                sq += d2;
            }
        }
        if (inliers > best_inliers || (inliers == best_inliers && sq < best_sq)) {
            found = true;
            best = h.transform;
            best_inliers = inliers;
            best_sq = sq;
            const double w = static_cast<double>(inliers) / static_cast<double>(nc);
            const double miss = 1.0 - w * w * w;
            if (miss <= 0.0) {
                needed = 0;
            } else if (miss < 1.0) {
                needed = std::log(1.0 - params.confidence) / std::log(miss);
            }
        }
    }
    if (!found) return failed;

    // Polish the winning hypothesis with a few point-to-point refits on spatial neighbours,
    // keeping each refit only while the inlier count does not drop.
    const SpatialIndex target_index = build_index(target);
    RegistrationResult current = evaluate_registration(source, target, target_index, best, params.max_corr_dist);
    for (int k = 0; k < 10; ++k) {
        const Association a = associate(source, target_index, current.transform, params.max_corr_dist);
        if (a.pairs.size() < 3) break;
        std::vector<Vec3> ps, pt;
        for (const auto& [i, j] : a.pairs) {
            ps.push_back(source.positions[i]);
            pt.push_back(target.positions[j]);
        }
        const HornAlignment h = horn_align_points(ps, pt);
        if (h.degenerate) break;
        const RegistrationResult next =
            evaluate_registration(source, target, target_index, h.transform, params.max_corr_dist);
        if (next.correspondence_count < current.correspondence_count) break;
        const bool same = next.transform.isApprox(current.transform, 1e-12);
        current = next;
        if (same) break;
    }
    return current;
}

RegistrationResult icp_point_to_plane(const PointCloud& source, const PointCloud& target, const Pose& init,
                                      const IcpParams& params) {
    if (!target.has_normals()) throw PreconditionError("icp_point_to_plane: target has no normals");
    const SpatialIndex index = build_index(target);

    auto usable = [&](Association a) {
        std::erase_if(a.pairs, [&](const auto& p) { return !is_valid_normal(target.normals[p.second]); });
        a.sq_sum = 0.0;
        return a;
    };
    auto stats = [&](const Pose& T) {
        Association a = usable(associate(source, index, T, params.max_corr_dist));
        for (const auto& [i, j] : a.pairs) a.sq_sum += (T * source.positions[i] - target.positions[j]).squaredNorm();
        return a;
    };

    Pose T = init;
    Association cur = stats(T);
    if (cur.pairs.size() < 6) throw InsufficientDataError("icp_point_to_plane: fewer than 6 correspondences");

    for (int it = 0; it < params.max_iterations; ++it) {
        Mat6 H = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        for (const auto& [i, j] : cur.pairs) {
            const Vec3 q = T * source.positions[i];
            const Vec3& n = target.normals[j];
            const double r = n.dot(q - target.positions[j]);
            Vec6 J;
            J << q.cross(n), n;
            H.noalias() += J * J.transpose();
            g.noalias() += J * r;
        }
        const Vec6 delta = -H.ldlt().solve(g);
        if (!delta.allFinite()) break;
        const Pose next = se3_exp(Twist(delta)) * T;
        Association cand = stats(next);
        if (cand.pairs.size() < 6 || cand.rmse() > cur.rmse() + 1e-9) break;

        const double f0 = fitness_of(cur, target.size());
        const double f1 = fitness_of(cand, target.size());
        const double r0 = cur.rmse(), r1 = cand.rmse();
        T = next;
        cur = std::move(cand);
        const bool fit_still = std::abs(f1 - f0) <= params.relative_tolerance * std::max(f0, 1e-12);
        const bool rmse_still = std::abs(r1 - r0) <= params.relative_tolerance * std::max(r0, 1e-12);
        if (fit_still && rmse_still) break;
    }

    RegistrationResult r;
    r.transform = T;
    r.correspondence_count = cur.pairs.size();
    r.inlier_rmse = cur.rmse();
    r.fitness = fitness_of(cur, target.size());
    r.failed = r.fitness < params.min_fitness;
    return r;
}

LoopConstraint compute_loop_constraint(const PointCloud& source_surface, const PointCloud& target_surface,
                                       const LoopRegistrationParams& params) {
    LoopConstraint c;
    if (source_surface.empty() || target_surface.empty()) return c;
    const PointCloud src = coarse_copy(source_surface, params.coarse_voxel, params.normal_radius);
    const PointCloud tgt = coarse_copy(target_surface, params.coarse_voxel, params.normal_radius);
    if (src.size() < 3 || tgt.size() < 3) return c;

    RansacParams rp;
    rp.max_iterations = params.max_iterations;
    rp.confidence = params.confidence;
    rp.max_corr_dist = params.coarse_corr_dist;
    rp.seed = params.seed;
    const RegistrationResult coarse =
        global_registration(src, tgt, compute_fpfh(src, params.fpfh_radius), compute_fpfh(tgt, params.fpfh_radius), rp);
    c.T_st = coarse.transform;
    if (coarse.failed) return c;

    IcpParams ip;
    ip.max_corr_dist = params.fine_corr_dist;
    RegistrationResult fine;
    try {
        fine = icp_point_to_plane(source_surface, target_surface, coarse.transform, ip);
    } catch (const InsufficientDataError&) {
        return c;
    }
    c.T_st = fine.transform;
    if (fine.failed) return c;
    c.fitness = fine.fitness;
    c.inlier_rmse = fine.inlier_rmse;
    return c;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw PreconditionError("percentile: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

PrefilterResult prefilter_loop_edges(std::span<const LoopConstraint> constraints, double sigma_min,
                                     double f_min) {
    PrefilterResult out;
    std::vector<LoopConstraint> fit;
    for (const auto& c : constraints) {
        if (c.fitness >= f_min) fit.push_back(c);
    }
    if (fit.empty()) return out;

    std::vector<double> mags;
    for (const auto& c : fit) mags.push_back(c.T_st.translation().norm());

    for (int p = 100; p >= 0; p -= 5) {
        const double cut = percentile(mags, p);
        double sum = 0.0, sq = 0.0;
        int n = 0;
        for (double m : mags) {
            if (m > cut) continue;
            sum += m;
            sq += m * m;
            ++n;
        }
        const double mean = sum / n;
        const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
        if (sd < sigma_min) {
            out.t_min = cut;
            break;
        }
    }
    for (std::size_t i = 0; i < fit.size(); ++i) {
        if (mags[i] <= out.t_min) out.kept.push_back(fit[i]);
    }
    return out;
}

}  // namespace sslam
