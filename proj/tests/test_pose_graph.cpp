#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "sslam/pose_graph.hpp"
#include "sslam/synthetic.hpp"

using namespace sslam;

namespace {

PointCloud plane_grid(double x0, double x1, double step) {
    PointCloud c;
    for (double x = x0; x < x1 - 1e-12; x += step) {
        for (double y = 0.0; y < 1.0 - 1e-12; y += step) c.positions.emplace_back(x, y, 0.0);
    }
    return c;
}

Pose random_pose(std::mt19937_64& rng, double rot, double trans) {
    std::normal_distribution<double> n(0.0, 1.0);
    const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized(), dir = Vec3(n(rng), n(rng), n(rng)).normalized();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return Pose(Eigen::AngleAxisd(rot * u(rng), axis).toRotationMatrix(), trans * u(rng) * dir);
}

// Eight submaps on a 2 m square inside the synthetic room, each seeing the scene
// within 2.2 m. Surfaces and keyframes carry accumulated drift.
struct DriftHarness {
    std::vector<PointCloud> surfaces;  // drifted world
    std::vector<Pose> drift;           // D_s
    std::vector<Vec3> keyframes;       // true keyframe positions
    PoseGraph graph;

    DriftHarness(std::uint64_t seed, double rot_deg, double trans) {
        const SyntheticScene scene(SyntheticSceneSpec{}, seed);
        const PointCloud world = scene.surface_samples(40000, seed + 1);
        const Mat3 yaw = Eigen::AngleAxisd(deg2rad(rot_deg), Vec3::UnitZ()).toRotationMatrix();
        Pose d;
        for (int s = 0; s < 8; ++s) {
            const double a = 2.0 * kPi * s / 8.0;
            const Vec3 kf(std::cos(a), std::sin(a), 1.3);
            PointCloud view;
            for (const Vec3& p : world.positions) {
                if ((p - kf).norm() < 2.2) view.positions.push_back(p);
            }
            keyframes.push_back(kf);
            drift.push_back(d);
            surfaces.push_back(view.transformed(d));
            // Odometry-like bias: a yaw about the keyframe plus a small translation.
            d = d * Pose::Translation(kf + Vec3(trans, 0.3 * trans, 0)) * Pose(yaw, Vec3::Zero()) * Pose::Translation(-kf);
        }
        graph.add_node();
        for (int s = 1; s < 8; ++s) {
            graph.add_node(build_correspondence_set(surfaces[s - 1], surfaces[s], Pose::Identity(), 0.05));
        }
    }

    LoopEdge loop(int s, int t, const Pose& x) const {
        LoopEdge e;
        e.source = s;
        e.target = t;
        e.constraint = x;
        e.fitness = 1.0;
        e.corr = build_correspondence_set(surfaces[s], surfaces[t], x, 0.05);
        e.reverse_count = build_correspondence_set(surfaces[t], surfaces[s], x.inverse(), 0.05).size();
        return e;
    }
    // Exact constraint between drifted surfaces s and t.
    Pose truth(int s, int t) const { return drift[t] * drift[s].inverse(); }

    double ate(const std::vector<Pose>& corrections) const {
        Trajectory est, gt;
        for (int s = 0; s < 8; ++s) {
            const Pose c = corrections.empty() ? Pose::Identity() : corrections[s];
            est.push_back(s, s, c * drift[s] * Pose::Translation(keyframes[s]));
            gt.push_back(s, s, Pose::Translation(keyframes[s]));
        }
        return ate_rmse(est, gt, true);
    }
};

// Derivative of l r + mu (sqrt(l) - 1)^2 is r + mu (1 - 1/sqrt(l)), increasing in l.
double bisect_line_process(double r, double mu) {
    auto deriv = [&](double l) { return r + mu * (1.0 - 1.0 / std::sqrt(l)); };
    if (deriv(1.0) <= 0.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (deriv(mid) > 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

void expect_non_increasing(const std::vector<double>& trace) {
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-9) << "step " << i;
}

}  // namespace

TEST(Correspondences, SelfMatch) {
    const PointCloud c = plane_grid(0.0, 1.0, 0.05);
    const CorrespondenceSet k = build_correspondence_set(c, c, Pose::Identity(), 0.05);
    ASSERT_EQ(k.size(), c.size());
    for (std::size_t i = 0; i < k.size(); ++i) EXPECT_EQ(k.p[i], k.q[i]);
}

TEST(Correspondences, DisjointIsEmpty) {
    const PointCloud a = plane_grid(0.0, 1.0, 0.05);
    const PointCloud b = a.transformed(Pose::Translation(Vec3(0, 0, 0.2)));
    EXPECT_TRUE(build_correspondence_set(a, b, Pose::Identity(), 0.05).empty());
}

TEST(Correspondences, HalfOverlapCount) {
    // a covers x in [0, 1), b covers x in [0.5, 1.5) on the same 4 cm lattice (offset 2 cm).
    const PointCloud a = plane_grid(0.0, 1.0, 0.04);
    PointCloud b = plane_grid(0.5, 1.5, 0.04);
    const CorrespondenceSet k = build_correspondence_set(a, b, Pose::Identity(), 0.05);
    // Exact overlap is the a-columns with x >= 0.5 - 0.05 (within eps of b's first column 0.5).
    std::size_t expected = 0;
    for (const Vec3& p : a.positions) {
        if (p.x() >= 0.45 - 1e-12) ++expected;
    }
    EXPECT_EQ(k.size(), expected);
}

TEST(EdgeResidual, Cases) {
    const PointCloud c = plane_grid(0.0, 1.0, 0.1);
    const CorrespondenceSet self = build_correspondence_set(c, c, Pose::Identity(), 0.05);
    EXPECT_EQ(edge_residual(Pose::Identity(), Pose::Identity(), Pose::Identity(), self).value, 0.0);
    const Vec3 d(0.03, -0.04, 0.12);
    const EdgeResidual r = edge_residual(Pose::Translation(d), Pose::Identity(), Pose::Identity(), self);
    EXPECT_NEAR(r.value, double(self.size()) * d.squaredNorm(), 1e-12);
    EXPECT_FALSE(r.degenerate);
    const EdgeResidual e = edge_residual(Pose::Identity(), Pose::Identity(), Pose::Identity(), CorrespondenceSet{});
    EXPECT_EQ(e.value, 0.0);
    EXPECT_TRUE(e.degenerate);
}

TEST(LineProcess, Cases) {
    EXPECT_EQ(line_process_weight(0.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(line_process_weight(3.0, 3.0), 0.25);
    double prev = 1.0;
    for (double r = 0.5; r < 1e6; r *= 3.0) {
        const double l = line_process_weight(r, 1.0);
        EXPECT_LT(l, prev);
        prev = l;
    }
    EXPECT_LT(prev, 1e-10);
    EXPECT_THROW(line_process_weight(1.0, 0.0), PreconditionError);
}

TEST(LineProcess, MatchesNumericMinimizer) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> lr(-6.0, 6.0);
    for (int i = 0; i < 1000; ++i) {
        const double r = std::pow(10.0, lr(rng)), mu = std::pow(10.0, lr(rng));
        EXPECT_NEAR(line_process_weight(r, mu), bisect_line_process(r, mu), 1e-9) << r << " " << mu;
    }
}

TEST(Optimize, ConsistentConstraintsStayAtIdentity) {
    DriftHarness h(1, 0.0, 0.0);
    h.graph.add_loop(h.loop(7, 0, Pose::Identity()));
    h.graph.add_loop(h.loop(5, 1, Pose::Identity()));
    const PgoResult r = optimize(h.graph);
    for (const Pose& c : r.corrections) {
        EXPECT_LT(rotation_distance(c, Pose::Identity()), 1e-6);
        EXPECT_LT(c.translation().norm(), 1e-6);
    }
    EXPECT_TRUE(r.report.pruned.empty());
    for (double l : r.report.stage1_weights) EXPECT_GE(l, 0.25);
}

TEST(Optimize, NoLoopsConsistentOdometry) {
    DriftHarness h(2, 0.0, 0.0);
    const PgoResult r = optimize(h.graph);
    for (const Pose& c : r.corrections) EXPECT_TRUE(c.isApprox(Pose::Identity(), 1e-12));
}

TEST(Optimize, LoopCorrectsDrift) {
    DriftHarness h(3, 0.8, 0.02);
    h.graph.add_loop(h.loop(7, 0, h.truth(7, 0)));
    const double before = h.ate({});
    const PgoResult r = optimize(h.graph);
    const double after = h.ate(r.corrections);
    EXPECT_LE(after, 0.3 * before) << before << " -> " << after;
    EXPECT_TRUE(r.report.pruned.empty());
    EXPECT_TRUE(r.corrections[0].isApprox(Pose::Identity(), 0.0));
    expect_non_increasing(r.report.stage1_trace);
    expect_non_increasing(r.report.stage2_trace);
}

TEST(Optimize, RandomOutliersArePruned) {
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
        DriftHarness h(seed, 0.8, 0.02);
        h.graph.add_loop(h.loop(7, 0, h.truth(7, 0)));
        h.graph.add_loop(h.loop(6, 0, h.truth(6, 0)));
        h.graph.add_loop(h.loop(7, 1, h.truth(7, 1)));
        std::mt19937_64 rng(seed);
        const std::pair<int, int> bad[] = {{5, 2}, {6, 3}};
        for (const auto& [s, t] : bad) h.graph.add_loop(h.loop(s, t, random_pose(rng, kPi, 1.0)));
        const PgoResult r = optimize(h.graph);
        ASSERT_EQ(r.report.stage1_weights.size(), 5u);
        for (int k = 0; k < 3; ++k) EXPECT_GE(r.report.stage1_weights[k], 0.25) << seed;
        for (int k = 3; k < 5; ++k) EXPECT_LT(r.report.stage1_weights[k], 0.25) << seed;
        EXPECT_EQ(h.graph.loops.size(), 3u);
        expect_non_increasing(r.report.stage1_trace);
    }
}

TEST(Optimize, EmptyLoopCorrespondencesArePruned) {
    DriftHarness h(4, 0.0, 0.0);
    LoopEdge e;
    e.source = 6;
    e.target = 1;
    h.graph.add_loop(e);
    const PgoResult r = optimize(h.graph);
    EXPECT_EQ(r.report.stage1_weights[0], 0.0);
    EXPECT_EQ(r.report.pruned.size(), 1u);
}

TEST(Optimize, DisconnectedGraphThrows) {
    PoseGraph g;
    g.add_node();
    g.add_node();
    g.nodes.push_back(Pose::Identity());
    EXPECT_THROW(optimize(g), PreconditionError);
}

TEST(Graph, AdjacentLoopRejected) {
    PoseGraph g;
    for (int i = 0; i < 3; ++i) g.add_node();
    LoopEdge e;
    e.source = 1;
    e.target = 2;
    EXPECT_THROW(g.add_loop(e), PreconditionError);
}

TEST(Graph, RebasePreservesResiduals) {
    DriftHarness h(5, 0.8, 0.02);
    h.graph.add_loop(h.loop(7, 0, h.truth(7, 0)));
    std::mt19937_64 rng(6);
    std::vector<Pose> c(8);
    for (int i = 1; i < 8; ++i) c[i] = random_pose(rng, 0.2, 0.3);
    std::vector<double> before;
    for (const auto& e : h.graph.odometry) before.push_back(edge_residual(c[e.source], c[e.target], e.constraint, e.corr).value);
    for (const auto& e : h.graph.loops) before.push_back(edge_residual(c[e.source], c[e.target], e.constraint, e.corr).value);
    h.graph.rebase(c);
    std::size_t k = 0;
    for (const auto& e : h.graph.odometry) {
        EXPECT_NEAR(edge_residual(Pose::Identity(), Pose::Identity(), e.constraint, e.corr).value, before[k], 1e-9 * (1 + before[k]));
        ++k;
    }
    for (const auto& e : h.graph.loops) {
        EXPECT_NEAR(edge_residual(Pose::Identity(), Pose::Identity(), e.constraint, e.corr).value, before[k], 1e-9 * (1 + before[k]));
        ++k;
    }
}

TEST(Graph, SaveLoadRoundTrip) {
    DriftHarness h(7, 0.8, 0.02);
    h.graph.add_loop(h.loop(7, 0, h.truth(7, 0)));
    h.graph.nodes[3] = Pose::Translation(Vec3(0.1, 0.2, 0.3));
    const auto path = std::filesystem::temp_directory_path() / "sslam_graph.txt";
    h.graph.save(path);
    const PoseGraph g = PoseGraph::load(path);
    ASSERT_EQ(g.nodes.size(), h.graph.nodes.size());
    EXPECT_TRUE(g.nodes[3].isApprox(h.graph.nodes[3], 1e-15));
    ASSERT_EQ(g.loops.size(), 1u);
    EXPECT_TRUE(g.loops[0].constraint.isApprox(h.graph.loops[0].constraint, 1e-15));
    EXPECT_EQ(g.loops[0].corr.p, h.graph.loops[0].corr.p);
    EXPECT_EQ(g.loops[0].reverse_count, h.graph.loops[0].reverse_count);
    EXPECT_EQ(g.odometry[2].corr.q, h.graph.odometry[2].corr.q);
    std::ofstream(path) << "SSLAM_POSE_GRAPH 9\n";
    EXPECT_THROW(PoseGraph::load(path), FormatError);
}

TEST(ApplyCorrections, IdentityAndTranslation) {
    std::vector<Submap> maps(2);
    Trajectory traj;
    for (int s = 0; s < 2; ++s) {
        maps[s].id = s;
        for (int i = 0; i < 3; ++i) {
            const std::int64_t id = s * 3 + i;
            const Pose p = Pose::Translation(Vec3(double(id), 0, 0));
            maps[s].add_frame(id, p);
            traj.push_back(id, double(id), p);
            SubmapPoint pt;
            pt.position = Vec3(id, 1, 2);
            maps[s].points.push_back(pt);
        }
    }
    const Trajectory orig = traj;
    apply_corrections(maps, traj, {Pose::Identity(), Pose::Identity()});
    for (std::size_t i = 0; i < traj.size(); ++i) EXPECT_EQ(traj[i].pose.matrix(), orig[i].pose.matrix());
    const Vec3 t(0, 0.5, 0);
    apply_corrections(maps, traj, {Pose::Identity(), Pose::Translation(t)});
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const Vec3 expect = orig[i].pose.translation() + (i >= 3 ? t : Vec3::Zero());
        EXPECT_EQ(traj[i].pose.translation(), expect);
    }
    EXPECT_EQ(maps[1].points[0].position, Vec3(3, 1.5, 2));
    EXPECT_EQ(maps[0].points[0].position, Vec3(0, 1, 2));
    EXPECT_THROW(apply_corrections(maps, traj, {Pose::Identity()}), PreconditionError);
}
