#include <gtest/gtest.h>

#include <random>

#include "sslam/registration.hpp"

using namespace sslam;

namespace {

// Closed box as 12 triangles with outward faces.
void add_box(TriangleMesh& m, const Vec3& lo, const Vec3& hi) {
    const int base = static_cast<int>(m.vertices.size());
    for (int k = 0; k < 8; ++k) m.vertices.emplace_back(k & 1 ? hi.x() : lo.x(), k & 2 ? hi.y() : lo.y(), k & 4 ? hi.z() : lo.z());
    const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.triangles.emplace_back(base + q[0], base + q[1], base + q[2]);
        m.triangles.emplace_back(base + q[0], base + q[2], base + q[3]);
    }
}

// Asymmetric cluster of boxes on a floor slab, about 2 m across.
TriangleMesh clutter_scene() {
    TriangleMesh m;
    add_box(m, Vec3(-1.0, -1.0, -0.05), Vec3(1.0, 1.0, 0.0));
    add_box(m, Vec3(-0.7, -0.6, 0.0), Vec3(-0.2, -0.1, 0.4));
    add_box(m, Vec3(0.1, 0.2, 0.0), Vec3(0.35, 0.8, 0.7));
    add_box(m, Vec3(0.4, -0.7, 0.0), Vec3(0.9, -0.45, 0.25));
    add_box(m, Vec3(-0.8, 0.4, 0.0), Vec3(-0.55, 0.65, 0.15));
    add_box(m, Vec3(-0.1, -0.3, 0.0), Vec3(0.05, -0.15, 0.9));
    m.compute_face_normals();
    return m;
}

PointCloud sample(const TriangleMesh& m, double density, std::uint64_t seed, double noise = 0.0) {
    PointCloud c = sample_mesh_uniform(m, static_cast<std::size_t>(m.surface_area() * density), seed);
    if (noise > 0.0) {
        std::mt19937_64 rng(seed + 1000);
        std::normal_distribution<double> n(0.0, noise);
        for (auto& p : c.positions) p += Vec3(n(rng), n(rng), n(rng));
    }
    return c;
}

Pose random_rigid(std::mt19937_64& rng, double max_angle, double max_trans) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec3 axis(u(rng), u(rng), u(rng));
    axis.normalize();
    const double angle = max_angle * std::abs(u(rng));
    Vec3 t(u(rng), u(rng), u(rng));
    t = t.normalized() * max_trans * std::abs(u(rng));
    return Pose(Eigen::AngleAxisd(angle, axis).toRotationMatrix(), t);
}

LoopConstraint make_edge(double magnitude, double fitness) {
    LoopConstraint c;
    c.source = 0;
    c.target = 2;
    c.T_st = Pose::Translation(Vec3(magnitude, 0.0, 0.0));
    c.fitness = fitness;
    return c;
}

}  // namespace

TEST(Fpfh, RigidInvariance) {
    const PointCloud c = voxel_downsample(sample(clutter_scene(), 2500, 3), 0.05);
    std::mt19937_64 rng(4);
    const Pose T = random_rigid(rng, kPi, 2.0);
    const FpfhFeatureSet a = compute_fpfh(c, 0.25);
    const FpfhFeatureSet b = compute_fpfh(c.transformed(T), 0.25);
    ASSERT_EQ(a.size(), c.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE((a.features[i] - b.features[i]).norm(), 1e-3) << i;
}

TEST(Fpfh, BlocksArePercentagesOrZero) {
    PointCloud c = voxel_downsample(sample(clutter_scene(), 2500, 5), 0.05);
    c.positions.emplace_back(50.0, 50.0, 50.0);
    c.normals.push_back(Vec3::UnitZ());
    const FpfhFeatureSet f = compute_fpfh(c, 0.25);
    std::size_t described = 0;
    for (std::size_t i = 0; i + 1 < f.size(); ++i) {
        EXPECT_GE(f.features[i].minCoeff(), 0.0f);
        if (f.features[i].isZero()) continue;
        ++described;
        for (int b = 0; b < 3; ++b) EXPECT_NEAR(f.features[i].segment<11>(11 * b).sum(), 100.0f, 1e-3);
    }
    EXPECT_GT(described, f.size() * 9 / 10);
    EXPECT_TRUE(f.features.back().isZero());
}

TEST(Fpfh, PlaneInteriorFeaturesAgree) {
    PointCloud c;
    for (int i = 0; i < 30; ++i) {
        for (int j = 0; j < 30; ++j) {
            c.positions.emplace_back(0.05 * i, 0.05 * j, 0.0);
            c.normals.push_back(Vec3::UnitZ());
        }
    }
    const FpfhFeatureSet f = compute_fpfh(c, 0.25);
    std::vector<int> interior;
    double mean_norm = 0.0;
    for (int i = 10; i < 20; ++i) {
        for (int j = 10; j < 20; ++j) {
            interior.push_back(30 * i + j);
            mean_norm += f.features[30 * i + j].norm();
        }
    }
    mean_norm /= interior.size();
    for (int a : interior) {
        for (int b : interior) EXPECT_LE((f.features[a] - f.features[b]).norm(), 0.05 * mean_norm);
    }
}

TEST(Fpfh, MissingNormalsThrows) {
    PointCloud c;
    c.positions = {Vec3::Zero(), Vec3::UnitX()};
    EXPECT_THROW(compute_fpfh(c, 0.5), PreconditionError);
}

TEST(GlobalRegistration, SelfRegistration) {
    const PointCloud c = voxel_downsample(sample(clutter_scene(), 2500, 6), 0.05);
    const FpfhFeatureSet f = compute_fpfh(c, 0.25);
    const RegistrationResult r = global_registration(c, c, f, f, RansacParams{});
    EXPECT_FALSE(r.failed);
    EXPECT_GE(r.fitness, 0.99);
    EXPECT_TRUE(r.transform.isApprox(Pose::Identity(), 1e-6));
}

TEST(GlobalRegistration, RecoversKnownTransformThenIcpConverges) {
    const TriangleMesh scene = clutter_scene();
    const PointCloud target_full = sample(scene, 2500, 7);
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        const Pose truth = random_rigid(rng, deg2rad(30.0), 1.0);
        const PointCloud source_full = sample(scene, 2500, 20 + trial).transformed(truth.inverse());
        const PointCloud src = voxel_downsample(source_full, 0.05), tgt = voxel_downsample(target_full, 0.05);
        RansacParams p;
        p.seed = trial;
        const RegistrationResult coarse =
            global_registration(src, tgt, compute_fpfh(src, 0.25), compute_fpfh(tgt, 0.25), p);
        ASSERT_FALSE(coarse.failed);
        IcpParams ip;
        ip.max_corr_dist = 0.05;
        const RegistrationResult fine = icp_point_to_plane(source_full, target_full, coarse.transform, ip);
        EXPECT_LE(rad2deg(rotation_distance(fine.transform, truth)), 1.0);
        EXPECT_LE(translation_distance(fine.transform, truth), 0.02);
    }
}

TEST(GlobalRegistration, DisjointCloudsHaveLowFitness) {
    // Boxes against a field of spheres: no rigid motion makes the surfaces overlap.
    const PointCloud a = voxel_downsample(sample(clutter_scene(), 2500, 9), 0.05);
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g(0.0, 1.0);
    PointCloud b;
    for (int s = 0; s < 6; ++s) {
        const Vec3 center(1.5 * (s % 3), 1.5 * (s / 3), 1.2 * (s % 2));
        const double radius = 0.45 + 0.03 * s;
        for (int i = 0; i < static_cast<int>(2500 * 4 * kPi * radius * radius); ++i) {
            const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
            b.positions.push_back(center + radius * dir);
            b.normals.push_back(dir);
        }
    }
    b = voxel_downsample(b, 0.05);
    const RegistrationResult r =
        global_registration(a, b, compute_fpfh(a, 0.25), compute_fpfh(b, 0.25), RansacParams{});
    EXPECT_LT(r.fitness, 0.1);
}

TEST(GlobalRegistration, DeterministicPerSeed) {
    const TriangleMesh scene = clutter_scene();
    const PointCloud a = voxel_downsample(sample(scene, 2500, 10), 0.05);
    const PointCloud b = voxel_downsample(sample(scene, 2500, 11), 0.05).transformed(se3_exp(Twist(Vec6(0.1, 0.2, 0.3, 0.2, 0.1, 0.0))));
    const FpfhFeatureSet fa = compute_fpfh(a, 0.25), fb = compute_fpfh(b, 0.25);
    RansacParams p;
    p.seed = 42;
    const RegistrationResult r1 = global_registration(a, b, fa, fb, p);
    const RegistrationResult r2 = global_registration(a, b, fa, fb, p);
    EXPECT_EQ(r1.transform.matrix(), r2.transform.matrix());
    EXPECT_EQ(r1.fitness, r2.fitness);
}

TEST(Icp, SelfIsIdentity) {
    const PointCloud c = sample(clutter_scene(), 2500, 12);
    const RegistrationResult r = icp_point_to_plane(c, c, Pose());
    EXPECT_GE(r.fitness, 0.99);
    EXPECT_TRUE(r.transform.isApprox(Pose::Identity(), 1e-9));
    EXPECT_FALSE(r.failed);
}

TEST(Icp, NoisySpheresSmallOffset) {
    // Three spheres of different radii so that rotation is observable.
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g(0.0, 1.0), noise(0.0, 0.005);
    const std::vector<std::pair<Vec3, double>> spheres{{{0, 0, 0}, 0.5}, {{1.2, 0.1, 0}, 0.3}, {{0.2, 1.0, 0.4}, 0.4}};
    auto make = [&](bool with_normals) {
        PointCloud c;
        for (const auto& [center, r] : spheres) {
            for (int i = 0; i < 3000; ++i) {
                const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
                c.positions.push_back(center + r * dir + Vec3(noise(rng), noise(rng), noise(rng)));
                if (with_normals) c.normals.push_back(dir);
            }
        }
        return c;
    };
    const PointCloud target = make(true);
    const Pose offset(Eigen::AngleAxisd(deg2rad(2.0), Vec3(1, 2, 3).normalized()).toRotationMatrix(), Vec3(0.02, -0.015, 0.015));
    const PointCloud source = make(false).transformed(offset.inverse());
    IcpParams p;
    p.max_corr_dist = 0.1;
    const RegistrationResult r = icp_point_to_plane(source, target, Pose(), p);
    EXPECT_LE(rad2deg(rotation_distance(r.transform, offset)), 0.5);
    EXPECT_LE(translation_distance(r.transform, offset), 0.005);
}

TEST(Icp, GrossInitGivesFlaggedLowFitness) {
    const PointCloud c = sample(clutter_scene(), 2500, 14);
    const Pose flip(Eigen::AngleAxisd(kPi, Vec3(1, 1, 0).normalized()).toRotationMatrix(), Vec3(0, 0, 0.3));
    IcpParams p;
    p.max_corr_dist = 0.1;
    RegistrationResult r;
    ASSERT_NO_THROW(r = icp_point_to_plane(c, c, flip, p));
    EXPECT_LT(r.fitness, 0.5);
    EXPECT_GT(rad2deg(rotation_distance(r.transform, Pose())), 90.0);
}

TEST(Icp, TooFewCorrespondencesThrows) {
    const PointCloud c = sample(clutter_scene(), 2500, 15);
    EXPECT_THROW(icp_point_to_plane(c, c, Pose::Translation(Vec3(20, 0, 0))), InsufficientDataError);
}

TEST(LoopConstraint, RecoversInjectedDrift) {
    const TriangleMesh scene = clutter_scene();
    const PointCloud target = sample(scene, 2500, 16, 0.002);
    std::mt19937_64 rng(17);
    const Pose drift = random_rigid(rng, deg2rad(20.0), 0.5);
    const PointCloud source = sample(scene, 2500, 18, 0.002).transformed(drift.inverse());
    const LoopConstraint c = compute_loop_constraint(source, target);
    EXPECT_LE(rad2deg(rotation_distance(c.T_st, drift)), 1.0);
    EXPECT_LE(translation_distance(c.T_st, drift), 0.02);
    EXPECT_GT(c.fitness, 0.5);

    const LoopConstraint back = compute_loop_constraint(target, source);
    const Pose round = back.T_st * c.T_st;
    EXPECT_LE(rad2deg(rotation_distance(round, Pose())), 2.0);
    EXPECT_LE(round.translation().norm(), 0.04);
}

TEST(LoopConstraint, IdenticalSurfaces) {
    const PointCloud s = sample(clutter_scene(), 2500, 19);
    const LoopConstraint c = compute_loop_constraint(s, s);
    EXPECT_TRUE(c.T_st.isApprox(Pose::Identity(), 1e-6));
    EXPECT_GT(c.fitness, 0.99);
}

TEST(LoopConstraint, EmptySurfaceGivesZeroFitness) {
    const PointCloud s = sample(clutter_scene(), 2500, 20);
    EXPECT_EQ(compute_loop_constraint(PointCloud{}, s).fitness, 0.0);
}

TEST(Percentile, LinearInterpolation) {
    EXPECT_DOUBLE_EQ(percentile({1.0, 2.0, 3.0, 4.0}, 50.0), 2.5);
    EXPECT_DOUBLE_EQ(percentile({5.0, 1.0}, 100.0), 5.0);
    EXPECT_DOUBLE_EQ(percentile({5.0, 1.0}, 0.0), 1.0);
}

TEST(Prefilter, EqualMagnitudesKeepEverything) {
    std::vector<LoopConstraint> edges(6, make_edge(0.3, 0.5));
    const PrefilterResult r = prefilter_loop_edges(edges, 0.15, 0.1);
    EXPECT_EQ(r.kept.size(), 6u);
    EXPECT_DOUBLE_EQ(r.t_min, 0.3);
}

TEST(Prefilter, RemovesTranslationOutlier) {
    // Std of {0.05 x9, 2.0} is 0.585, so the 100th percentile fails; the 95th is
    // 0.05 + 0.55 * 1.95 = 1.1225 and leaves nine equal values with std 0.
    std::vector<LoopConstraint> edges(9, make_edge(0.05, 0.5));
    edges.push_back(make_edge(2.0, 0.5));
    const PrefilterResult r = prefilter_loop_edges(edges, 0.15, 0.1);
    EXPECT_EQ(r.kept.size(), 9u);
    EXPECT_NEAR(r.t_min, 1.1225, 1e-12);
    for (const auto& c : r.kept) EXPECT_NEAR(c.T_st.translation().norm(), 0.05, 1e-12);
}

TEST(Prefilter, LowFitnessRemovedRegardlessOfMagnitude) {
    std::vector<LoopConstraint> edges{make_edge(0.1, 0.05), make_edge(0.1, 0.5), make_edge(0.1, 0.1)};
    const PrefilterResult r = prefilter_loop_edges(edges, 0.15, 0.1);
    ASSERT_EQ(r.kept.size(), 2u);
    for (const auto& c : r.kept) EXPECT_GE(c.fitness, 0.1);
}

TEST(Prefilter, EmptyInput) {
    const PrefilterResult r = prefilter_loop_edges({}, 0.15, 0.1);
    EXPECT_TRUE(r.kept.empty());
    EXPECT_TRUE(std::isinf(r.t_min));
}
