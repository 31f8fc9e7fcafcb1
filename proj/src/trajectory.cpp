#include "sslam/trajectory.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace sslam {

void Trajectory::push_back(const TrajectoryEntry& entry) {
    if (!entries_.empty()) {
        if (!(entry.timestamp > entries_.back().timestamp)) {
            throw PreconditionError("trajectory timestamps must strictly increase");
        }
        if (find(entry.frame_id) >= 0) {
            throw PreconditionError("duplicate frame id in trajectory");
        }
    }
    entries_.push_back(entry);
}

std::ptrdiff_t Trajectory::find(std::int64_t frame_id) const {
    // Ids are usually sorted; try the direct slot first.
    if (frame_id >= 0 && static_cast<std::size_t>(frame_id) < entries_.size() &&
        entries_[static_cast<std::size_t>(frame_id)].frame_id == frame_id) {
        return static_cast<std::ptrdiff_t>(frame_id);
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].frame_id == frame_id) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
}

Trajectory Trajectory::transformed(const Pose& transform) const {
    Trajectory out = *this;
    for (auto& e : out.entries_) e.pose = transform * e.pose;
    return out;
}

double Trajectory::path_length() const {
    double len = 0.0;
    for (std::size_t i = 1; i < entries_.size(); ++i) {
        len += (entries_[i].pose.translation() - entries_[i - 1].pose.translation()).norm();
    }
    return len;
}

HornAlignment horn_align_points(std::span<const Vec3> source, std::span<const Vec3> target) {
    if (source.size() != target.size()) {
        throw PreconditionError("horn_align: point sets differ in size");
    }
    if (source.size() < 3) {
        throw InsufficientDataError("horn_align: at least 3 point pairs are required");
    }
    const double n = static_cast<double>(source.size());
    Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        cs += source[i];
        ct += target[i];
    }
    cs /= n;
    ct /= n;

    Mat3 S = Mat3::Zero();
    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        const Vec3 a = source[i] - cs;
        const Vec3 b = target[i] - ct;
        S += a * b.transpose();
        cov += a * a.transpose();
    }

    const double sxx = S(0, 0), sxy = S(0, 1), sxz = S(0, 2);
    const double syx = S(1, 0), syy = S(1, 1), syz = S(1, 2);
    const double szx = S(2, 0), szy = S(2, 1), szz = S(2, 2);
    Eigen::Matrix4d N;
    N << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
         syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
         szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
         sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(N);
    const Eigen::Vector4d e = es.eigenvectors().col(3);
    const Eigen::Quaterniond q(e(0), e(1), e(2), e(3));

    HornAlignment out;
    const Pose rot(q, Vec3::Zero());
    out.transform = Pose(q, ct - rot * cs);

    const Eigen::Vector3d sv = Eigen::JacobiSVD<Mat3>(cov).singularValues();
    out.degenerate = !(sv(1) > 1e-12 * std::max(sv(0), 1e-300));
    return out;
}

HornAlignment horn_align(const Trajectory& source, const Trajectory& target) {
    if (source.size() != target.size()) {
        throw PreconditionError("horn_align: trajectories differ in length");
    }
    std::vector<Vec3> a, b;
    a.reserve(source.size());
    b.reserve(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
        a.push_back(source[i].pose.translation());
        b.push_back(target[i].pose.translation());
    }
    return horn_align_points(a, b);
}

double ate_rmse(const Trajectory& estimated, const Trajectory& ground_truth, bool align) {
    if (estimated.size() != ground_truth.size()) {
        throw PreconditionError("ate_rmse: frame id sets differ");
    }
    std::vector<Vec3> est, gt;
    est.reserve(estimated.size());
    gt.reserve(estimated.size());
    for (const auto& e : estimated) {
        const auto j = ground_truth.find(e.frame_id);
        if (j < 0) throw PreconditionError("ate_rmse: frame id sets differ");
        est.push_back(e.pose.translation());
        gt.push_back(ground_truth[static_cast<std::size_t>(j)].pose.translation());
    }
    if (est.empty()) return 0.0;

    if (align && est.size() >= 3) {
        const Pose t = horn_align_points(est, gt).transform;
        for (auto& p : est) p = t * p;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) sum += (est[i] - gt[i]).squaredNorm();
    return std::sqrt(sum / static_cast<double>(est.size()));
}

Trajectory read_tum_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open trajectory file: " + path.string());
    Trajectory traj;
    std::string line;
    std::int64_t id = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double t, tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
            throw FormatError("malformed trajectory line: " + line);
        }
        traj.push_back(id++, t, Pose(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz)));
    }
    return traj;
}

void write_tum_trajectory(const std::filesystem::path& path, const Trajectory& trajectory) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write trajectory file: " + path.string());
    char buf[256];
    for (const auto& e : trajectory) {
        const auto& t = e.pose.translation();
        const auto& q = e.pose.quaternion();
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f\n", e.timestamp,
                      t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
        out << buf;
    }
}

}  // namespace sslam
