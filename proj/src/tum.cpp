#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sslam/dataio.hpp"

namespace sslam {

namespace {

struct Stamped {
    double t;
    std::string path;
};

std::vector<Stamped> read_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("missing index file: " + path.string());
    std::vector<Stamped> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Stamped s;
        if (!(ss >> s.t >> s.path)) throw FormatError("malformed index line: " + line);
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const Stamped& a, const Stamped& b) { return a.t < b.t; });
    return out;
}

std::vector<double> stamps(const Trajectory& t) {
    std::vector<double> out;
    for (const auto& e : t) out.push_back(e.timestamp);
    return out;
}

std::string stamp_name(double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", t);
    return buf;
}

}  // namespace

Intrinsics tum_default_intrinsics() {
    Intrinsics k;
    k.fx = k.fy = 525.0;
    k.cx = 319.5;
    k.cy = 239.5;
    k.width = 640;
    k.height = 480;
    return k;
}

std::vector<std::optional<std::size_t>> associate(std::span<const double> queries, std::span<const double> references,
                                                  double max_dt) {
    std::vector<std::optional<std::size_t>> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const double q = queries[i];
        const auto it = std::lower_bound(references.begin(), references.end(), q);
        std::optional<std::size_t> best;
        double best_dt = max_dt + 1e-9;  // stamps are decimal text; absorb binary rounding
        if (it != references.end() && *it - q <= best_dt) {
            best = std::size_t(it - references.begin());
            best_dt = *it - q;
        }
        if (it != references.begin() && q - *(it - 1) <= best_dt) best = std::size_t(it - references.begin() - 1);
        out[i] = best;
    }
    return out;
}

bool TumSequence::has_odometry() const { return !entries.empty() && entries.front().odometry.has_value(); }

Frame TumSequence::load(std::size_t i) const {
    const SequenceEntry& e = entries.at(i);
    Frame f;
    f.id = e.id;
    f.timestamp = e.timestamp;
    f.intrinsics = intrinsics;
    f.depth = read_depth_png(e.depth);
    f.color = read_color_png(e.rgb);
    f.gray = to_gray(f.color);
    f.pose = e.ground_truth;
    if (f.depth.rows() != intrinsics.height || f.depth.cols() != intrinsics.width ||
        f.color.r.rows() != intrinsics.height || f.color.r.cols() != intrinsics.width) {
        throw FormatError("image size differs from intrinsics in frame " + std::to_string(e.id));
    }
    return f;
}

Trajectory TumSequence::ground_truth() const {
    Trajectory t;
    for (const auto& e : entries) t.push_back(e.id, e.timestamp, e.ground_truth);
    return t;
}

Trajectory TumSequence::odometry() const {
    Trajectory t;
    for (const auto& e : entries) {
        if (e.odometry) t.push_back(e.id, e.timestamp, *e.odometry);
    }
    return t;
}

TumSequence read_tum_sequence(const std::filesystem::path& dir) {
    const auto rgb = read_index(dir / "rgb.txt");
    const auto depth = read_index(dir / "depth.txt");
    if (!std::filesystem::exists(dir / "groundtruth.txt")) throw FormatError("missing groundtruth.txt in " + dir.string());
    const Trajectory gt = read_tum_trajectory(dir / "groundtruth.txt");
    std::optional<Trajectory> odo;
    if (std::filesystem::exists(dir / "odometry.txt")) odo = read_tum_trajectory(dir / "odometry.txt");

    TumSequence seq;
    seq.intrinsics = tum_default_intrinsics();
    if (std::ifstream cam(dir / "camera.txt"); cam) {
        Intrinsics k;
        if (!(cam >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) throw FormatError("malformed camera.txt");
        k.validate();
        seq.intrinsics = k;
    }

    std::vector<double> rgb_t, depth_t;
    for (const auto& s : rgb) rgb_t.push_back(s.t);
    for (const auto& s : depth) depth_t.push_back(s.t);
    const auto gt_t = stamps(gt);
    const auto to_depth = associate(rgb_t, depth_t);
    const auto to_gt = associate(rgb_t, gt_t);
    std::vector<std::optional<std::size_t>> to_odo;
    if (odo) to_odo = associate(rgb_t, stamps(*odo));

    seq.report.rgb_entries = rgb.size();
    for (std::size_t i = 0; i < rgb.size(); ++i) {
        if (!to_depth[i]) {
            ++seq.report.dropped_no_depth;
            continue;
        }
        if (!to_gt[i]) {
            ++seq.report.dropped_no_ground_truth;
            continue;
        }
        if (odo && !to_odo[i]) {
            ++seq.report.dropped_no_odometry;
            continue;
        }
        SequenceEntry e;
        e.id = std::int64_t(seq.entries.size());
        e.timestamp = rgb[i].t;
        e.rgb = dir / rgb[i].path;
        e.depth = dir / depth[*to_depth[i]].path;
        e.ground_truth = gt[*to_gt[i]].pose;
        if (odo) e.odometry = (*odo)[*to_odo[i]].pose;
        seq.entries.push_back(std::move(e));
    }
    return seq;
}

void write_tum_sequence(const std::filesystem::path& dir, std::span<const Frame> frames, const Trajectory& ground_truth,
                        const Trajectory& odometry) {
    std::filesystem::create_directories(dir / "rgb");
    std::filesystem::create_directories(dir / "depth");
    std::ofstream rgb(dir / "rgb.txt"), depth(dir / "depth.txt");
    if (!rgb || !depth) throw Error("cannot write index files in " + dir.string());
    rgb << "# timestamp filename\n";
    depth << "# timestamp filename\n";
    for (const Frame& f : frames) {
        const std::string name = stamp_name(f.timestamp);
        if (!f.color.empty()) {
            write_color_png(dir / "rgb" / (name + ".png"), f.color);
        } else {
            write_color_png(dir / "rgb" / (name + ".png"), ColorImage{f.gray, f.gray, f.gray});
        }
        write_depth_png(dir / "depth" / (name + ".png"), f.depth);
        rgb << name << " rgb/" << name << ".png\n";
        depth << name << " depth/" << name << ".png\n";
    }
    write_tum_trajectory(dir / "groundtruth.txt", ground_truth);
    if (!odometry.empty()) write_tum_trajectory(dir / "odometry.txt", odometry);
    if (!frames.empty()) {
        const Intrinsics& k = frames.front().intrinsics;
        std::ofstream cam(dir / "camera.txt");
        cam.precision(17);
        cam << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' ' << k.height << '\n';
    }
}

}  // namespace sslam
