#include "sslam/pose_graph.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sslam {

namespace {

// One edge prepared for evaluation: stored source points and their constrained images.
struct Term {
    int s = 0, t = 0;
    const std::vector<Vec3>* p = nullptr;
    std::vector<Vec3> xp;
};

std::vector<Term> make_terms(const PoseGraph& g) {
    std::vector<Term> terms;
    auto add = [&](int s, int t, const Pose& x, const CorrespondenceSet& c) {
        Term term{s, t, &c.p, {}};
        term.xp.reserve(c.size());
        for (const Vec3& p : c.p) term.xp.push_back(x * p);
        terms.push_back(std::move(term));
    };
    for (const auto& e : g.odometry) add(e.source, e.target, e.constraint, e.corr);
    for (const auto& e : g.loops) add(e.source, e.target, e.constraint, e.corr);
    return terms;
}

double term_residual(const Term& term, const std::vector<Pose>& nodes) {
    const Pose& ts = nodes[term.s];
    const Pose& tt = nodes[term.t];
    double f = 0.0;
    for (std::size_t i = 0; i < term.xp.size(); ++i) f += (ts * (*term.p)[i] - tt * term.xp[i]).squaredNorm();
    return f;
}

double weighted_energy(const std::vector<Term>& terms, const std::vector<Pose>& nodes, const std::vector<double>& w) {
    double e = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (w[k] != 0.0) e += w[k] * term_residual(terms[k], nodes);
    }
    return e;
}

enum class StepOutcome { Accepted, Converged, Stalled };

// One accepted Levenberg-Marquardt step on the weighted sum of edge residuals, with
// left-multiplied twist increments on nodes 1..n-1.
StepOutcome lm_step(const std::vector<Term>& terms, std::vector<Pose>& nodes, const std::vector<double>& w,
                    double& energy, double& damping, const PgoParams& params) {
    const int n = int(nodes.size());
    if (n < 2) return StepOutcome::Converged;
    const int dim = 6 * (n - 1);
    MatX H = MatX::Zero(dim, dim);
    VecX g = VecX::Zero(dim);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        const Term& term = terms[k];
        if (w[k] == 0.0 || term.xp.empty()) continue;
        const Pose& ts = nodes[term.s];
        const Pose& tt = nodes[term.t];
        Eigen::Matrix<double, 12, 12> h = Eigen::Matrix<double, 12, 12>::Zero();
        Eigen::Matrix<double, 12, 1> b = Eigen::Matrix<double, 12, 1>::Zero();
        Eigen::Matrix<double, 3, 12> J;
        for (std::size_t i = 0; i < term.xp.size(); ++i) {
            const Vec3 a = ts * (*term.p)[i];
            const Vec3 c = tt * term.xp[i];
            J.block<3, 3>(0, 0) = -skew(a);
            J.block<3, 3>(0, 3).setIdentity();
            J.block<3, 3>(0, 6) = skew(c);
            J.block<3, 3>(0, 9) = -Mat3::Identity();
            h.noalias() += J.transpose() * J;
            b.noalias() += J.transpose() * (a - c);
        }
        const int idx[2] = {term.s, term.t};
        for (int x = 0; x < 2; ++x) {
            if (idx[x] == 0) continue;
            const int rx = 6 * (idx[x] - 1);
            g.segment<6>(rx) += w[k] * b.segment<6>(6 * x);
            for (int y = 0; y < 2; ++y) {
                if (idx[y] == 0) continue;
                H.block<6, 6>(rx, 6 * (idx[y] - 1)) += w[k] * h.block<6, 6>(6 * x, 6 * y);
            }
        }
    }
    if (g.norm() <= 1e-12 * (1.0 + energy)) return StepOutcome::Converged;

    const VecX diag = H.diagonal().cwiseMax(1e-9);
    while (damping <= params.max_damping) {
        MatX A = H;
        A.diagonal() += damping * diag;
        const VecX delta = -A.ldlt().solve(g);
        std::vector<Pose> cand = nodes;
        if (delta.allFinite()) {
            for (int i = 1; i < n; ++i) cand[i] = se3_exp(Twist(delta.segment<6>(6 * (i - 1)))) * nodes[i];
            const double e = weighted_energy(terms, cand, w);
            if (e < energy) {
                nodes = std::move(cand);
                energy = e;
                damping = std::max(damping * params.damping_down, 1e-15);
                return StepOutcome::Accepted;
            }
        }
        damping *= params.damping_up;
    }
    return g.norm() <= 1e-8 * (1.0 + energy) ? StepOutcome::Converged : StepOutcome::Stalled;
}

std::vector<double> loop_mu(const PoseGraph& g, const PgoParams& params) {
    std::vector<double> kappa;
    for (const auto& e : g.loops) kappa.push_back(0.5 * double(e.corr.size() + e.reverse_count));
    if (params.global_kappa && !kappa.empty()) {
        double mean = 0.0;
        for (double k : kappa) mean += k;
        mean /= double(kappa.size());
        for (double& k : kappa) k = mean;
    }
    for (double& k : kappa) k *= params.mu_factor;
    return kappa;
}

void write_pose(std::ostream& os, const Pose& p) {
    const Vec3& t = p.translation();
    const auto& q = p.quaternion();
    os << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w();
}

Pose read_pose(std::istream& is) {
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(is >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) throw FormatError("pose graph: malformed pose");
    return Pose(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
}

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("pose graph sidecar truncated");
    return v;
}

void put_corr(std::ostream& os, const CorrespondenceSet& c) {
    put<std::uint64_t>(os, c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (int k = 0; k < 3; ++k) put(os, c.p[i][k]);
        for (int k = 0; k < 3; ++k) put(os, c.q[i][k]);
    }
}

CorrespondenceSet take_corr(std::istream& is) {
    const auto n = take<std::uint64_t>(is);
    if (n > (std::uint64_t(1) << 32)) throw FormatError("pose graph sidecar: implausible pair count");
    CorrespondenceSet c;
    c.p.resize(n);
    c.q.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) c.p[i][k] = take<double>(is);
        for (int k = 0; k < 3; ++k) c.q[i][k] = take<double>(is);
    }
    return c;
}

constexpr char kSidecarMagic[4] = {'S', 'C', 'O', 'R'};
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

CorrespondenceSet build_correspondence_set(const PointCloud& source, const PointCloud& target,
                                           const SpatialIndex& target_index, const Pose& x, double eps) {
    if (!(eps > 0.0)) throw PreconditionError("build_correspondence_set: eps must be positive");
    CorrespondenceSet c;
    const double eps2 = eps * eps;
    for (const Vec3& p : source.positions) {
        double d2 = 0.0;
        const int j = target_index.nearest(x * p, &d2);
        if (j < 0 || d2 > eps2) continue;
        c.p.push_back(p);
        c.q.push_back(target.positions[std::size_t(j)]);
    }
    return c;
}

CorrespondenceSet build_correspondence_set(const PointCloud& source, const PointCloud& target, const Pose& x,
                                           double eps) {
    return build_correspondence_set(source, target, build_index(target), x, eps);
}

EdgeResidual edge_residual(const Pose& t_s, const Pose& t_t, const Pose& x, const CorrespondenceSet& corr) {
    EdgeResidual r;
    r.degenerate = corr.empty();
    const Pose tx = t_t * x;
    for (const Vec3& p : corr.p) r.value += (t_s * p - tx * p).squaredNorm();
    return r;
}

double line_process_weight(double residual, double mu) {
    if (!(mu > 0.0) || !(residual >= 0.0)) throw PreconditionError("line_process_weight: need mu > 0 and residual >= 0");
    const double a = mu / (mu + residual);
    return a * a;
}

int PoseGraph::add_node(CorrespondenceSet odometry_corr) {
    nodes.push_back(Pose::Identity());
    const int id = int(nodes.size()) - 1;
    if (id > 0) odometry.push_back(OdometryEdge{id - 1, id, Pose::Identity(), std::move(odometry_corr)});
    return id;
}

void PoseGraph::add_loop(LoopEdge edge) {
    const int n = int(nodes.size());
    if (edge.source < 0 || edge.target < 0 || edge.source >= n || edge.target >= n) {
        throw PreconditionError("pose graph: loop edge references a missing node");
    }
    if (std::abs(edge.source - edge.target) < 2) throw PreconditionError("pose graph: loop edge between adjacent nodes");
    loops.push_back(std::move(edge));
}

void PoseGraph::validate() const {
    if (nodes.empty()) throw PreconditionError("pose graph: no nodes");
    if (!nodes[0].isApprox(Pose::Identity(), 1e-12)) throw PreconditionError("pose graph: node 0 must be identity");
    if (odometry.size() + 1 != nodes.size()) throw PreconditionError("pose graph: disconnected (missing odometry edges)");
    for (std::size_t i = 0; i < odometry.size(); ++i) {
        if (odometry[i].source != int(i) || odometry[i].target != int(i) + 1) {
            throw PreconditionError("pose graph: odometry edges must link consecutive ids");
        }
    }
    const int n = int(nodes.size());
    for (const auto& e : loops) {
        if (e.source < 0 || e.target < 0 || e.source >= n || e.target >= n || std::abs(e.source - e.target) < 2) {
            throw PreconditionError("pose graph: invalid loop edge");
        }
    }
}

void PoseGraph::rebase(const std::vector<Pose>& corrections) {
    if (corrections.size() != nodes.size()) throw PreconditionError("pose graph: one correction per node required");
    auto move_edge = [&](int s, int t, Pose& x, CorrespondenceSet& c) {
        const Pose& cs = corrections[s];
        const Pose& ct = corrections[t];
        for (auto& p : c.p) p = cs * p;
        for (auto& q : c.q) q = ct * q;
        x = ct * x * cs.inverse();
    };
    for (auto& e : odometry) move_edge(e.source, e.target, e.constraint, e.corr);
    for (auto& e : loops) move_edge(e.source, e.target, e.constraint, e.corr);
    for (auto& n : nodes) n = Pose::Identity();
}

void PoseGraph::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os.precision(17);
    os << "SSLAM_POSE_GRAPH " << kFormatVersion << '\n';
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        os << "NODE " << i << ' ';
        write_pose(os, nodes[i]);
        os << '\n';
    }
    for (const auto& e : odometry) {
        os << "EDGE_ODOM " << e.source << ' ' << e.target << ' ';
        write_pose(os, e.constraint);
        os << '\n';
    }
    for (const auto& e : loops) {
        os << "EDGE_LOOP " << e.source << ' ' << e.target << ' ';
        write_pose(os, e.constraint);
        os << ' ' << e.fitness << '\n';
    }

    std::ofstream bin(path.string() + ".corr", std::ios::binary);
    if (!bin) throw Error("cannot write " + path.string() + ".corr");
    bin.write(kSidecarMagic, 4);
    put(bin, kFormatVersion);
    put<std::uint64_t>(bin, odometry.size());
    put<std::uint64_t>(bin, loops.size());
    for (const auto& e : odometry) put_corr(bin, e.corr);
    for (const auto& e : loops) {
        put_corr(bin, e.corr);
        put<std::uint64_t>(bin, e.reverse_count);
        put(bin, e.weight);
    }
}

PoseGraph PoseGraph::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path.string());
    std::string tag;
    std::uint32_t version = 0;
    if (!(is >> tag >> version) || tag != "SSLAM_POSE_GRAPH" || version != kFormatVersion) {
        throw FormatError("pose graph: bad header in " + path.string());
    }
    PoseGraph g;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ss >> tag;
        if (tag == "NODE") {
            std::size_t id;
            if (!(ss >> id) || id != g.nodes.size()) throw FormatError("pose graph: nodes out of order");
            g.nodes.push_back(read_pose(ss));
        } else if (tag == "EDGE_ODOM") {
            OdometryEdge e;
            if (!(ss >> e.source >> e.target)) throw FormatError("pose graph: malformed odometry edge");
            e.constraint = read_pose(ss);
            g.odometry.push_back(std::move(e));
        } else if (tag == "EDGE_LOOP") {
            LoopEdge e;
            if (!(ss >> e.source >> e.target)) throw FormatError("pose graph: malformed loop edge");
            e.constraint = read_pose(ss);
            if (!(ss >> e.fitness)) throw FormatError("pose graph: loop edge without fitness");
            g.loops.push_back(std::move(e));
        } else {
            throw FormatError("pose graph: unknown record " + tag);
        }
    }

    std::ifstream bin(path.string() + ".corr", std::ios::binary);
    if (!bin) throw FormatError("pose graph: missing sidecar for " + path.string());
    char magic[4];
    if (!bin.read(magic, 4) || std::memcmp(magic, kSidecarMagic, 4) != 0 || take<std::uint32_t>(bin) != kFormatVersion) {
        throw FormatError("pose graph sidecar: bad header");
    }
    if (take<std::uint64_t>(bin) != g.odometry.size() || take<std::uint64_t>(bin) != g.loops.size()) {
        throw FormatError("pose graph sidecar: edge count mismatch");
    }
    for (auto& e : g.odometry) e.corr = take_corr(bin);
    for (auto& e : g.loops) {
        e.corr = take_corr(bin);
        e.reverse_count = take<std::uint64_t>(bin);
        e.weight = take<double>(bin);
    }
    return g;
}

void PgoParams::validate() const {
    if (!(lambda > 0.0) || !(mu_factor > 0.0) || !(l_min > 0.0 && l_min < 1.0) || !(epsilon > 0.0)) {
        throw PreconditionError("pgo: need lambda > 0, mu_factor > 0, epsilon > 0, 0 < l_min < 1");
    }
    if (!(damping_init > 0.0) || !(damping_up > 1.0) || !(damping_down > 0.0 && damping_down < 1.0) ||
        max_iterations < 1) {
        throw PreconditionError("pgo: bad damping schedule");
    }
}

double robust_objective(const PoseGraph& graph, const std::vector<Pose>& nodes, const std::vector<double>& weights,
                        const PgoParams& params) {
    const auto terms = make_terms(graph);
    const auto mu = loop_mu(graph, params);
    double e = 0.0;
    for (std::size_t k = 0; k < graph.odometry.size(); ++k) e += term_residual(terms[k], nodes);
    for (std::size_t k = 0; k < graph.loops.size(); ++k) {
        const double l = weights[k];
        const double pen = std::sqrt(l) - 1.0;
        e += params.lambda * (l * term_residual(terms[graph.odometry.size() + k], nodes) + mu[k] * pen * pen);
    }
    return e;
}

PgoResult optimize(PoseGraph& graph, const PgoParams& params) {
    params.validate();
    graph.validate();
    PgoResult out;
    PgoReport& rep = out.report;
    std::vector<Pose> nodes = graph.nodes;
    const std::size_t n_odo = graph.odometry.size(), n_loop = graph.loops.size();

    // Stage 1.
    {
        const auto terms = make_terms(graph);
        const auto mu = loop_mu(graph, params);
        std::vector<double> l(n_loop, 1.0);
        std::vector<double> f(n_loop, 0.0);
        auto update_l = [&] {
            for (std::size_t k = 0; k < n_loop; ++k) {
                f[k] = term_residual(terms[n_odo + k], nodes);
                l[k] = graph.loops[k].corr.empty() || !(mu[k] > 0.0) ? 0.0 : line_process_weight(f[k], mu[k]);
            }
        };
        auto objective = [&] {
            double e = 0.0;
            for (std::size_t k = 0; k < n_odo; ++k) e += term_residual(terms[k], nodes);
            for (std::size_t k = 0; k < n_loop; ++k) {
                const double pen = std::sqrt(l[k]) - 1.0;
                e += params.lambda * (l[k] * term_residual(terms[n_odo + k], nodes) + mu[k] * pen * pen);
            }
            return e;
        };

        update_l();
        double e = objective();
        rep.objective_before = e;
        rep.stage1_trace.push_back(e);
        double damping = params.damping_init;
        for (int it = 0; it < params.max_iterations; ++it) {
            std::vector<double> w(terms.size(), 1.0);
            for (std::size_t k = 0; k < n_loop; ++k) w[n_odo + k] = params.lambda * l[k];
            double weighted = weighted_energy(terms, nodes, w);
            const StepOutcome step = lm_step(terms, nodes, w, weighted, damping, params);
            if (step == StepOutcome::Stalled) rep.warning = "stage 1: LM stalled at maximum damping";
            if (step != StepOutcome::Accepted) break;
            rep.stage1_trace.push_back(objective());
            update_l();
            const double next = objective();
            rep.stage1_trace.push_back(next);
            rep.stage1_iterations = it + 1;
            const bool done = e - next <= params.relative_tolerance * std::abs(e);
            e = next;
            if (done) break;
        }
        rep.stage1_weights = l;
    }

    // Prune, then stage 2 with the survivors at full weight.
    std::vector<LoopEdge> kept;
    for (std::size_t k = 0; k < n_loop; ++k) {
        graph.loops[k].weight = rep.stage1_weights[k];
        if (rep.stage1_weights[k] < params.l_min) {
            rep.pruned.emplace_back(graph.loops[k].source, graph.loops[k].target);
        } else {
            kept.push_back(std::move(graph.loops[k]));
        }
    }
    graph.loops = std::move(kept);
    {
        const auto terms = make_terms(graph);
        std::vector<double> w(terms.size(), 1.0);
        for (std::size_t k = n_odo; k < terms.size(); ++k) w[k] = params.lambda;
        double e = weighted_energy(terms, nodes, w);
        rep.stage2_trace.push_back(e);
        double damping = params.damping_init;
        for (int it = 0; it < params.max_iterations; ++it) {
            const double before = e;
            const StepOutcome step = lm_step(terms, nodes, w, e, damping, params);
            if (step == StepOutcome::Stalled && rep.warning.empty()) rep.warning = "stage 2: LM stalled at maximum damping";
            if (step != StepOutcome::Accepted) break;
            rep.stage2_trace.push_back(e);
            rep.stage2_iterations = it + 1;
            if (before - e <= params.relative_tolerance * std::abs(before)) break;
        }
        rep.objective_after = e;
    }

    graph.nodes = nodes;
    out.corrections = nodes;
    for (const auto& e : graph.loops) out.weights.push_back(e.weight);
    return out;
}

void apply_corrections(std::span<Submap> submaps, Trajectory& trajectory, const std::vector<Pose>& corrections) {
    for (const auto& s : submaps) {
        if (s.id < 0 || std::size_t(s.id) >= corrections.size()) {
            throw PreconditionError("apply_corrections: missing correction for submap " + std::to_string(s.id));
        }
    }
    for (auto& s : submaps) {
        apply_correction(s, corrections[std::size_t(s.id)]);
        for (std::size_t i = 0; i < s.frame_ids.size(); ++i) {
            const auto idx = trajectory.find(s.frame_ids[i]);
            if (idx >= 0) trajectory.set_pose(std::size_t(idx), s.frame_poses[i]);
        }
    }
}

}  // namespace sslam
