#include "sslam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace sslam {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return mix(mix(a) ^ b); }

// Random rigid transform: uniform axis, angle in [0, pi], translation uniform in a 1 m ball.
Pose random_transform(std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Vec3 axis(n01(rng), n01(rng), n01(rng));
    axis.normalize();
    const double angle = kPi * u01(rng);
    Vec3 dir(n01(rng), n01(rng), n01(rng));
    dir.normalize();
    const double radius = std::cbrt(u01(rng));
    return Pose(Mat3(Eigen::AngleAxisd(angle, axis)), radius * dir);
}

class SlamState {
public:
    SlamState(const PipelineConfig& cfg, const FrameSource& source)
        : cfg_(cfg), source_(source), describer_(cfg.bow), outlier_rng_(mix(cfg.seed, 0x071e5ULL)) {}

    void process(std::size_t i);
    void finish();
    SlamResult take();

private:
    struct ActiveFrame {
        DepthImage depth;
        BowVector bow;
        bool lost = false;
    };

    void start_submap(const Frame& frame);
    void on_submap_complete();
    void log(std::int64_t frame, int submap, std::string type, std::string detail = {}) {
        events_.push_back(Event{frame, submap, std::move(type), std::move(detail)});
    }

    PipelineConfig cfg_;
    const FrameSource& source_;
    BowDescriber describer_;
    KeyframeDatabase database_;
    std::mt19937_64 outlier_rng_;

    std::vector<Submap> submaps_;
    std::vector<PointCloud> surfaces_;  // world frame, empty when degenerate
    std::vector<ActiveFrame> active_frames_;
    Intrinsics intrinsics_;
    int frames_since_keyframe_ = 0;

    Trajectory trajectory_, input_;
    PoseGraph graph_;
    struct LoopTag {
        int id;
        bool injected;
    };
    std::vector<LoopTag> tags_;  // parallel to graph_.loops
    int next_loop_id_ = 0;
    std::vector<LoopConstraint> accepted_constraints_;
    int genuine_edges_ = 0, injected_edges_ = 0;

    // Backend: accumulated correction applied to incoming input poses.
    Pose chain_correction_;
    // Full: last two estimated poses for the motion model.
    std::vector<Pose> recent_;
    std::unique_ptr<TrackingLog> tracking_log_;

    std::vector<Event> events_;
    std::vector<PgoRecord> pgo_runs_;
    int lost_ = 0;
};

void SlamState::start_submap(const Frame& frame) {
    const int id = static_cast<int>(submaps_.size());
    const Submap* prev = submaps_.empty() ? nullptr : &submaps_.back();
    Submap s = create_submap(id, frame, prev);
    add_points(s, frame, frame.pose, cfg_.map_samples, mix(cfg_.seed, static_cast<std::uint64_t>(frame.id)),
               cfg_.resolution);
    submaps_.push_back(std::move(s));
    frames_since_keyframe_ = 0;
    log(frame.id, id, "keyframe");
}

void SlamState::process(std::size_t i) {
    Frame frame = source_.frame(i);
    const auto input = source_.input_pose(i);
    if (i == 0) intrinsics_ = frame.intrinsics;
    if (input) input_.push_back(frame.id, frame.timestamp, *input);

    bool lost = false;
    TrackingStats stats;
    if (cfg_.mode == PipelineMode::Backend) {
        if (!input) throw PreconditionError("backend mode needs an input pose for every frame");
        frame.pose = chain_correction_ * *input;
    } else if (!submaps_.empty()) {
        const Pose init =
            recent_.size() >= 2 ? constant_velocity(recent_.back(), recent_[recent_.size() - 2]) : recent_.back();
        try {
            const TrackingResult r = track_frame(submaps_.back(), frame, init, cfg_.tracker);
            frame.pose = r.pose;
            stats = r.stats;
        } catch (const TrackingLostError& e) {
            frame.pose = init;
            lost = true;
            ++lost_;
            log(frame.id, submaps_.back().id, "tracking-lost", e.what());
        }
    } else {
        // First frame anchors the map at the provided pose (identity if none).
        frame.pose = input ? *input : Pose();
    }

    bool triggered = false;
    if (submaps_.empty()) {
        start_submap(frame);
    } else if (should_trigger_keyframe(frame.pose, submaps_.back().keyframe_pose, cfg_.tracker)) {
        triggered = true;
        const Pose before = submaps_.back().keyframe_pose;
        on_submap_complete();
        // Corrections of the completed submap carry over to the frame that closes it.
        const Pose delta = submaps_.back().keyframe_pose * before.inverse();
        frame.pose = delta * frame.pose;
        for (Pose& p : recent_) p = delta * p;
        start_submap(frame);
    } else {
        Submap& active = submaps_.back();
        active.add_frame(frame.id, frame.pose);
        ++frames_since_keyframe_;
        if (!lost && frames_since_keyframe_ % cfg_.map_every == 0) {
            add_points(active, frame, frame.pose, cfg_.map_samples,
                       mix(cfg_.seed, static_cast<std::uint64_t>(frame.id)), cfg_.resolution);
            active.local_keyframes.push_back(frame.id);
        }
    }

    active_frames_.push_back(ActiveFrame{std::move(frame.depth), describer_.describe(frame.gray), lost});
    trajectory_.push_back(frame.id, frame.timestamp, frame.pose);
    recent_.push_back(frame.pose);
    if (recent_.size() > 2) recent_.erase(recent_.begin());

    if (cfg_.mode == PipelineMode::Full) {
        if (!tracking_log_ && !cfg_.output_dir.empty()) {
            std::filesystem::create_directories(cfg_.output_dir);
            tracking_log_ = std::make_unique<TrackingLog>(cfg_.output_dir / "tracking.csv");
        }
        if (tracking_log_) tracking_log_->write(frame.id, stats, triggered, lost);
    }
}

void SlamState::on_submap_complete() {
    Submap& s = submaps_.back();
    const int sid = s.id;
    const std::int64_t kf = s.keyframe_id;
    log(kf, sid, "submap-complete", std::to_string(s.frame_ids.size()) + " frames");

    std::vector<PosedDepth> posed;
    posed.reserve(active_frames_.size());
    for (std::size_t k = 0; k < active_frames_.size(); ++k) {
        if (!active_frames_[k].lost) posed.push_back({&active_frames_[k].depth, s.frame_poses[k]});
    }
    PointCloud surface;
    try {
        TsdfParams fp = cfg_.fusion;
        fp.seed = mix(cfg_.seed ^ fp.seed, static_cast<std::uint64_t>(sid));
        surface = fuse_submap_surface(posed, intrinsics_, fp);
    } catch (const Error& e) {
        log(kf, sid, "degenerate-surface", e.what());
    }
    surfaces_.push_back(std::move(surface));
    const PointCloud& cur = surfaces_.back();

    CorrespondenceSet odo;
    if (sid > 0 && !cur.empty() && !surfaces_[sid - 1].empty())
        odo = build_correspondence_set(surfaces_[sid - 1], cur, Pose(), cfg_.pgo.epsilon);
    graph_.add_node(std::move(odo));

    std::vector<BowVector> bows;
    bows.reserve(active_frames_.size());
    for (auto& f : active_frames_) bows.push_back(std::move(f.bow));
    active_frames_.clear();
    const BowVector& kf_bow = bows.front();

    int added = 0;
    if (cfg_.loop_closure && !cur.empty() && !kf_bow.degenerate) {
        const double s_min = dynamic_threshold(kf_bow, bows);
        const auto candidates = database_.query(kf_bow, sid, cfg_.top_k, s_min, cfg_.min_loop_distance);
        std::ostringstream cs;
        cs << "s_min=" << s_min;
        for (const auto& c : candidates) cs << " " << c.submap_id << ":" << c.score;
        log(kf, sid, "loop-candidates", cs.str());

        std::vector<LoopConstraint> fresh;
        for (const auto& c : candidates) {
            const PointCloud& tgt = surfaces_[c.submap_id];
            if (tgt.empty()) continue;
            LoopRegistrationParams rp = cfg_.registration;
            rp.seed = mix(mix(cfg_.seed ^ rp.seed, static_cast<std::uint64_t>(sid)), static_cast<std::uint64_t>(c.submap_id));
            LoopConstraint lc = compute_loop_constraint(cur, tgt, rp);
            lc.source = sid;
            lc.target = c.submap_id;
            fresh.push_back(lc);
        }

        std::vector<LoopConstraint> kept;
        if (cfg_.prefilter) {
            std::vector<LoopConstraint> pool = accepted_constraints_;
            pool.insert(pool.end(), fresh.begin(), fresh.end());
            const PrefilterResult pf = prefilter_loop_edges(pool, cfg_.sigma_min, cfg_.f_min);
            for (const auto& c : pf.kept)
                if (c.source == sid) kept.push_back(c);
        } else {
            kept = fresh;
        }
        for (const auto& c : fresh) {
            const bool ok = std::any_of(kept.begin(), kept.end(), [&](const LoopConstraint& k) { return k.target == c.target; });
            std::ostringstream d;
            d << c.source << "->" << c.target << " fitness=" << c.fitness << " rmse=" << c.inlier_rmse;
            log(kf, sid, ok ? "loop-accepted" : "loop-rejected", d.str());
        }

        for (const auto& c : kept) {
            LoopEdge e;
            e.source = c.source;
            e.target = c.target;
            e.constraint = c.T_st;
            e.fitness = c.fitness;
            e.corr = build_correspondence_set(cur, surfaces_[c.target], c.T_st, cfg_.pgo.epsilon);
            e.reverse_count =
                build_correspondence_set(surfaces_[c.target], cur, c.T_st.inverse(), cfg_.pgo.epsilon).size();
            graph_.add_loop(std::move(e));
            tags_.push_back({next_loop_id_++, false});
            accepted_constraints_.push_back(c);
            ++genuine_edges_;
            ++added;
        }

        // Test hook: random-transform edges to older submaps.
        const int target_injected = static_cast<int>(std::floor(cfg_.outlier_ratio * genuine_edges_ + 0.5));
        while (added > 0 && injected_edges_ < target_injected && sid >= 2) {
            std::uniform_int_distribution<int> pick(0, sid - 2);
            LoopEdge e;
            e.source = sid;
            e.target = pick(outlier_rng_);
            e.constraint = random_transform(outlier_rng_);
            if (surfaces_[e.target].empty()) continue;
            e.corr = build_correspondence_set(cur, surfaces_[e.target], e.constraint, cfg_.pgo.epsilon);
            e.reverse_count =
                build_correspondence_set(surfaces_[e.target], cur, e.constraint.inverse(), cfg_.pgo.epsilon).size();
            e.fitness = static_cast<double>(e.corr.size()) / static_cast<double>(surfaces_[e.target].size());
            std::ostringstream d;
            d << e.source << "->" << e.target << " angle=" << rad2deg(e.constraint.angle())
              << " pairs=" << e.corr.size();
            log(kf, sid, "outlier-injected", d.str());
            graph_.add_loop(std::move(e));
            tags_.push_back({next_loop_id_++, true});
            ++injected_edges_;
        }
    }

    if (added == 0) {
        log(kf, sid, "no-loop");
    } else {
        PgoRecord rec;
        rec.submap = sid;
        for (std::size_t k = 0; k < graph_.loops.size(); ++k) {
            const auto& e = graph_.loops[k];
            rec.edges.push_back(LoopEdgeRecord{tags_[k].id, e.source, e.target, e.fitness, 0.0, tags_[k].injected, false});
        }
        PgoResult r = optimize(graph_, cfg_.pgo);
        std::vector<LoopTag> survivors;
        for (std::size_t k = 0; k < rec.edges.size(); ++k) {
            rec.edges[k].weight = r.report.stage1_weights[k];
            rec.edges[k].pruned = r.report.stage1_weights[k] < cfg_.pgo.l_min;
            if (!rec.edges[k].pruned) survivors.push_back(tags_[k]);
        }
        tags_ = std::move(survivors);
        if (tags_.size() != graph_.loops.size()) throw Error("pipeline: pruned edge bookkeeping mismatch");

        std::ostringstream d;
        d << "before=" << r.report.objective_before << " after=" << r.report.objective_after
          << " pruned=" << r.report.pruned.size() << " kept=" << graph_.loops.size();
        if (!r.report.warning.empty()) d << " warning=" << r.report.warning;
        log(kf, sid, "pgo", d.str());
        rec.report = std::move(r.report);
        pgo_runs_.push_back(std::move(rec));

        apply_corrections(submaps_, trajectory_, r.corrections);
        for (std::size_t k = 0; k < surfaces_.size(); ++k) {
            if (surfaces_[k].empty()) continue;
            const Pose& c = r.corrections[k];
            surfaces_[k] = surfaces_[k].transformed(c);
        }
        for (auto& lc : accepted_constraints_)
            lc.T_st = r.corrections[lc.target] * lc.T_st * r.corrections[lc.source].inverse();
        graph_.rebase(r.corrections);
        chain_correction_ = r.corrections[sid] * chain_correction_;
    }

    database_.add(static_cast<int>(kf), sid, kf_bow);
}

void SlamState::finish() {
    if (!submaps_.empty() && graph_.nodes.size() < submaps_.size()) on_submap_complete();
}

SlamResult SlamState::take() {
    SlamResult out;
    out.global_map = fuse_features(submaps_);
    out.trajectory = std::move(trajectory_);
    out.input_trajectory = std::move(input_);
    out.submaps = std::move(submaps_);
    out.graph = std::move(graph_);
    out.events = std::move(events_);
    out.pgo_runs = std::move(pgo_runs_);
    out.metrics.n_submaps = static_cast<int>(out.submaps.size());
    out.metrics.n_pgo = static_cast<int>(out.pgo_runs.size());
    out.metrics.n_loop_edges = static_cast<int>(out.graph.loops.size());
    out.metrics.n_tracking_lost = lost_;
    return out;
}

}  // namespace

void PipelineConfig::validate() const {
    tracker.validate();
    pgo.validate();
    if (top_k < 0) throw PreconditionError("top_k must be >= 0");
    if (min_loop_distance < 1) throw PreconditionError("min_loop_distance must be >= 1");
    if (!(sigma_min > 0.0) || f_min < 0.0 || f_min > 1.0) throw PreconditionError("bad prefilter parameters");
    if (map_every < 1 || map_samples < 0) throw PreconditionError("bad mapping parameters");
    if (!(fusion.voxel_size > 0.0) || !(fusion.truncation > 0.0)) throw PreconditionError("bad fusion parameters");
    if (outlier_ratio < 0.0) throw PreconditionError("outlier_ratio must be >= 0");
    if (!(f_score_tau > 0.0)) throw PreconditionError("f_score_tau must be > 0");
}

PipelineConfig PipelineConfig::from_config(const KeyValueConfig& c) {
    PipelineConfig p;
    std::string mode;
    c.get("mode", mode);
    if (mode == "full") {
        p.mode = PipelineMode::Full;
    } else if (mode == "backend" || mode.empty()) {
        p.mode = PipelineMode::Backend;
    } else {
        throw FormatError("config: mode must be full or backend, got " + mode);
    }

    c.get("theta", p.tracker.theta);
    c.get("sigma", p.tracker.sigma);
    c.get("track_max_corr_dist", p.tracker.max_corr_dist);
    c.get("track_max_iterations", p.tracker.max_iterations);
    c.get("track_huber_delta", p.tracker.huber_delta);
    c.get("track_samples", p.tracker.samples);

    c.get("lambda", p.pgo.lambda);
    c.get("mu_factor", p.pgo.mu_factor);
    c.get("epsilon", p.pgo.epsilon);
    c.get("l_min", p.pgo.l_min);
    c.get("pgo_max_iterations", p.pgo.max_iterations);
    c.get("global_kappa", p.pgo.global_kappa);

    c.get("coarse_voxel", p.registration.coarse_voxel);
    c.get("normal_radius", p.registration.normal_radius);
    c.get("fpfh_radius", p.registration.fpfh_radius);
    c.get("coarse_corr_dist", p.registration.coarse_corr_dist);
    c.get("fine_corr_dist", p.registration.fine_corr_dist);
    c.get("ransac_max_iterations", p.registration.max_iterations);
    c.get("ransac_confidence", p.registration.confidence);

    double fast_threshold = p.bow.fast_threshold;
    c.get("fast_threshold", fast_threshold);
    p.bow.fast_threshold = static_cast<float>(fast_threshold);
    c.get("max_keypoints", p.bow.max_keypoints);
    c.get("idf_frames", p.bow.idf_frames);

    c.get("voxel_size", p.fusion.voxel_size);
    c.get("truncation", p.fusion.truncation);
    c.get("max_depth", p.fusion.max_depth);
    c.get("samples_per_m2", p.fusion.samples_per_m2);
    c.get("max_surface_samples", p.fusion.max_surface_samples);

    c.get("rho_min", p.resolution.rho_min);
    c.get("rho_max", p.resolution.rho_max);

    c.get("loop_closure", p.loop_closure);
    c.get("top_k", p.top_k);
    c.get("sigma_min", p.sigma_min);
    c.get("f_min", p.f_min);
    c.get("prefilter", p.prefilter);
    c.get("min_loop_distance", p.min_loop_distance);
    c.get("map_every", p.map_every);
    c.get("map_samples", p.map_samples);
    c.get("f_score_tau", p.f_score_tau);
    c.get("outlier_ratio", p.outlier_ratio);
    c.get("seed", p.seed);
    c.check_consumed();
    p.validate();
    return p;
}

TumFrameSource::TumFrameSource(TumSequence seq, std::optional<PointCloud> gt_cloud)
    : seq_(std::move(seq)), gt_cloud_(std::move(gt_cloud)) {}

std::optional<Pose> TumFrameSource::input_pose(std::size_t i) const {
    const auto& e = seq_.entries[i];
    return e.odometry ? *e.odometry : e.ground_truth;
}

SlamResult run(const PipelineConfig& config, const FrameSource& source) {
    config.validate();
    if (source.size() == 0) throw PreconditionError("run: empty sequence");
    const auto t0 = std::chrono::steady_clock::now();

    SlamState state(config, source);
    for (std::size_t i = 0; i < source.size(); ++i) state.process(i);
    state.finish();
    SlamResult result = state.take();

    const Trajectory gt = source.ground_truth();
    if (!gt.empty()) {
        result.metrics.ate_rmse_m = ate_rmse(result.trajectory, gt, true);
        if (!result.input_trajectory.empty())
            result.metrics.odometry_ate_rmse_m = ate_rmse(result.input_trajectory, gt, true);
    }
    if (const PointCloud* cloud = source.ground_truth_cloud(); cloud && !cloud->empty() && result.global_map.size() > 0)
        result.metrics.reconstruction = f_score(result.global_map.cloud(), *cloud, config.f_score_tau);
    result.metrics.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!config.output_dir.empty()) write_outputs(config.output_dir, result);
    return result;
}

std::string metrics_json(const SlamMetrics& m) {
    nlohmann::ordered_json j;
    j["ate_rmse_m"] = m.ate_rmse_m;
    j["odometry_ate_rmse_m"] = m.odometry_ate_rmse_m;
    if (m.reconstruction) {
        j["f_score"] = m.reconstruction->f1;
        j["precision"] = m.reconstruction->precision;
        j["recall"] = m.reconstruction->recall;
        j["tau_m"] = m.reconstruction->tau;
    } else {
        j["f_score"] = nullptr;
        j["precision"] = nullptr;
        j["recall"] = nullptr;
    }
    j["n_submaps"] = m.n_submaps;
    j["n_pgo"] = m.n_pgo;
    j["n_loop_edges"] = m.n_loop_edges;
    j["n_tracking_lost"] = m.n_tracking_lost;
    j["runtime_s"] = m.runtime_s;
    return j.dump(2);
}

void write_outputs(const std::filesystem::path& dir, const SlamResult& r) {
    std::filesystem::create_directories(dir);
    write_tum_trajectory(dir / "trajectory.txt", r.trajectory);
    write_global_map_ply(dir / "global_map.ply", r.global_map);
    write_links_csv(dir / "links.csv", r.submaps);
    r.graph.save(dir / "pose_graph.txt");
    {
        std::ofstream out(dir / "metrics.json");
        out << metrics_json(r.metrics) << "\n";
    }
    std::ofstream ev(dir / "events.jsonl");
    for (const auto& e : r.events) {
        nlohmann::ordered_json j;
        j["frame"] = e.frame_id;
        j["submap"] = e.submap;
        j["type"] = e.type;
        if (!e.detail.empty()) j["detail"] = e.detail;
        ev << j.dump() << "\n";
    }
    if (!ev) throw Error("cannot write events to " + dir.string());
}

}  // namespace sslam
