// Command-line front end: run the pipeline, evaluate trajectories, write synthetic sequences.
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sslam/pipeline.hpp"

using namespace sslam;

namespace {

constexpr const char* kGtCloud = "gt_cloud.ply";

int cmd_run(const std::string& mode, const std::filesystem::path& dataset, const std::string& format,
            const std::filesystem::path& config_path, const std::filesystem::path& out,
            const std::optional<std::uint64_t>& seed) {
    KeyValueConfig kv = config_path.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_path);
    if (!mode.empty()) kv.set("mode", mode);
    if (seed) kv.set("seed", std::to_string(*seed));
    PipelineConfig cfg = PipelineConfig::from_config(kv);
    cfg.output_dir = out;

    TumSequence seq = read_tum_sequence(dataset);
    const auto& rep = seq.report;
    std::cerr << "loaded " << seq.size() << " of " << rep.rgb_entries << " frames (dropped: " << rep.dropped_no_depth
              << " no depth, " << rep.dropped_no_ground_truth << " no ground truth, " << rep.dropped_no_odometry
              << " no odometry)\n";
    std::optional<PointCloud> cloud;
    if (std::filesystem::exists(dataset / kGtCloud)) {
        cloud = read_ply(dataset / kGtCloud);
    } else if (format == "synth") {
        throw FormatError("synth dataset lacks " + std::string(kGtCloud));
    }
    if (format == "synth" && !seq.has_odometry()) throw FormatError("synth dataset lacks odometry.txt");

    const SlamResult r = run(cfg, TumFrameSource(std::move(seq), std::move(cloud)));
    std::cout << metrics_json(r.metrics) << "\n";
    return 0;
}

int cmd_eval(const std::filesystem::path& est_path, const std::filesystem::path& gt_path) {
    const Trajectory est = read_tum_trajectory(est_path);
    const Trajectory gt = read_tum_trajectory(gt_path);
    std::vector<double> qs, rs;
    for (const auto& e : est) qs.push_back(e.timestamp);
    for (const auto& e : gt) rs.push_back(e.timestamp);
    const auto match = associate(qs, rs);
    Trajectory a, b;
    for (std::size_t i = 0; i < est.size(); ++i) {
        if (!match[i]) continue;
        const auto id = static_cast<std::int64_t>(a.size());
        a.push_back(id, est[i].timestamp, est[i].pose);
        b.push_back(id, gt[*match[i]].timestamp, gt[*match[i]].pose);
    }
    if (a.empty()) throw PreconditionError("eval: no timestamps match within tolerance");
    nlohmann::ordered_json j;
    j["ate_rmse_m"] = ate_rmse(a, b, true);
    j["matched"] = a.size();
    j["estimated"] = est.size();
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_synth(const std::filesystem::path& spec_path, const std::filesystem::path& out, std::uint64_t seed) {
    const KeyValueConfig kv = KeyValueConfig::load(spec_path);
    const SyntheticSceneSpec spec = SyntheticSceneSpec::from_config(kv);
    kv.check_consumed();
    const SyntheticSequence seq = generate_synthetic(spec, seed);
    write_tum_sequence(out, seq.frames, seq.ground_truth, seq.odometry);
    write_ply(out / kGtCloud, seq.gt_cloud);
    std::cerr << "wrote " << seq.frames.size() << " frames to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Submap-based RGB-D SLAM backend"};
    app.require_subcommand(1);

    std::string mode, format = "tum";
    std::filesystem::path dataset, config, out;
    std::uint64_t seed = 0;
    auto* run_cmd = app.add_subcommand("run", "Run the pipeline on a sequence");
    run_cmd->add_option("--mode", mode, "full or backend (overrides the config)")->check(CLI::IsMember({"full", "backend"}));
    run_cmd->add_option("--dataset", dataset, "Sequence directory")->required()->check(CLI::ExistingDirectory);
    run_cmd->add_option("--format", format, "tum or synth")->check(CLI::IsMember({"tum", "synth"}));
    run_cmd->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
    run_cmd->add_option("--out", out, "Output directory")->required();
    auto* seed_opt = run_cmd->add_option("--seed", seed, "Seed (overrides the config)");

    std::filesystem::path est, gt;
    auto* eval_cmd = app.add_subcommand("eval", "ATE RMSE of a TUM trajectory against ground truth");
    eval_cmd->add_option("--est", est)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--gt", gt)->required()->check(CLI::ExistingFile);

    std::filesystem::path spec, synth_out;
    std::uint64_t synth_seed = 0;
    auto* synth_cmd = app.add_subcommand("synth", "Render a synthetic loop sequence");
    synth_cmd->add_option("--spec", spec, "Scene spec (key = value)")->required()->check(CLI::ExistingFile);
    synth_cmd->add_option("--out", synth_out)->required();
    synth_cmd->add_option("--seed", synth_seed)->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) {
            std::optional<std::uint64_t> s;
            if (seed_opt->count() > 0) s = seed;
            return cmd_run(mode, dataset, format, config, out, s);
        }
        if (*eval_cmd) return cmd_eval(est, gt);
        return cmd_synth(spec, synth_out, synth_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
