// handforge: curates hand-pose pseudo-labels from raw per-frame detection
// candidates and drives the retrain loop around external models.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "handforge/dataset_io.hpp"
#include "handforge/errors.hpp"
#include "handforge/loop.hpp"
#include "handforge/metrics.hpp"
#include "handforge/pipeline.hpp"
#include "handforge/synth.hpp"

namespace fs = std::filesystem;
using handforge::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitAdapter = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
    int workers = 0;
};

handforge::FilterConfig load_filter_config(const CommonOpts& opts,
                                           std::optional<handforge::LoopConfig>* loop = nullptr) {
    handforge::ParsedConfig parsed = handforge::parse_config(opts.config_path);
    for (const std::string& entry : opts.overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw handforge::ConfigError("--set expects key=value, got: " + entry);
        handforge::apply_config_entry(parsed.filter, entry.substr(0, eq),
                                      entry.substr(eq + 1));
    }
    parsed.filter.validate();
    if (loop) *loop = parsed.loop;
    return parsed.filter;
}

json counts_json(const handforge::PipelineCounts& c) {
    return {{"frames_in", c.frames_in},
            {"frames_kept", c.frames_kept},
            {"detections_kept", c.detections_kept},
            {"keypoints_observed", c.keypoints_observed},
            {"keypoints_interpolated", c.keypoints_interpolated}};
}

int cmd_filter(const CommonOpts& opts, const std::string& input, const std::string& output) {
    const handforge::FilterConfig cfg = load_filter_config(opts);
    handforge::ReadResult in = handforge::read_candidates(input);
    handforge::PipelineResult result =
        handforge::run_filter_pipeline(in.frames, cfg, opts.workers);

    handforge::write_candidates(result.frames, output);
    handforge::Manifest manifest;
    manifest.counts = result.counts;
    manifest.rejections = handforge::rejection_histogram(result.rejections);
    manifest.config = cfg;
    handforge::write_manifest(manifest, output + ".manifest.json", opts.force);
    handforge::write_rejections(result.rejections, output + ".rejections.jsonl");

    json summary = {{"counts", counts_json(result.counts)},
                    {"rejections", manifest.rejections},
                    {"malformed_lines", in.malformed_lines},
                    {"output", output}};
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_build_dataset(const CommonOpts& opts, const std::string& input,
                      const std::string& out_dir) {
    const handforge::FilterConfig cfg = load_filter_config(opts);
    handforge::ReadResult in = handforge::read_candidates(input);

    // Counts travel with the filter output when its manifest is present.
    const handforge::PipelineCounts* counts = nullptr;
    handforge::PipelineCounts carried;
    std::map<std::string, std::int64_t> rejections;
    const fs::path sibling = input + ".manifest.json";
    if (fs::exists(sibling)) {
        handforge::Manifest m = handforge::read_manifest(sibling);
        carried = m.counts;
        rejections = m.rejections;
        counts = &carried;
    }
    handforge::EmitResult emitted =
        handforge::emit_datasets(in.frames, out_dir, cfg, counts, rejections, opts.force);

    json summary = {{"detection_dataset", emitted.detection_dataset.string()},
                    {"pose_dataset", emitted.pose_dataset.string()},
                    {"manifest", emitted.manifest_path.string()},
                    {"counts", counts_json(emitted.manifest.counts)}};
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_evaluate(const std::string& pred_path, const std::string& gt_path,
                 const std::string& report_path, int auc_steps, double auc_max,
                 int conf_steps) {
    handforge::ReadResult preds = handforge::read_candidates(pred_path);
    handforge::ReadResult gts = handforge::read_candidates(gt_path);
    handforge::EvalReport report = handforge::evaluate_candidates(
        preds.frames, gts.frames, handforge::default_conf_grid(conf_steps),
        handforge::default_auc_grid(auc_steps, auc_max));

    auto curve_json = [](const handforge::PRCurve& curve) {
        json arr = json::array();
        for (const auto& p : curve.points)
            arr.push_back({{"threshold", p.threshold},
                           {"precision", p.precision},
                           {"recall", p.recall}});
        return arr;
    };
    json j = {{"precision@0.5", report.precision_50},
              {"recall@0.5", report.recall_50},
              {"precision@0.75", report.precision_75},
              {"recall@0.75", report.recall_75},
              {"auc", report.pose_auc ? json(*report.pose_auc) : json(nullptr)},
              {"matched_pose_pairs", report.matched_pose_pairs},
              {"unmatched_gt", report.unmatched_gt},
              {"pr_curves", {{"iou_0.5", curve_json(report.pr_50)},
                             {"iou_0.75", curve_json(report.pr_75)}}}};
    std::ofstream out(report_path);
    if (!out) throw handforge::IoError("cannot open for writing: " + report_path);
    out << j.dump(2) << "\n";

    json summary = j;
    summary.erase("pr_curves");
    summary["report"] = report_path;
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_run(const CommonOpts& opts, int iterations_override) {
    std::optional<handforge::LoopConfig> loop;
    const handforge::FilterConfig cfg = load_filter_config(opts, &loop);
    if (!loop)
        throw handforge::ConfigError(
            "config has no loop keys (work_dir, video, detector.*, pose.*)");
    if (iterations_override > 0) loop->iterations = iterations_override;
    if (opts.workers > 0) loop->workers = opts.workers;

    std::vector<handforge::IterationReport> reports = handforge::run_loop(*loop, cfg);
    json report_list = json::array();
    for (const auto& r : reports)
        report_list.push_back({{"iteration", r.iteration},
                               {"detections_kept", r.aggregate.detections_kept},
                               {"detector_ref", r.detector_ref_after},
                               {"pose_ref", r.pose_ref_after},
                               {"degraded", r.detector_degraded || r.pose_degraded}});
    json summary = {{"work_dir", loop->work_dir.string()},
                    {"iterations", static_cast<int>(reports.size())},
                    {"reports", std::move(report_list)}};
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_synth(const handforge::synth::SceneSpec& scene,
              const handforge::synth::CorruptionSpec& corruption, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto truth = handforge::synth::generate(scene);
    auto corrupted = handforge::synth::corrupt(truth, corruption, scene.seed);

    const fs::path dir(out_dir);
    handforge::write_candidates(truth, dir / "truth.jsonl");
    handforge::write_candidates(corrupted.frames, dir / "corrupted.jsonl");
    handforge::synth::write_ledger(corrupted.ledger, dir / "ledger.jsonl");

    std::map<std::string, std::int64_t> by_kind;
    for (const auto& e : corrupted.ledger) ++by_kind[handforge::synth::to_string(e.kind)];
    json summary = {{"truth", (dir / "truth.jsonl").string()},
                    {"corrupted", (dir / "corrupted.jsonl").string()},
                    {"ledger", (dir / "ledger.jsonl").string()},
                    {"frames", static_cast<std::int64_t>(truth.size())},
                    {"ledger_entries", by_kind}};
    std::cout << summary.dump() << "\n";
    return kExitOk;
}

int cmd_stats(const std::string& input) {
    handforge::Manifest manifest = handforge::read_manifest(input + ".manifest.json");
    std::map<std::string, std::int64_t> recomputed =
        handforge::read_rejection_histogram(input + ".rejections.jsonl");
    const bool match = recomputed == manifest.rejections;
    json summary = {{"counts", counts_json(manifest.counts)},
                    {"rejections", recomputed},
                    {"manifest_rejections", manifest.rejections},
                    {"match", match}};
    std::cout << summary.dump() << "\n";
    if (!match) {
        std::cerr << "error: rejection records disagree with the manifest histogram\n";
        return kExitValidation;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"handforge: self-supervised hand-pose label curation"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string input, output, gt_path, report_path;
    int iterations_override = 0;
    int auc_steps = 50, conf_steps = 50;
    double auc_max = 0.5;

    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config)
            sub->add_option("--config", opts.config_path, "filter config file")->required();
        sub->add_option("--set", opts.overrides, "override config key=value (repeatable)");
        sub->add_flag("--force", opts.force, "overwrite existing outputs");
        sub->add_option("--workers", opts.workers, "worker threads (default: all cores)");
    };

    CLI::App* filter = app.add_subcommand("filter", "spatial + temporal filtering pass");
    add_common(filter);
    filter->add_option("input", input, "candidate stream (jsonl)")->required();
    filter->add_option("output", output, "curated stream destination")->required();

    CLI::App* build = app.add_subcommand("build-dataset", "emit retraining dataset pair");
    add_common(build);
    build->add_option("input", input, "curated candidate stream")->required();
    build->add_option("out_dir", output, "dataset output directory")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "detection/pose metrics vs ground truth");
    evaluate->add_option("predictions", input, "predicted candidate stream")->required();
    evaluate->add_option("ground_truth", gt_path, "ground-truth candidate stream")->required();
    evaluate->add_option("report", report_path, "metrics report destination")->required();
    evaluate->add_option("--auc-steps", auc_steps, "PCK thresholds in the AUC grid");
    evaluate->add_option("--auc-max", auc_max, "largest PCK threshold");
    evaluate->add_option("--conf-steps", conf_steps, "confidence sweep steps");

    CLI::App* run = app.add_subcommand("run", "iterative self-training loop");
    add_common(run);
    run->add_option("--iterations", iterations_override, "override iteration count");

    handforge::synth::SceneSpec scene;
    handforge::synth::CorruptionSpec corruption;
    std::string motion = "static";
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene + corruption");
    synth->add_option("--out-dir", output, "output directory")->required();
    synth->add_option("--frames", scene.n_frames, "frame count");
    synth->add_option("--hands", scene.n_hands, "hands per frame");
    synth->add_option("--width", scene.image_width, "image width");
    synth->add_option("--height", scene.image_height, "image height");
    synth->add_option("--scale", scene.base_hand_scale, "index proximal bone length, px");
    synth->add_option("--seed", scene.seed, "scene seed");
    synth->add_option("--motion", motion, "static | linear | sinusoidal");
    synth->add_option("--vx", scene.velocity_x, "linear velocity x, px/frame");
    synth->add_option("--vy", scene.velocity_y, "linear velocity y, px/frame");
    synth->add_option("--ax", scene.amplitude_x, "sinusoidal amplitude x, px");
    synth->add_option("--ay", scene.amplitude_y, "sinusoidal amplitude y, px");
    synth->add_option("--period", scene.period_frames, "sinusoidal period, frames");
    synth->add_option("--jitter", corruption.keypoint_jitter_sigma, "keypoint jitter sigma, px");
    synth->add_option("--outlier-rate", corruption.outlier_rate, "keypoint teleport probability");
    synth->add_option("--outlier-magnitude", corruption.outlier_magnitude,
                      "teleport distance, px (0 = anywhere)");
    synth->add_option("--dropout-rate", corruption.dropout_rate, "detection dropout probability");
    synth->add_option("--false-rate", corruption.false_detection_rate,
                      "spurious detection probability per frame");
    synth->add_option("--clean-base", corruption.confidence.clean_base,
                      "confidence of uncorrupted points");
    synth->add_option("--conf-slope", corruption.confidence.slope,
                      "confidence drop per corruption magnitude");

    CLI::App* stats = app.add_subcommand("stats", "rejection histogram of a filter output");
    stats->add_option("input", input, "filter output stream")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (filter->parsed()) return cmd_filter(opts, input, output);
        if (build->parsed()) return cmd_build_dataset(opts, input, output);
        if (evaluate->parsed())
            return cmd_evaluate(input, gt_path, report_path, auc_steps, auc_max, conf_steps);
        if (run->parsed()) return cmd_run(opts, iterations_override);
        if (synth->parsed()) {
            if (motion == "static") scene.motion = handforge::synth::Motion::Static;
            else if (motion == "linear") scene.motion = handforge::synth::Motion::Linear;
            else if (motion == "sinusoidal") scene.motion = handforge::synth::Motion::Sinusoidal;
            else throw handforge::ConfigError("unknown motion: " + motion);
            return cmd_synth(scene, corruption, output);
        }
        if (stats->parsed()) return cmd_stats(input);
    } catch (const handforge::AdapterError& e) {
        std::cerr << "adapter error: " << e.what() << "\n";
        return kExitAdapter;
    } catch (const handforge::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const handforge::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitValidation;
}
