#pragma once

#include <sys/wait.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "handforge/config.hpp"
#include "handforge/dataset_io.hpp"
#include "handforge/errors.hpp"
#include "handforge/pipeline.hpp"

namespace handforge {

struct CommandResult {
    int exit_code = -1;
    std::string stdout_text;
};

// Runs a shell command, capturing stdout; stderr flows through to ours.
inline CommandResult run_command(const std::string& command) {
    CommandResult result;
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) throw AdapterError("failed to spawn: " + command, -1);
    char buffer[4096];
    while (std::size_t n = std::fread(buffer, 1, sizeof(buffer), pipe))
        result.stdout_text.append(buffer, n);
    const int status = ::pclose(pipe);
    if (status >= 0 && WIFEXITED(status))
        result.exit_code = WEXITSTATUS(status);
    else
        result.exit_code = -1;
    return result;
}

inline std::string substitute_placeholders(std::string tmpl,
                                           const std::map<std::string, std::string>& vars) {
    for (const auto& [key, value] : vars) {
        const std::string token = "{" + key + "}";
        std::size_t pos = 0;
        while ((pos = tmpl.find(token, pos)) != std::string::npos) {
            tmpl.replace(pos, token.size(), value);
            pos += value.size();
        }
    }
    return tmpl;
}

// Invokes an adapter's inference command and validates its output as a
// candidate stream. Nonzero exit or unparseable output aborts.
inline std::vector<FrameCandidates> run_inference(const ModelAdapter& adapter,
                                                  const std::string& model_ref,
                                                  const std::string& video,
                                                  const std::filesystem::path& out_path) {
    const std::string command = substitute_placeholders(
        adapter.infer_command,
        {{"model", model_ref}, {"video", video}, {"out", out_path.string()}});
    CommandResult result = run_command(command);
    if (result.exit_code != 0)
        throw AdapterError("inference adapter failed (exit " +
                               std::to_string(result.exit_code) + ") for video " + video +
                               ": " + command,
                           result.exit_code);
    try {
        return read_candidates(out_path).frames;
    } catch (const IoError& e) {
        throw IoError("adapter output for video " + video + " is not a candidate stream: " +
                      e.what());
    }
}

struct TrainResult {
    std::string model_ref;
    bool degraded = false;
    int exit_code = 0;
};

// Invokes an adapter's training command. The last non-empty stdout line
// becomes the new model reference; failure or silence keeps the old
// reference and marks the result degraded.
inline TrainResult run_training(const ModelAdapter& adapter, const std::string& current_ref,
                                const std::filesystem::path& dataset) {
    const std::string command = substitute_placeholders(
        adapter.train_command, {{"model", current_ref}, {"dataset", dataset.string()}});
    CommandResult result = run_command(command);
    TrainResult train;
    train.exit_code = result.exit_code;
    std::string last_line;
    std::istringstream lines(result.stdout_text);
    for (std::string line; std::getline(lines, line);) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) last_line = line;
    }
    if (result.exit_code != 0 || last_line.empty()) {
        train.model_ref = current_ref;
        train.degraded = true;
    } else {
        train.model_ref = last_line;
    }
    return train;
}

struct VideoReport {
    std::string video;
    PipelineCounts counts;
    std::map<std::string, std::int64_t> rejections;
};

struct IterationReport {
    int iteration = 0;
    std::vector<VideoReport> videos;
    PipelineCounts aggregate;
    std::map<std::string, std::int64_t> rejections;
    std::string detector_ref_before, detector_ref_after;
    std::string pose_ref_before, pose_ref_after;
    bool detector_degraded = false;
    bool pose_degraded = false;
    double infer_filter_ms = 0.0;
    double train_detector_ms = 0.0;
    double train_pose_ms = 0.0;
};

namespace detail {

inline json counts_to_json(const PipelineCounts& c) {
    return {{"frames_in", c.frames_in},
            {"frames_kept", c.frames_kept},
            {"detections_kept", c.detections_kept},
            {"keypoints_observed", c.keypoints_observed},
            {"keypoints_interpolated", c.keypoints_interpolated}};
}

inline PipelineCounts counts_from_json(const json& j) {
    PipelineCounts c;
    c.frames_in = j.at("frames_in").get<std::int64_t>();
    c.frames_kept = j.at("frames_kept").get<std::int64_t>();
    c.detections_kept = j.at("detections_kept").get<std::int64_t>();
    c.keypoints_observed = j.at("keypoints_observed").get<std::int64_t>();
    c.keypoints_interpolated = j.at("keypoints_interpolated").get<std::int64_t>();
    return c;
}

}  // namespace detail

inline json iteration_report_to_json(const IterationReport& r) {
    json videos = json::array();
    for (const VideoReport& v : r.videos)
        videos.push_back({{"video", v.video},
                          {"counts", detail::counts_to_json(v.counts)},
                          {"rejections", v.rejections}});
    return {{"iteration", r.iteration},
            {"videos", std::move(videos)},
            {"aggregate", detail::counts_to_json(r.aggregate)},
            {"rejections", r.rejections},
            {"model_refs",
             {{"detector_before", r.detector_ref_before},
              {"detector_after", r.detector_ref_after},
              {"pose_before", r.pose_ref_before},
              {"pose_after", r.pose_ref_after}}},
            {"degraded", {{"detector", r.detector_degraded}, {"pose", r.pose_degraded}}},
            {"durations_ms",
             {{"infer_filter", r.infer_filter_ms},
              {"train_detector", r.train_detector_ms},
              {"train_pose", r.train_pose_ms}}}};
}

inline IterationReport iteration_report_from_json(const json& j) {
    IterationReport r;
    r.iteration = j.at("iteration").get<int>();
    for (const json& v : j.at("videos")) {
        VideoReport video{v.at("video").get<std::string>(),
                          detail::counts_from_json(v.at("counts")),
                          {}};
        for (const auto& [reason, count] : v.at("rejections").items())
            video.rejections[reason] = count.get<std::int64_t>();
        r.videos.push_back(std::move(video));
    }
    r.aggregate = detail::counts_from_json(j.at("aggregate"));
    for (const auto& [reason, count] : j.at("rejections").items())
        r.rejections[reason] = count.get<std::int64_t>();
    const json& refs = j.at("model_refs");
    r.detector_ref_before = refs.at("detector_before").get<std::string>();
    r.detector_ref_after = refs.at("detector_after").get<std::string>();
    r.pose_ref_before = refs.at("pose_before").get<std::string>();
    r.pose_ref_after = refs.at("pose_after").get<std::string>();
    r.detector_degraded = j.at("degraded").at("detector").get<bool>();
    r.pose_degraded = j.at("degraded").at("pose").get<bool>();
    const json& durations = j.at("durations_ms");
    r.infer_filter_ms = durations.at("infer_filter").get<double>();
    r.train_detector_ms = durations.at("train_detector").get<double>();
    r.train_pose_ms = durations.at("train_pose").get<double>();
    return r;
}

namespace detail {

inline std::string video_basename(const std::string& video) {
    return std::filesystem::path(video).filename().string();
}

struct VideoStage {
    std::vector<FrameCandidates> curated;
    std::vector<RejectionRecord> rejections;
    PipelineCounts counts;
};

}  // namespace detail

// Drives the self-training loop: per iteration, infer every video with
// the current detector and pose models, filter, emit one dataset pair,
// retrain the detector and then the pose estimator, and persist a
// report. Completed iterations (those with a report on disk) are skipped
// on restart, so a crash between iterations resumes where it stopped and
// reproduces the same artifacts.
inline std::vector<IterationReport> run_loop(const LoopConfig& loop_cfg,
                                             const FilterConfig& filter_cfg) {
    loop_cfg.validate();
    filter_cfg.validate();
    {
        std::set<std::string> names;
        for (const std::string& v : loop_cfg.videos)
            if (!names.insert(detail::video_basename(v)).second)
                throw ConfigError("video basenames must be unique, duplicate: " +
                                  detail::video_basename(v));
    }
    std::filesystem::create_directories(loop_cfg.work_dir);

    std::vector<IterationReport> reports;
    std::string det_ref = loop_cfg.detector.model_ref;
    std::string pose_ref = loop_cfg.pose.model_ref;

    // Resume: reload finished iterations in order.
    for (int k = 1; k <= loop_cfg.iterations; ++k) {
        const auto report_path =
            loop_cfg.work_dir / ("iter-" + std::to_string(k)) / "report.json";
        if (!std::filesystem::exists(report_path)) break;
        std::ifstream in(report_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw IoError("unreadable report " + report_path.string() + ": " + e.what());
        }
        IterationReport prev = iteration_report_from_json(j);
        det_ref = prev.detector_ref_after;
        pose_ref = prev.pose_ref_after;
        reports.push_back(std::move(prev));
    }

    for (int k = static_cast<int>(reports.size()) + 1; k <= loop_cfg.iterations; ++k) {
        const auto iter_dir = loop_cfg.work_dir / ("iter-" + std::to_string(k));
        std::filesystem::create_directories(iter_dir);
        IterationReport report;
        report.iteration = k;
        report.detector_ref_before = det_ref;
        report.pose_ref_before = pose_ref;

        const auto stage_start = std::chrono::steady_clock::now();
        std::vector<detail::VideoStage> stages(loop_cfg.videos.size());
        std::vector<std::exception_ptr> failures(loop_cfg.videos.size());

        auto process_video = [&](std::size_t vi) {
            const std::string& video = loop_cfg.videos[vi];
            const std::string base = detail::video_basename(video);
            const auto boxes_path = iter_dir / ("det-candidates-" + base + ".jsonl");
            const auto full_path = iter_dir / ("candidates-" + base + ".jsonl");
            run_inference(loop_cfg.detector, det_ref, video, boxes_path);
            auto frames = run_inference(loop_cfg.pose, pose_ref, boxes_path.string(),
                                        full_path);
            PipelineResult filtered = run_filter_pipeline(frames, filter_cfg, 1);
            stages[vi] = {std::move(filtered.frames), std::move(filtered.rejections),
                          filtered.counts};
        };

        int workers = loop_cfg.workers > 0
                          ? loop_cfg.workers
                          : static_cast<int>(std::thread::hardware_concurrency());
        workers = std::max(1, std::min<int>(workers,
                                            static_cast<int>(loop_cfg.videos.size())));
        if (workers <= 1) {
            for (std::size_t vi = 0; vi < loop_cfg.videos.size(); ++vi) process_video(vi);
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t vi = next.fetch_add(1); vi < loop_cfg.videos.size();
                         vi = next.fetch_add(1)) {
                        try {
                            process_video(vi);
                        } catch (...) {
                            failures[vi] = std::current_exception();
                        }
                    }
                });
            }
            for (auto& t : pool) t.join();
            for (const auto& failure : failures)
                if (failure) std::rethrow_exception(failure);
        }

        // Aggregate in declared video order so artifacts are reproducible.
        std::vector<FrameCandidates> all_frames;
        std::vector<RejectionRecord> all_rejections;
        PipelineCounts aggregate;
        for (std::size_t vi = 0; vi < stages.size(); ++vi) {
            detail::VideoStage& stage = stages[vi];
            report.videos.push_back({loop_cfg.videos[vi], stage.counts,
                                     rejection_histogram(stage.rejections)});
            aggregate.frames_in += stage.counts.frames_in;
            aggregate.frames_kept += stage.counts.frames_kept;
            aggregate.detections_kept += stage.counts.detections_kept;
            aggregate.keypoints_observed += stage.counts.keypoints_observed;
            aggregate.keypoints_interpolated += stage.counts.keypoints_interpolated;
            for (auto& rec : stage.rejections) all_rejections.push_back(rec);
            for (auto& frame : stage.curated) all_frames.push_back(std::move(frame));
        }
        report.aggregate = aggregate;
        report.rejections = rejection_histogram(all_rejections);
        EmitResult emitted = emit_datasets(all_frames, iter_dir, filter_cfg, &aggregate,
                                           report.rejections, /*force=*/true);
        write_rejections(all_rejections, iter_dir / "rejections.jsonl");
        const auto infer_end = std::chrono::steady_clock::now();
        report.infer_filter_ms =
            std::chrono::duration<double, std::milli>(infer_end - stage_start).count();

        // The detector retrains before the pose estimator, one training
        // process at a time.
        TrainResult det_train =
            run_training(loop_cfg.detector, det_ref, emitted.detection_dataset);
        const auto det_end = std::chrono::steady_clock::now();
        report.train_detector_ms =
            std::chrono::duration<double, std::milli>(det_end - infer_end).count();
        TrainResult pose_train = run_training(loop_cfg.pose, pose_ref, emitted.pose_dataset);
        report.train_pose_ms = std::chrono::duration<double, std::milli>(
                                   std::chrono::steady_clock::now() - det_end)
                                   .count();

        det_ref = det_train.model_ref;
        pose_ref = pose_train.model_ref;
        report.detector_ref_after = det_ref;
        report.pose_ref_after = pose_ref;
        report.detector_degraded = det_train.degraded;
        report.pose_degraded = pose_train.degraded;

        detail::write_json_file(iteration_report_to_json(report), iter_dir / "report.json");
        reports.push_back(std::move(report));
    }
    return reports;
}

}  // namespace handforge
