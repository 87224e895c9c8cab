#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "handforge/config.hpp"
#include "handforge/errors.hpp"
#include "handforge/pipeline.hpp"
#include "handforge/types.hpp"

namespace handforge {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Candidate streams (one frame per line)
//
// {"frame_id":0,"timestamp_ms":0,"image":{"width":640,"height":480,"path":"f0.png"},
//  "detections":[{"bbox":[x1,y1,x2,y2],"score":0.9,
//                 "keypoints":[[x,y,c], [x,y,c,1], null, ...]}]}
//
// A keypoint slot is a 3-element array when observed, gains a trailing 1
// when interpolated, and is null when missing. A detection without a
// "keypoints" field carries no pose; "interp_bbox":true marks a detection
// the temporal filter re-created.
// ---------------------------------------------------------------------------

namespace detail {

inline json keypoint_to_json(const Keypoint& kp) {
    if (!kp.valid) return nullptr;
    json arr = json::array({kp.x, kp.y, kp.confidence});
    if (kp.interpolated) arr.push_back(1);
    return arr;
}

inline Keypoint keypoint_from_json(const json& j) {
    if (j.is_null()) return {};
    if (!j.is_array() || j.size() < 3 || j.size() > 4)
        throw IoError("keypoint entry must be null or [x,y,confidence(,origin)]");
    Keypoint kp;
    kp.x = j[0].get<double>();
    kp.y = j[1].get<double>();
    kp.confidence = j[2].get<double>();
    kp.valid = true;
    if (j.size() == 4) kp.interpolated = j[3].get<int>() != 0;
    if (kp.confidence < 0.0 || kp.confidence > 1.0)
        throw IoError("keypoint confidence out of [0,1]");
    return kp;
}

inline json detection_to_json(const Detection& det) {
    json j;
    j["bbox"] = {det.bbox.x1, det.bbox.y1, det.bbox.x2, det.bbox.y2};
    j["score"] = det.bbox.score;
    if (det.pose) {
        json kps = json::array();
        for (const Keypoint& kp : det.pose->keypoints) kps.push_back(keypoint_to_json(kp));
        j["keypoints"] = std::move(kps);
    }
    if (det.interpolated) j["interp_bbox"] = true;
    return j;
}

inline Detection detection_from_json(const json& j) {
    Detection det;
    const auto& box = j.at("bbox");
    if (!box.is_array() || box.size() != 4) throw IoError("bbox must be [x1,y1,x2,y2]");
    det.bbox = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                box[3].get<double>(), j.at("score").get<double>()};
    if (!(det.bbox.x1 < det.bbox.x2 && det.bbox.y1 < det.bbox.y2))
        throw IoError("bbox must have positive width and height");
    if (det.bbox.score < 0.0 || det.bbox.score > 1.0)
        throw IoError("detection score out of [0,1]");
    if (auto it = j.find("keypoints"); it != j.end()) {
        if (!it->is_array() || it->size() != kKeypointCount)
            throw IoError("keypoints array must have exactly 21 entries");
        det.pose.emplace();
        for (int k = 0; k < kKeypointCount; ++k)
            det.pose->keypoints[k] = keypoint_from_json((*it)[k]);
    }
    det.interpolated = j.value("interp_bbox", false);
    return det;
}

inline json frame_to_json(const FrameCandidates& frame) {
    json j;
    j["frame_id"] = frame.frame_id;
    j["timestamp_ms"] = frame.timestamp_ms;
    j["image"] = {{"width", frame.image_width},
                  {"height", frame.image_height},
                  {"path", frame.image_path}};
    json dets = json::array();
    for (const Detection& det : frame.detections) dets.push_back(detection_to_json(det));
    j["detections"] = std::move(dets);
    return j;
}

inline FrameCandidates frame_from_json(const json& j) {
    FrameCandidates frame;
    frame.frame_id = j.at("frame_id").get<std::int64_t>();
    frame.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    const auto& img = j.at("image");
    frame.image_width = img.at("width").get<int>();
    frame.image_height = img.at("height").get<int>();
    frame.image_path = img.at("path").get<std::string>();
    if (frame.frame_id < 0 || frame.timestamp_ms < 0)
        throw IoError("frame_id and timestamp_ms must be non-negative");
    if (frame.image_width <= 0 || frame.image_height <= 0)
        throw IoError("image dimensions must be positive");
    for (const json& d : j.at("detections"))
        frame.detections.push_back(detection_from_json(d));
    return frame;
}

}  // namespace detail

struct ReadResult {
    std::vector<FrameCandidates> frames;
    int malformed_lines = 0;
};

// Streams a candidate file. Unparseable lines are skipped and counted;
// structural violations (duplicate or non-monotonic frame ids, wrong
// keypoint count, invalid values) abort with an error naming the frame.
inline ReadResult read_candidates(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open candidate file: " + path.string());
    ReadResult out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            std::cerr << "warning: " << path.string() << ":" << lineno
                      << ": skipping unparseable line\n";
            ++out.malformed_lines;
            continue;
        }
        FrameCandidates frame;
        try {
            frame = detail::frame_from_json(j);
        } catch (const json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const IoError& e) {
            std::int64_t fid = j.value("frame_id", std::int64_t{-1});
            throw IoError(path.string() + ":" + std::to_string(lineno) + " (frame_id " +
                          std::to_string(fid) + "): " + e.what());
        }
        if (!out.frames.empty()) {
            if (frame.frame_id == out.frames.back().frame_id)
                throw IoError(path.string() + ": duplicate frame_id " +
                              std::to_string(frame.frame_id));
            if (frame.frame_id < out.frames.back().frame_id)
                throw IoError(path.string() + ": non-monotonic frame_id " +
                              std::to_string(frame.frame_id));
        }
        out.frames.push_back(std::move(frame));
    }
    return out;
}

inline void write_candidates(const std::vector<FrameCandidates>& frames,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (const FrameCandidates& frame : frames) out << detail::frame_to_json(frame) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Flat key = value configuration files
// ---------------------------------------------------------------------------

struct ParsedConfig {
    FilterConfig filter;
    std::optional<LoopConfig> loop;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
    }
}

inline int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
    }
}

inline std::optional<Bone> parse_bone_key(const std::string& key) {
    constexpr std::string_view prefix = "bone_ratios.";
    if (key.rfind(prefix, 0) != 0) return std::nullopt;
    const std::string rest = key.substr(prefix.size());
    const auto dash = rest.find('-');
    if (dash == std::string::npos) throw ConfigError("malformed bone key: " + key);
    return Bone{parse_int(key, rest.substr(0, dash)), parse_int(key, rest.substr(dash + 1))};
}

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace detail

// Applies one key=value pair onto a config; used both by the parser and
// by --set command line overrides.
inline void apply_config_entry(FilterConfig& cfg, const std::string& key,
                               const std::string& value) {
    if (auto bone = detail::parse_bone_key(key)) {
        cfg.bone_ratios[*bone] = detail::parse_double(key, value);
        return;
    }
    if (key == "s_bone") cfg.s_bone = detail::parse_double(key, value);
    else if (key == "s_area_max") cfg.s_area_max = detail::parse_double(key, value);
    else if (key == "s_area_min") cfg.s_area_min = detail::parse_double(key, value);
    else if (key == "s_count") cfg.s_count = detail::parse_int(key, value);
    else if (key == "t_vmax") cfg.t_vmax = detail::parse_double(key, value);
    else if (key == "c_hd") cfg.c_hd = detail::parse_double(key, value);
    else if (key == "c_pe") cfg.c_pe = detail::parse_double(key, value);
    else if (key == "slack") cfg.slack = detail::parse_double(key, value);
    else if (key == "interp_max_gap") cfg.interp_max_gap = detail::parse_int(key, value);
    else if (key == "assoc_iou_min") cfg.assoc_iou_min = detail::parse_double(key, value);
    else throw ConfigError("unknown filter config key: " + key);
}

// Parses a flat key=value file into the filter parameters and, when loop
// keys are present, the loop configuration. Lines starting with '#' are
// comments; 'video' may repeat. All seven core filter keys are required.
inline ParsedConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());

    ParsedConfig out;
    std::map<std::string, bool> seen;
    LoopConfig loop;
    bool any_loop_key = false;

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = detail::trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty()) throw ConfigError(path.string() + ": empty key");

        if (key == "iterations") { loop.iterations = detail::parse_int(key, value); any_loop_key = true; }
        else if (key == "work_dir") { loop.work_dir = value; any_loop_key = true; }
        else if (key == "video") { loop.videos.push_back(value); any_loop_key = true; }
        else if (key == "workers") { loop.workers = detail::parse_int(key, value); any_loop_key = true; }
        else if (key == "detector.infer_command") { loop.detector.infer_command = value; any_loop_key = true; }
        else if (key == "detector.train_command") { loop.detector.train_command = value; any_loop_key = true; }
        else if (key == "detector.model_ref") { loop.detector.model_ref = value; any_loop_key = true; }
        else if (key == "pose.infer_command") { loop.pose.infer_command = value; any_loop_key = true; }
        else if (key == "pose.train_command") { loop.pose.train_command = value; any_loop_key = true; }
        else if (key == "pose.model_ref") { loop.pose.model_ref = value; any_loop_key = true; }
        else {
            apply_config_entry(out.filter, key, value);
            seen[key] = true;
        }
    }

    for (const char* required :
         {"s_bone", "s_area_max", "s_area_min", "s_count", "t_vmax", "c_hd", "c_pe"}) {
        if (!seen.count(required))
            throw ConfigError(path.string() + ": missing required key: " +
                              std::string(required));
    }
    out.filter.validate();
    if (any_loop_key) {
        loop.validate();
        out.loop = std::move(loop);
    }
    return out;
}

namespace detail {

// shortest representation that parses back to the same double
inline std::string format_double(double v) {
    char buf[32];
    auto result = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, result.ptr);
}

}  // namespace detail

inline void write_config(const FilterConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "s_bone = " << detail::format_double(cfg.s_bone) << "\n";
    out << "s_area_max = " << detail::format_double(cfg.s_area_max) << "\n";
    out << "s_area_min = " << detail::format_double(cfg.s_area_min) << "\n";
    out << "s_count = " << cfg.s_count << "\n";
    out << "t_vmax = " << detail::format_double(cfg.t_vmax) << "\n";
    out << "c_hd = " << detail::format_double(cfg.c_hd) << "\n";
    out << "c_pe = " << detail::format_double(cfg.c_pe) << "\n";
    out << "slack = " << detail::format_double(cfg.slack) << "\n";
    out << "interp_max_gap = " << cfg.interp_max_gap << "\n";
    out << "assoc_iou_min = " << detail::format_double(cfg.assoc_iou_min) << "\n";
    for (const auto& [bone, ratio] : cfg.bone_ratios)
        out << "bone_ratios." << bone.first << "-" << bone.second << " = "
            << detail::format_double(ratio) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Curated dataset emission
// ---------------------------------------------------------------------------

inline json config_to_json(const FilterConfig& cfg) {
    json ratios;
    for (const auto& [bone, ratio] : cfg.bone_ratios)
        ratios[std::to_string(bone.first) + "-" + std::to_string(bone.second)] = ratio;
    return {{"s_bone", cfg.s_bone},
            {"s_area_max", cfg.s_area_max},
            {"s_area_min", cfg.s_area_min},
            {"s_count", cfg.s_count},
            {"t_vmax", cfg.t_vmax},
            {"c_hd", cfg.c_hd},
            {"c_pe", cfg.c_pe},
            {"slack", cfg.slack},
            {"interp_max_gap", cfg.interp_max_gap},
            {"assoc_iou_min", cfg.assoc_iou_min},
            {"bone_ratios", std::move(ratios)}};
}

struct Manifest {
    PipelineCounts counts;
    std::map<std::string, std::int64_t> rejections;
    FilterConfig config;
    // Frames dropped by the filters are excluded from the emitted
    // datasets entirely; they are not shipped as negative examples.
    std::string negatives = "dropped-frames-excluded";
};

inline json manifest_to_json(const Manifest& m) {
    return {{"counts",
             {{"frames_in", m.counts.frames_in},
              {"frames_kept", m.counts.frames_kept},
              {"detections_kept", m.counts.detections_kept},
              {"keypoints_observed", m.counts.keypoints_observed},
              {"keypoints_interpolated", m.counts.keypoints_interpolated}}},
            {"rejections", m.rejections},
            {"config", config_to_json(m.config)},
            {"negatives", m.negatives}};
}

inline bool force_overwrite_enabled() {
    const char* env = std::getenv("HANDFORGE_FORCE");
    return env != nullptr && std::string(env) == "1";
}

namespace detail {

inline void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

struct EmitResult {
    std::filesystem::path detection_dataset;
    std::filesystem::path pose_dataset;
    std::filesystem::path manifest_path;
    Manifest manifest;
};

// Writes the two curated retraining datasets plus a manifest into
// out_dir. Image and annotation ids are assigned sequentially in frame
// order (then detection order), so identical input produces identical
// files. Refuses to clobber an existing manifest unless forced.
inline EmitResult emit_datasets(const std::vector<FrameCandidates>& frames,
                                const std::filesystem::path& out_dir,
                                const FilterConfig& cfg,
                                const PipelineCounts* counts = nullptr,
                                const std::map<std::string, std::int64_t>& rejections = {},
                                bool force = false) {
    std::filesystem::create_directories(out_dir);
    EmitResult result;
    result.detection_dataset = out_dir / "det-dataset.json";
    result.pose_dataset = out_dir / "pose-dataset.json";
    result.manifest_path = out_dir / "manifest.json";
    if (std::filesystem::exists(result.manifest_path) && !force && !force_overwrite_enabled())
        throw IoError("refusing to overwrite existing manifest: " +
                      result.manifest_path.string() + " (use --force or HANDFORGE_FORCE=1)");

    json images = json::array();
    json det_annotations = json::array();
    json pose_annotations = json::array();
    std::int64_t next_image_id = 1;
    std::int64_t next_annotation_id = 1;
    PipelineCounts tally;
    tally.frames_in = static_cast<std::int64_t>(frames.size());

    for (const FrameCandidates& frame : frames) {
        const std::int64_t image_id = next_image_id++;
        images.push_back({{"id", image_id},
                          {"file_name", frame.image_path},
                          {"width", frame.image_width},
                          {"height", frame.image_height}});
        ++tally.frames_kept;
        for (const Detection& det : frame.detections) {
            const std::int64_t ann_id = next_annotation_id++;
            ++tally.detections_kept;
            json base = {{"id", ann_id},
                         {"image_id", image_id},
                         {"bbox", {det.bbox.x1, det.bbox.y1, det.bbox.width(),
                                   det.bbox.height()}},
                         {"category_id", 1},
                         {"score", det.bbox.score}};
            det_annotations.push_back(base);

            json flat = json::array();
            int visible = 0;
            for (int k = 0; k < kKeypointCount; ++k) {
                Keypoint kp{};
                if (det.pose) kp = det.pose->keypoints[k];
                if (kp.valid) {
                    const int v = kp.interpolated ? 1 : 2;
                    flat.push_back(kp.x);
                    flat.push_back(kp.y);
                    flat.push_back(v);
                    ++visible;
                    if (kp.interpolated)
                        ++tally.keypoints_interpolated;
                    else
                        ++tally.keypoints_observed;
                } else {
                    flat.push_back(0.0);
                    flat.push_back(0.0);
                    flat.push_back(0);
                }
            }
            base["keypoints"] = std::move(flat);
            base["num_keypoints"] = visible;
            pose_annotations.push_back(std::move(base));
        }
    }

    const json categories = json::array({{{"id", 1}, {"name", "hand"}}});
    detail::write_json_file({{"images", images},
                             {"annotations", det_annotations},
                             {"categories", categories}},
                            result.detection_dataset);
    detail::write_json_file({{"images", std::move(images)},
                             {"annotations", std::move(pose_annotations)},
                             {"categories", categories}},
                            result.pose_dataset);

    result.manifest.counts = counts ? *counts : tally;
    result.manifest.rejections = rejections;
    result.manifest.config = cfg;
    detail::write_json_file(manifest_to_json(result.manifest), result.manifest_path);
    return result;
}

// ---------------------------------------------------------------------------
// Rejection audit files (one record per line) and filter-stage manifests
// ---------------------------------------------------------------------------

inline void write_rejections(const std::vector<RejectionRecord>& records,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (const RejectionRecord& rec : records) {
        json j = {{"frame_id", rec.frame_id},
                  {"detection_index", rec.detection_index},
                  {"reason", to_string(rec.reason)},
                  {"measured", rec.measured},
                  {"threshold", rec.threshold}};
        if (rec.reason == RejectReason::bone_too_long)
            j["bone"] = {rec.bone.first, rec.bone.second};
        out << j << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::map<std::string, std::int64_t> read_rejection_histogram(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open rejections file: " + path.string());
    std::map<std::string, std::int64_t> hist;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ++hist[j.at("reason").get<std::string>()];
    }
    return hist;
}

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path,
                           bool force = false) {
    if (std::filesystem::exists(path) && !force && !force_overwrite_enabled())
        throw IoError("refusing to overwrite existing manifest: " + path.string() +
                      " (use --force or HANDFORGE_FORCE=1)");
    detail::write_json_file(manifest_to_json(manifest), path);
}

inline Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    const json& counts = j.at("counts");
    m.counts.frames_in = counts.at("frames_in").get<std::int64_t>();
    m.counts.frames_kept = counts.at("frames_kept").get<std::int64_t>();
    m.counts.detections_kept = counts.at("detections_kept").get<std::int64_t>();
    m.counts.keypoints_observed = counts.at("keypoints_observed").get<std::int64_t>();
    m.counts.keypoints_interpolated = counts.at("keypoints_interpolated").get<std::int64_t>();
    for (const auto& [reason, count] : j.at("rejections").items())
        m.rejections[reason] = count.get<std::int64_t>();
    const json& cfg = j.at("config");
    m.config.s_bone = cfg.at("s_bone").get<double>();
    m.config.s_area_max = cfg.at("s_area_max").get<double>();
    m.config.s_area_min = cfg.at("s_area_min").get<double>();
    m.config.s_count = cfg.at("s_count").get<int>();
    m.config.t_vmax = cfg.at("t_vmax").get<double>();
    m.config.c_hd = cfg.at("c_hd").get<double>();
    m.config.c_pe = cfg.at("c_pe").get<double>();
    m.config.slack = cfg.at("slack").get<double>();
    m.config.interp_max_gap = cfg.at("interp_max_gap").get<int>();
    m.config.assoc_iou_min = cfg.at("assoc_iou_min").get<double>();
    m.config.bone_ratios.clear();
    for (const auto& [key, ratio] : cfg.at("bone_ratios").items()) {
        const auto dash = key.find('-');
        m.config.bone_ratios[{std::stoi(key.substr(0, dash)),
                              std::stoi(key.substr(dash + 1))}] = ratio.get<double>();
    }
    m.negatives = j.value("negatives", m.negatives);
    return m;
}

}  // namespace handforge
