#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "handforge/errors.hpp"
#include "handforge/types.hpp"

namespace handforge {

// Default per-bone length ratios relative to the index proximal phalanx
// (5,6). Palm bones run long, phalanges shorten towards the fingertip.
// This table is plain configuration: callers may override any entry as
// long as the reference bone stays at 1.0.
inline std::map<Bone, double> default_bone_ratios() {
    return {
        {{0, 1}, 1.90},  {{1, 2}, 1.20},   {{2, 3}, 0.85},   {{3, 4}, 0.70},
        {{0, 5}, 2.10},  {{5, 6}, 1.00},   {{6, 7}, 0.70},   {{7, 8}, 0.60},
        {{0, 9}, 2.20},  {{9, 10}, 1.10},  {{10, 11}, 0.80}, {{11, 12}, 0.65},
        {{0, 13}, 2.10}, {{13, 14}, 1.05}, {{14, 15}, 0.75}, {{15, 16}, 0.65},
        {{0, 17}, 2.00}, {{17, 18}, 0.85}, {{18, 19}, 0.55}, {{19, 20}, 0.55},
    };
}

// Tunable filter parameters. Defaults carry sensible values so tests can
// tweak single fields; parse_config() still demands every required key.
struct FilterConfig {
    double s_bone = 50.0;      // max pixel length of the index proximal phalanx
    double s_area_max = 0.75;  // max fraction of the image one hand may fill
    double s_area_min = 0.15;  // min fraction of the image one hand must fill
    int s_count = 1;           // expected simultaneous hands per frame
    double t_vmax = 25.0;      // max per-frame velocity of a keypoint or box corner
    double c_hd = 0.9;         // detection confidence threshold
    double c_pe = 0.2;         // pose / keypoint confidence threshold
    double slack = 1.15;       // multiplier applied to every bone bound
    std::map<Bone, double> bone_ratios = default_bone_ratios();
    int interp_max_gap = 5;    // longest frame gap linear interpolation may bridge
    double assoc_iou_min = 0.1;  // IoU floor for frame-to-frame association

    void validate() const {
        if (!(s_bone > 0.0)) throw ConfigError("s_bone must be > 0");
        if (!(s_area_min >= 0.0 && s_area_min < s_area_max && s_area_max <= 1.0))
            throw ConfigError("area bounds must satisfy 0 <= s_area_min < s_area_max <= 1");
        if (s_count < 1) throw ConfigError("s_count must be >= 1");
        if (!(t_vmax > 0.0)) throw ConfigError("t_vmax must be > 0");
        if (!(c_hd >= 0.0 && c_hd <= 1.0)) throw ConfigError("c_hd must be in [0,1]");
        if (!(c_pe >= 0.0 && c_pe <= 1.0)) throw ConfigError("c_pe must be in [0,1]");
        if (!(slack >= 1.0)) throw ConfigError("slack must be >= 1");
        if (interp_max_gap < 0) throw ConfigError("interp_max_gap must be >= 0");
        if (!(assoc_iou_min >= 0.0 && assoc_iou_min <= 1.0))
            throw ConfigError("assoc_iou_min must be in [0,1]");
        const auto& topo = hand_topology();
        if (bone_ratios.size() != topo.bones.size())
            throw ConfigError("bone_ratios must list exactly the 20 skeleton bones");
        for (const auto& bone : topo.bones) {
            auto it = bone_ratios.find(bone);
            if (it == bone_ratios.end())
                throw ConfigError("bone_ratios missing bone " + std::to_string(bone.first) +
                                  "-" + std::to_string(bone.second));
            if (!(it->second > 0.0))
                throw ConfigError("bone_ratios." + std::to_string(bone.first) + "-" +
                                  std::to_string(bone.second) + " must be > 0");
        }
        const Bone ref = topo.bones.at(static_cast<std::size_t>(topo.reference_bone));
        if (bone_ratios.at(ref) != 1.0)
            throw ConfigError("bone_ratios.5-6 is the reference bone and must be 1.0");
    }

    bool operator==(const FilterConfig&) const = default;
};

enum class RejectReason {
    low_detection_confidence,
    low_pose_score,
    bone_too_long,
    area_too_large,
    area_too_small,
    excess_hand,
    frame_undercount,
    velocity_exceeded,
};

inline const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::low_detection_confidence: return "low-detection-confidence";
        case RejectReason::low_pose_score: return "low-pose-score";
        case RejectReason::bone_too_long: return "bone-too-long";
        case RejectReason::area_too_large: return "area-too-large";
        case RejectReason::area_too_small: return "area-too-small";
        case RejectReason::excess_hand: return "excess-hand";
        case RejectReason::frame_undercount: return "frame-undercount";
        case RejectReason::velocity_exceeded: return "velocity-exceeded";
    }
    return "unknown";
}

// Audit record for one removed detection or dropped frame. Carries the
// measured value and the threshold that triggered the removal so every
// decision can be re-checked offline.
struct RejectionRecord {
    std::int64_t frame_id = 0;
    int detection_index = -1;  // -1 marks a whole-frame rejection
    RejectReason reason = RejectReason::frame_undercount;
    double measured = 0.0;
    double threshold = 0.0;
    Bone bone{-1, -1};  // set for bone-too-long only

    bool operator==(const RejectionRecord&) const = default;
};

// External model wrapped as a pair of command templates. Placeholders
// {model} {video} {out} {dataset} are substituted at invocation time;
// the orchestrator never looks inside a checkpoint.
struct ModelAdapter {
    std::string infer_command;
    std::string train_command;
    std::string model_ref;

    bool operator==(const ModelAdapter&) const = default;
};

struct LoopConfig {
    int iterations = 3;
    std::filesystem::path work_dir;
    std::vector<std::string> videos;
    ModelAdapter detector;
    ModelAdapter pose;
    int workers = 0;  // 0 = hardware concurrency

    void validate() const {
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (work_dir.empty()) throw ConfigError("work_dir must be set");
        if (videos.empty()) throw ConfigError("at least one video source is required");
        if (detector.infer_command.empty())
            throw ConfigError("detector.infer_command must be set");
        if (detector.train_command.empty())
            throw ConfigError("detector.train_command must be set");
        if (pose.infer_command.empty()) throw ConfigError("pose.infer_command must be set");
        if (pose.train_command.empty()) throw ConfigError("pose.train_command must be set");
        if (workers < 0) throw ConfigError("workers must be >= 0");
    }

    bool operator==(const LoopConfig&) const = default;
};

}  // namespace handforge
