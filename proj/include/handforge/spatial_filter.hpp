#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "handforge/config.hpp"
#include "handforge/types.hpp"

namespace handforge {

struct GateResult {
    FrameCandidates frame;
    std::vector<RejectionRecord> rejections;
};

// Confidence gating: drops detections below c_hd, drops detections whose
// pose score (mean confidence over valid keypoints, 0 for a missing pose)
// is below c_pe, and invalidates individual keypoints below c_pe on the
// survivors. Surviving order is preserved.
//
// The pose gate runs against the score of the pose as received, before
// keypoint invalidation: a pose whose overall score is weak goes away even
// if a few strong joints would survive on their own.
inline GateResult gate_confidence(const FrameCandidates& frame, const FilterConfig& cfg) {
    GateResult out;
    out.frame = frame;
    out.frame.detections.clear();
    for (std::size_t i = 0; i < frame.detections.size(); ++i) {
        const Detection& det = frame.detections[i];
        if (det.bbox.score < cfg.c_hd) {
            out.rejections.push_back({frame.frame_id, static_cast<int>(i),
                                      RejectReason::low_detection_confidence, det.bbox.score,
                                      cfg.c_hd});
            continue;
        }
        const double pose_score = det.pose ? det.pose->score() : 0.0;
        if (!det.pose || pose_score < cfg.c_pe) {
            out.rejections.push_back({frame.frame_id, static_cast<int>(i),
                                      RejectReason::low_pose_score, pose_score, cfg.c_pe});
            continue;
        }
        Detection kept = det;
        for (auto& kp : kept.pose->keypoints) {
            if (kp.valid && kp.confidence < cfg.c_pe) kp = Keypoint{};
        }
        out.frame.detections.push_back(std::move(kept));
    }
    return out;
}

struct BoneCheck {
    bool pass = true;
    Bone bone{-1, -1};
    double measured = 0.0;
    double bound = 0.0;
};

// Anatomical upper bound per bone: s_bone * ratio * slack. Bones with an
// invalid endpoint are skipped; the first violation fails the pose.
inline BoneCheck check_bones(const HandPose& pose, const FilterConfig& cfg) {
    for (const Bone& bone : hand_topology().bones) {
        auto ratio = cfg.bone_ratios.find(bone);
        if (ratio == cfg.bone_ratios.end())
            throw ConfigError("bone_ratios missing bone " + std::to_string(bone.first) + "-" +
                              std::to_string(bone.second));
        auto length = bone_length(pose, bone);
        if (!length) continue;
        const double bound = cfg.s_bone * ratio->second * cfg.slack;
        if (*length > bound) return {false, bone, *length, bound};
    }
    return {};
}

struct AreaCheck {
    bool pass = true;
    RejectReason reason = RejectReason::area_too_large;
    double fraction = 0.0;
};

// Hand size plausibility via image coverage; both bounds inclusive.
inline AreaCheck check_area(const Detection& det, const FrameCandidates& frame,
                            const FilterConfig& cfg) {
    const double f = area_fraction(det.bbox, frame);
    if (f > cfg.s_area_max) return {false, RejectReason::area_too_large, f};
    if (f < cfg.s_area_min) return {false, RejectReason::area_too_small, f};
    return {true, RejectReason::area_too_large, f};
}

struct FilterResult {
    std::optional<FrameCandidates> frame;  // empty = frame dropped
    std::vector<RejectionRecord> rejections;
};

namespace detail {

// Indices of the s_count highest-scoring detections, ties won by the
// lower index; returned in ascending index order.
inline std::vector<std::size_t> top_by_score(const std::vector<Detection>& dets,
                                             std::size_t count) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].bbox.score > dets[b].bbox.score;
    });
    order.resize(std::min(count, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace detail

// Contextual hand-count rule: more detections than expected keeps the
// s_count most confident; fewer drops the whole frame.
inline FilterResult enforce_count(const FrameCandidates& frame, const FilterConfig& cfg) {
    const auto n = static_cast<int>(frame.detections.size());
    if (n < cfg.s_count) {
        RejectionRecord rec{frame.frame_id, -1, RejectReason::frame_undercount,
                            static_cast<double>(n), static_cast<double>(cfg.s_count)};
        return {std::nullopt, {rec}};
    }
    if (n == cfg.s_count) return {frame, {}};

    FilterResult out;
    out.frame = frame;
    out.frame->detections.clear();
    auto keep = detail::top_by_score(frame.detections, static_cast<std::size_t>(cfg.s_count));
    double min_kept = 1.0;
    for (std::size_t idx : keep)
        min_kept = std::min(min_kept, frame.detections[idx].bbox.score);
    std::size_t next_kept = 0;
    for (std::size_t i = 0; i < frame.detections.size(); ++i) {
        if (next_kept < keep.size() && keep[next_kept] == i) {
            out.frame->detections.push_back(frame.detections[i]);
            ++next_kept;
        } else {
            out.rejections.push_back({frame.frame_id, static_cast<int>(i),
                                      RejectReason::excess_hand,
                                      frame.detections[i].bbox.score, min_kept});
        }
    }
    return out;
}

// Full frame-local pass: confidence gate, bone bounds, area bounds, hand
// count, in that order. Rejections come back in application order and a
// dropped frame is signaled by an empty result frame.
inline FilterResult spatial_filter(const FrameCandidates& frame, const FilterConfig& cfg) {
    FilterResult out;
    GateResult gated = gate_confidence(frame, cfg);
    out.rejections = std::move(gated.rejections);

    // Track original detection indices so every record names the input slot.
    std::vector<int> original_index;
    {
        std::vector<bool> rejected(frame.detections.size(), false);
        for (const auto& rec : out.rejections)
            rejected[static_cast<std::size_t>(rec.detection_index)] = true;
        for (std::size_t i = 0; i < frame.detections.size(); ++i) {
            if (!rejected[i]) original_index.push_back(static_cast<int>(i));
        }
    }

    FrameCandidates working = gated.frame;
    FrameCandidates surviving = working;
    surviving.detections.clear();
    std::vector<int> surviving_index;
    for (std::size_t i = 0; i < working.detections.size(); ++i) {
        const Detection& det = working.detections[i];
        const int orig = original_index[i];
        BoneCheck bones = check_bones(*det.pose, cfg);
        if (!bones.pass) {
            out.rejections.push_back({frame.frame_id, orig, RejectReason::bone_too_long,
                                      bones.measured, bones.bound, bones.bone});
            continue;
        }
        AreaCheck area = check_area(det, frame, cfg);
        if (!area.pass) {
            const double bound =
                area.reason == RejectReason::area_too_large ? cfg.s_area_max : cfg.s_area_min;
            out.rejections.push_back(
                {frame.frame_id, orig, area.reason, area.fraction, bound});
            continue;
        }
        surviving.detections.push_back(det);
        surviving_index.push_back(orig);
    }

    FilterResult counted = enforce_count(surviving, cfg);
    for (auto& rec : counted.rejections) {
        if (rec.detection_index >= 0)
            rec.detection_index = surviving_index[static_cast<std::size_t>(rec.detection_index)];
        out.rejections.push_back(rec);
    }
    out.frame = std::move(counted.frame);
    return out;
}

}  // namespace handforge
