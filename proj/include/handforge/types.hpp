#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace handforge {

inline constexpr int kKeypointCount = 21;
inline constexpr int kBoneCount = 20;

// One hand joint in image space. Coordinates are only meaningful while
// valid is true; interpolated marks values synthesized by the temporal
// filter rather than observed by a model.
struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0;
    bool valid = false;
    bool interpolated = false;

    bool operator==(const Keypoint&) const = default;
};

// 21-slot hand skeleton: 0 = wrist, then 4 joints per finger starting
// with the thumb (1-4), index (5-8), middle (9-12), ring (13-16),
// pinky (17-20).
struct HandPose {
    std::array<Keypoint, kKeypointCount> keypoints{};

    int valid_count() const {
        int n = 0;
        for (const auto& kp : keypoints) n += kp.valid ? 1 : 0;
        return n;
    }

    // Aggregate pose score: mean confidence over valid keypoints,
    // 0 when no keypoint is valid.
    double score() const {
        double sum = 0.0;
        int n = 0;
        for (const auto& kp : keypoints) {
            if (kp.valid) {
                sum += kp.confidence;
                ++n;
            }
        }
        return n == 0 ? 0.0 : sum / n;
    }

    bool operator==(const HandPose&) const = default;
};

using Bone = std::pair<int, int>;

// Fixed hand skeleton: a tree rooted at the wrist covering all 21
// keypoints with 20 bones. reference_bone indexes the index-finger
// proximal phalanx (5,6), the segment all bone-length ratios refer to.
struct SkeletonTopology {
    std::array<Bone, kBoneCount> bones;
    int reference_bone;
};

inline const SkeletonTopology& hand_topology() {
    static const SkeletonTopology topo{
        {{{0, 1},  {1, 2},   {2, 3},   {3, 4},     // thumb
          {0, 5},  {5, 6},   {6, 7},   {7, 8},     // index
          {0, 9},  {9, 10},  {10, 11}, {11, 12},   // middle
          {0, 13}, {13, 14}, {14, 15}, {15, 16},   // ring
          {0, 17}, {17, 18}, {18, 19}, {19, 20}}}, // pinky
        5};
    return topo;
}

// Axis-aligned box in corner form; width/height are always derived.
struct BBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;
    double score = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }

    bool operator==(const BBox&) const = default;
};

// A detector box, optionally paired with an estimated pose.
// interpolated marks detections re-created by the temporal filter.
struct Detection {
    BBox bbox;
    std::optional<HandPose> pose;
    bool interpolated = false;

    bool operator==(const Detection&) const = default;
};

// All candidates of one video frame plus image metadata. frame_id is
// strictly increasing within one sequence; images are referenced by
// path only and never decoded here.
struct FrameCandidates {
    std::int64_t frame_id = 0;
    std::int64_t timestamp_ms = 0;
    int image_width = 0;
    int image_height = 0;
    std::string image_path;
    std::vector<Detection> detections;

    bool operator==(const FrameCandidates&) const = default;
};

// Euclidean length of one skeleton bone; empty when either endpoint is
// missing (an invalid keypoint carries no coordinates).
inline std::optional<double> bone_length(const HandPose& pose, const Bone& bone) {
    const Keypoint& a = pose.keypoints.at(static_cast<std::size_t>(bone.first));
    const Keypoint& b = pose.keypoints.at(static_cast<std::size_t>(bone.second));
    if (!a.valid || !b.valid) return std::nullopt;
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Standard intersection-over-union; 0 for disjoint boxes.
inline double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Box clipped to [0,w] x [0,h]; empty when nothing remains inside.
inline std::optional<BBox> clip_to_image(const BBox& box, int width, int height) {
    BBox c = box;
    c.x1 = std::clamp(box.x1, 0.0, static_cast<double>(width));
    c.y1 = std::clamp(box.y1, 0.0, static_cast<double>(height));
    c.x2 = std::clamp(box.x2, 0.0, static_cast<double>(width));
    c.y2 = std::clamp(box.y2, 0.0, static_cast<double>(height));
    if (c.x1 >= c.x2 || c.y1 >= c.y2) return std::nullopt;
    return c;
}

// IoU on boxes clipped to the image, so out-of-frame detector output
// does not inflate the union area.
inline double iou_clipped(const BBox& a, const BBox& b, int width, int height) {
    auto ca = clip_to_image(a, width, height);
    auto cb = clip_to_image(b, width, height);
    if (!ca || !cb) return 0.0;
    return iou(*ca, *cb);
}

// Fraction of the image covered by the box after clipping, in [0,1].
inline double area_fraction(const BBox& box, const FrameCandidates& frame) {
    const double image_area =
        static_cast<double>(frame.image_width) * static_cast<double>(frame.image_height);
    if (image_area <= 0.0)
        throw std::invalid_argument("area_fraction: frame has zero image area");
    auto clipped = clip_to_image(box, frame.image_width, frame.image_height);
    if (!clipped) return 0.0;
    return clipped->area() / image_area;
}

}  // namespace handforge
