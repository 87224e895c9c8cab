#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "handforge/config.hpp"
#include "handforge/errors.hpp"
#include "handforge/types.hpp"

namespace handforge::synth {

namespace detail {

// Self-contained RNG so generated corpora are stable across standard
// library versions (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {
        // warm up splitmix so nearby seeds diverge
        next();
        next();
    }

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    double normal(double mean, double sigma) {
        // Box-Muller; one draw per call keeps the stream easy to reason about.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * mag * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace detail

enum class Motion { Static, Linear, Sinusoidal };

// Describes a synthetic multi-hand scene. Generated poses satisfy the
// bone-ratio table exactly and always lie inside the image; an
// infeasible layout (hand or motion envelope larger than the image) is
// a hard error.
struct SceneSpec {
    int n_hands = 1;
    int image_width = 640;
    int image_height = 480;
    Motion motion = Motion::Static;
    double velocity_x = 0.0;   // Linear, px/frame; odd hands move mirrored in x
    double velocity_y = 0.0;
    double amplitude_x = 0.0;  // Sinusoidal, px
    double amplitude_y = 0.0;
    double period_frames = 60.0;
    int n_frames = 1;
    double base_hand_scale = 50.0;  // length of the index proximal phalanx, px
    std::uint64_t seed = 1;
    std::map<Bone, double> bone_ratios = default_bone_ratios();
    double bbox_margin_scale = 0.12;  // box padding as a fraction of hand scale
};

namespace detail {

// Straight-finger hand template: every bone points along its finger's
// direction, so each bone length equals scale * ratio exactly.
inline HandPose hand_template(double wrist_x, double wrist_y, double scale,
                              const std::map<Bone, double>& ratios, double tilt) {
    constexpr double kFingerAngle[5] = {-0.96, -0.35, 0.0, 0.31, 0.66};  // radians from up
    HandPose pose;
    auto set = [&](int idx, double x, double y) {
        pose.keypoints[idx] = {x, y, 1.0, true, false};
    };
    set(0, wrist_x, wrist_y);
    for (int f = 0; f < 5; ++f) {
        const double angle = kFingerAngle[f] + tilt;
        const double dx = std::sin(angle);
        const double dy = -std::cos(angle);  // image y grows downward
        double x = wrist_x, y = wrist_y;
        int prev = 0;
        for (int j = 0; j < 4; ++j) {
            const int idx = 1 + f * 4 + j;
            const double len = scale * ratios.at({prev, idx});
            x += dx * len;
            y += dy * len;
            set(idx, x, y);
            prev = idx;
        }
    }
    return pose;
}

inline BBox tight_bbox(const HandPose& pose, double margin, int width, int height) {
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    for (const Keypoint& kp : pose.keypoints) {
        if (!kp.valid) continue;
        min_x = std::min(min_x, kp.x);
        min_y = std::min(min_y, kp.y);
        max_x = std::max(max_x, kp.x);
        max_y = std::max(max_y, kp.y);
    }
    BBox box{min_x - margin, min_y - margin, max_x + margin, max_y + margin, 1.0};
    box.x1 = std::max(0.0, box.x1);
    box.y1 = std::max(0.0, box.y1);
    box.x2 = std::min(static_cast<double>(width), box.x2);
    box.y2 = std::min(static_cast<double>(height), box.y2);
    return box;
}

}  // namespace detail

// Ground-truth sequence for a scene: one detection per hand per frame,
// all keypoints valid at confidence 1, boxes tight around the pose.
inline std::vector<FrameCandidates> generate(const SceneSpec& spec) {
    if (spec.n_hands < 1) throw ConfigError("scene needs at least one hand");
    if (spec.n_frames < 1) throw ConfigError("scene needs at least one frame");
    if (spec.image_width <= 0 || spec.image_height <= 0)
        throw ConfigError("scene image dimensions must be positive");
    if (!(spec.base_hand_scale > 0.0)) throw ConfigError("base_hand_scale must be > 0");
    if (spec.motion == Motion::Sinusoidal && !(spec.period_frames > 0.0))
        throw ConfigError("period_frames must be > 0");

    detail::Rng rng(spec.seed);
    struct HandLayout {
        double wrist_x, wrist_y, tilt, phase;
        int direction;
    };
    std::vector<HandLayout> hands;
    for (int h = 0; h < spec.n_hands; ++h) {
        HandLayout lay;
        lay.wrist_x = (h + 0.5) / spec.n_hands * spec.image_width;
        // Template extends upward from the wrist; park the wrist low enough
        // that the fingertips stay comfortably inside the frame.
        lay.wrist_y = spec.image_height * 0.5 + 2.4 * spec.base_hand_scale;
        lay.tilt = rng.uniform(-0.12, 0.12);
        lay.phase = h * 1.5707963267948966;
        lay.direction = (h % 2 == 0) ? 1 : -1;
        hands.push_back(lay);
    }

    auto offset_at = [&](const HandLayout& lay, int frame) -> std::pair<double, double> {
        const double t = static_cast<double>(frame);
        switch (spec.motion) {
            case Motion::Static: return {0.0, 0.0};
            case Motion::Linear:
                return {lay.direction * spec.velocity_x * t, spec.velocity_y * t};
            case Motion::Sinusoidal: {
                const double w = 2.0 * 3.14159265358979323846 / spec.period_frames;
                return {spec.amplitude_x * std::sin(w * t + lay.phase),
                        spec.amplitude_y * std::sin(w * t + lay.phase)};
            }
        }
        return {0.0, 0.0};
    };

    std::vector<FrameCandidates> frames;
    for (int f = 0; f < spec.n_frames; ++f) {
        FrameCandidates frame;
        frame.frame_id = f;
        frame.timestamp_ms = static_cast<std::int64_t>(f) * 33;
        frame.image_width = spec.image_width;
        frame.image_height = spec.image_height;
        std::ostringstream path;
        path << "synth/" << std::setw(6) << std::setfill('0') << f << ".png";
        frame.image_path = path.str();
        for (const HandLayout& lay : hands) {
            auto [ox, oy] = offset_at(lay, f);
            HandPose pose = detail::hand_template(lay.wrist_x + ox, lay.wrist_y + oy,
                                                  spec.base_hand_scale, spec.bone_ratios,
                                                  lay.tilt);
            for (const Keypoint& kp : pose.keypoints) {
                if (kp.x < 0.0 || kp.x > spec.image_width || kp.y < 0.0 ||
                    kp.y > spec.image_height)
                    throw ConfigError(
                        "scene infeasible: hand leaves the image at frame " +
                        std::to_string(f));
            }
            Detection det;
            det.pose = pose;
            det.bbox = detail::tight_bbox(pose, spec.bbox_margin_scale * spec.base_hand_scale,
                                          spec.image_width, spec.image_height);
            frame.detections.push_back(std::move(det));
        }
        frames.push_back(std::move(frame));
    }
    return frames;
}

// Maps corruption magnitude (pixels, relative to the image diagonal) to
// the confidence the fake estimator reports.
struct ConfidenceModel {
    double clean_base = 0.95;
    double slope = 1.0;

    double confidence_for(double magnitude, double image_diagonal) const {
        return std::clamp(clean_base - slope * magnitude / image_diagonal, 0.0, 1.0);
    }
};

struct CorruptionSpec {
    double keypoint_jitter_sigma = 0.0;
    double outlier_rate = 0.0;       // per keypoint slot
    double outlier_magnitude = 0.0;  // teleport distance; 0 = anywhere in the image
    double dropout_rate = 0.0;       // per detection per frame
    double false_detection_rate = 0.0;  // per frame
    ConfidenceModel confidence;
};

// Exact record of one injected difference between truth and candidates.
struct LedgerEntry {
    enum class Kind { jitter, outlier, dropout, false_detection };
    Kind kind{};
    std::int64_t frame_id = 0;
    int hand = -1;       // truth detection index
    int keypoint = -1;   // jitter/outlier only
    double from_x = 0.0, from_y = 0.0;
    double to_x = 0.0, to_y = 0.0;
    int detection_index = -1;  // index in the corrupted frame (false detections)
};

inline const char* to_string(LedgerEntry::Kind k) {
    switch (k) {
        case LedgerEntry::Kind::jitter: return "jitter";
        case LedgerEntry::Kind::outlier: return "outlier";
        case LedgerEntry::Kind::dropout: return "dropout";
        case LedgerEntry::Kind::false_detection: return "false-detection";
    }
    return "unknown";
}

struct CorruptResult {
    std::vector<FrameCandidates> frames;
    std::vector<LedgerEntry> ledger;
};

// Applies seeded corruption to a ground-truth sequence and records every
// injected difference. Outliers teleport a keypoint (never the same
// keypoint of the same hand on consecutive frames, keeping them
// isolated); dropouts delete a detection for one frame; false detections
// append a random box with scattered keypoints. Boxes themselves stay
// uncorrupted: they come from the fake detector, the keypoints from the
// fake estimator.
inline CorruptResult corrupt(const std::vector<FrameCandidates>& truth,
                             const CorruptionSpec& spec, std::uint64_t seed) {
    detail::Rng rng(seed * 0x85ebca6bULL + 0xc2b2ae35ULL);
    CorruptResult out;
    std::map<int, std::map<int, std::int64_t>> last_teleport;  // hand -> kp -> frame

    for (const FrameCandidates& truth_frame : truth) {
        const double diag = std::hypot(truth_frame.image_width, truth_frame.image_height);
        FrameCandidates frame = truth_frame;
        frame.detections.clear();

        for (std::size_t h = 0; h < truth_frame.detections.size(); ++h) {
            if (spec.dropout_rate > 0.0 && rng.uniform() < spec.dropout_rate) {
                LedgerEntry entry;
                entry.kind = LedgerEntry::Kind::dropout;
                entry.frame_id = truth_frame.frame_id;
                entry.hand = static_cast<int>(h);
                out.ledger.push_back(entry);
                continue;
            }
            Detection det = truth_frame.detections[h];
            double displacement_sum = 0.0;
            if (det.pose) {
                for (int k = 0; k < kKeypointCount; ++k) {
                    Keypoint& kp = det.pose->keypoints[k];
                    if (!kp.valid) continue;
                    const double from_x = kp.x, from_y = kp.y;
                    auto& last = last_teleport[static_cast<int>(h)];
                    const bool teleported_prev =
                        last.count(k) && last[k] == truth_frame.frame_id - 1;
                    if (spec.outlier_rate > 0.0 && !teleported_prev &&
                        rng.uniform() < spec.outlier_rate) {
                        if (spec.outlier_magnitude > 0.0) {
                            const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                            kp.x += spec.outlier_magnitude * std::cos(theta);
                            kp.y += spec.outlier_magnitude * std::sin(theta);
                        } else {
                            kp.x = rng.uniform(0.0, truth_frame.image_width);
                            kp.y = rng.uniform(0.0, truth_frame.image_height);
                        }
                        kp.x = std::clamp(kp.x, 0.0, static_cast<double>(truth_frame.image_width));
                        kp.y = std::clamp(kp.y, 0.0, static_cast<double>(truth_frame.image_height));
                        last[k] = truth_frame.frame_id;
                        LedgerEntry entry;
                        entry.kind = LedgerEntry::Kind::outlier;
                        entry.frame_id = truth_frame.frame_id;
                        entry.hand = static_cast<int>(h);
                        entry.keypoint = k;
                        entry.from_x = from_x;
                        entry.from_y = from_y;
                        entry.to_x = kp.x;
                        entry.to_y = kp.y;
                        out.ledger.push_back(entry);
                    } else if (spec.keypoint_jitter_sigma > 0.0) {
                        kp.x += rng.normal(0.0, spec.keypoint_jitter_sigma);
                        kp.y += rng.normal(0.0, spec.keypoint_jitter_sigma);
                        kp.x = std::clamp(kp.x, 0.0, static_cast<double>(truth_frame.image_width));
                        kp.y = std::clamp(kp.y, 0.0, static_cast<double>(truth_frame.image_height));
                        if (kp.x != from_x || kp.y != from_y) {
                            LedgerEntry entry;
                            entry.kind = LedgerEntry::Kind::jitter;
                            entry.frame_id = truth_frame.frame_id;
                            entry.hand = static_cast<int>(h);
                            entry.keypoint = k;
                            entry.from_x = from_x;
                            entry.from_y = from_y;
                            entry.to_x = kp.x;
                            entry.to_y = kp.y;
                            out.ledger.push_back(entry);
                        }
                    }
                    const double moved = std::hypot(kp.x - from_x, kp.y - from_y);
                    displacement_sum += moved;
                    kp.confidence = spec.confidence.confidence_for(moved, diag);
                }
                det.bbox.score = spec.confidence.confidence_for(
                    displacement_sum / kKeypointCount, diag);
            } else {
                det.bbox.score = spec.confidence.clean_base;
            }
            frame.detections.push_back(std::move(det));
        }

        if (spec.false_detection_rate > 0.0 && rng.uniform() < spec.false_detection_rate) {
            const double w = truth_frame.image_width;
            const double hgt = truth_frame.image_height;
            const double half_w = rng.uniform(0.05, 0.30) * std::min(w, hgt);
            const double half_h = rng.uniform(0.05, 0.30) * std::min(w, hgt);
            const double cx = rng.uniform(half_w, w - half_w);
            const double cy = rng.uniform(half_h, hgt - half_h);
            Detection det;
            det.bbox = {cx - half_w, cy - half_h, cx + half_w, cy + half_h,
                        rng.uniform(0.25, 0.95)};
            det.pose.emplace();
            for (int k = 0; k < kKeypointCount; ++k) {
                det.pose->keypoints[k] = {rng.uniform(det.bbox.x1, det.bbox.x2),
                                          rng.uniform(det.bbox.y1, det.bbox.y2),
                                          rng.uniform(0.3, 0.95), true, false};
            }
            LedgerEntry entry;
            entry.kind = LedgerEntry::Kind::false_detection;
            entry.frame_id = truth_frame.frame_id;
            entry.detection_index = static_cast<int>(frame.detections.size());
            entry.to_x = cx;
            entry.to_y = cy;
            out.ledger.push_back(entry);
            frame.detections.push_back(std::move(det));
        }
        out.frames.push_back(std::move(frame));
    }
    return out;
}

inline void write_ledger(const std::vector<LedgerEntry>& ledger,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (const LedgerEntry& e : ledger) {
        out << "{\"kind\":\"" << to_string(e.kind) << "\",\"frame_id\":" << e.frame_id
            << ",\"hand\":" << e.hand << ",\"keypoint\":" << e.keypoint
            << ",\"from\":[" << e.from_x << "," << e.from_y << "],\"to\":[" << e.to_x << ","
            << e.to_y << "],\"detection_index\":" << e.detection_index << "}\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace handforge::synth
