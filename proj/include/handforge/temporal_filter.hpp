#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "handforge/config.hpp"
#include "handforge/spatial_filter.hpp"
#include "handforge/types.hpp"

namespace handforge {

// One sighting of a hand inside a track. source_index remembers the
// detection slot in the input frame (-1 for interpolated observations)
// so rejection records stay auditable after re-flattening.
struct TrackObservation {
    std::int64_t frame_id = 0;
    Detection detection;
    int source_index = -1;

    bool operator==(const TrackObservation&) const = default;
};

// One physical hand followed across frames; observations are kept in
// strictly increasing frame order.
struct Track {
    int track_id = 0;
    std::vector<TrackObservation> observations;

    bool operator==(const Track&) const = default;
};

// Greedy frame-to-frame association by maximal clipped IoU. Matches under
// cfg.assoc_iou_min are rejected, equal IoU falls back to the smaller
// box-center distance, and a track stays matchable while its last sighting
// is at most interp_max_gap+1 frames back, so gaps the interpolator could
// still bridge do not split the track. Unmatched detections start new
// tracks in detection order.
inline std::vector<Track> associate(const std::vector<FrameCandidates>& frames,
                                    const FilterConfig& cfg) {
    std::vector<Track> tracks;
    std::vector<std::size_t> active;  // indices into tracks

    for (const FrameCandidates& frame : frames) {
        // Retire tracks whose last sighting fell out of the bridgeable window.
        const std::int64_t window = static_cast<std::int64_t>(cfg.interp_max_gap) + 1;
        std::erase_if(active, [&](std::size_t t) {
            return frame.frame_id - tracks[t].observations.back().frame_id > window;
        });

        struct Pair {
            double iou;
            double center_dist;
            std::size_t track;
            std::size_t det;
        };
        std::vector<Pair> pairs;
        for (std::size_t t : active) {
            const BBox& last = tracks[t].observations.back().detection.bbox;
            for (std::size_t d = 0; d < frame.detections.size(); ++d) {
                const BBox& cur = frame.detections[d].bbox;
                const double overlap =
                    iou_clipped(last, cur, frame.image_width, frame.image_height);
                if (overlap < cfg.assoc_iou_min) continue;
                const double dist = std::hypot(last.center_x() - cur.center_x(),
                                               last.center_y() - cur.center_y());
                pairs.push_back({overlap, dist, t, d});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
            if (a.iou != b.iou) return a.iou > b.iou;
            if (a.center_dist != b.center_dist) return a.center_dist < b.center_dist;
            if (tracks[a.track].track_id != tracks[b.track].track_id)
                return tracks[a.track].track_id < tracks[b.track].track_id;
            return a.det < b.det;
        });

        std::vector<bool> track_taken(tracks.size(), false);
        std::vector<bool> det_taken(frame.detections.size(), false);
        for (const Pair& p : pairs) {
            if (track_taken[p.track] || det_taken[p.det]) continue;
            track_taken[p.track] = true;
            det_taken[p.det] = true;
            tracks[p.track].observations.push_back(
                {frame.frame_id, frame.detections[p.det], static_cast<int>(p.det)});
        }
        for (std::size_t d = 0; d < frame.detections.size(); ++d) {
            if (det_taken[d]) continue;
            Track fresh;
            fresh.track_id = static_cast<int>(tracks.size());
            fresh.observations.push_back(
                {frame.frame_id, frame.detections[d], static_cast<int>(d)});
            tracks.push_back(std::move(fresh));
            active.push_back(tracks.size() - 1);
        }
    }
    return tracks;
}

struct VelocityResult {
    Track track;
    std::vector<RejectionRecord> rejections;
};

namespace detail {

inline double max_corner_speed(const BBox& a, const BBox& b, std::int64_t gap) {
    const double g = static_cast<double>(gap);
    const double d1 = std::hypot(b.x1 - a.x1, b.y1 - a.y1);
    const double d2 = std::hypot(b.x2 - a.x2, b.y1 - a.y1);
    const double d3 = std::hypot(b.x1 - a.x1, b.y2 - a.y2);
    const double d4 = std::hypot(b.x2 - a.x2, b.y2 - a.y2);
    return std::max({d1, d2, d3, d4}) / g;
}

}  // namespace detail

// Velocity gate over one track. For each consecutive surviving pair the
// per-frame speed (displacement divided by the frame gap) of every box
// corner is tested first: a violation removes the later detection
// entirely. Otherwise keypoints valid on both sides are tested and
// violators are invalidated in the later observation. Removals create
// gaps that subsequent pairs measure across with the enlarged gap.
inline VelocityResult velocity_check(const Track& track, const FilterConfig& cfg) {
    VelocityResult out;
    out.track.track_id = track.track_id;
    for (const TrackObservation& obs : track.observations) {
        if (out.track.observations.empty()) {
            out.track.observations.push_back(obs);
            continue;
        }
        const TrackObservation& prev = out.track.observations.back();
        const std::int64_t gap = obs.frame_id - prev.frame_id;
        const double corner_speed =
            detail::max_corner_speed(prev.detection.bbox, obs.detection.bbox, gap);
        if (corner_speed > cfg.t_vmax) {
            out.rejections.push_back({obs.frame_id, obs.source_index,
                                      RejectReason::velocity_exceeded, corner_speed,
                                      cfg.t_vmax});
            continue;
        }
        TrackObservation kept = obs;
        if (prev.detection.pose && kept.detection.pose) {
            const auto& pk = prev.detection.pose->keypoints;
            auto& ck = kept.detection.pose->keypoints;
            for (int k = 0; k < kKeypointCount; ++k) {
                if (!pk[k].valid || !ck[k].valid) continue;
                const double speed =
                    std::hypot(ck[k].x - pk[k].x, ck[k].y - pk[k].y) / static_cast<double>(gap);
                if (speed > cfg.t_vmax) ck[k] = Keypoint{};
            }
        }
        out.track.observations.push_back(std::move(kept));
    }
    return out;
}

// Linear gap filling over one track. Every point -- each box corner and
// each keypoint -- missing for at most max_gap consecutive frames between
// two present values is reconstructed by linear interpolation in frame
// index. Interpolated keypoints take the smaller endpoint confidence and
// both detections and keypoints created here are flagged as interpolated.
// Nothing is extrapolated past the first or last sighting.
inline Track interpolate(const Track& track, int max_gap = 5) {
    Track out;
    out.track_id = track.track_id;

    // Missing observations first: boxes are rebuilt corner-wise, poses
    // start empty and are filled by the keypoint pass below.
    for (std::size_t i = 0; i < track.observations.size(); ++i) {
        const TrackObservation& cur = track.observations[i];
        if (!out.observations.empty()) {
            // copy: push_back below may reallocate out.observations
            const TrackObservation prev = out.observations.back();
            const std::int64_t gap = cur.frame_id - prev.frame_id - 1;
            if (gap >= 1 && gap <= max_gap) {
                const double span = static_cast<double>(cur.frame_id - prev.frame_id);
                const BBox& a = prev.detection.bbox;
                const BBox& b = cur.detection.bbox;
                for (std::int64_t f = prev.frame_id + 1; f < cur.frame_id; ++f) {
                    const double t = static_cast<double>(f - prev.frame_id) / span;
                    TrackObservation filled;
                    filled.frame_id = f;
                    filled.source_index = -1;
                    filled.detection.interpolated = true;
                    filled.detection.bbox = {a.x1 + t * (b.x1 - a.x1), a.y1 + t * (b.y1 - a.y1),
                                             a.x2 + t * (b.x2 - a.x2), a.y2 + t * (b.y2 - a.y2),
                                             std::min(a.score, b.score)};
                    filled.detection.pose.emplace();
                    out.observations.push_back(std::move(filled));
                }
            }
        }
        out.observations.push_back(cur);
    }

    // Keypoint pass: anchors are values present on the original
    // observations; fills land on any observation inside the gap,
    // original or created above.
    struct Anchor {
        std::int64_t frame_id;
        Keypoint kp;
    };
    for (int k = 0; k < kKeypointCount; ++k) {
        std::vector<Anchor> anchors;
        for (const TrackObservation& obs : track.observations) {
            if (obs.detection.pose && obs.detection.pose->keypoints[k].valid)
                anchors.push_back({obs.frame_id, obs.detection.pose->keypoints[k]});
        }
        if (anchors.size() < 2) continue;
        for (std::size_t a = 0; a + 1 < anchors.size(); ++a) {
            const Anchor& lo = anchors[a];
            const Anchor& hi = anchors[a + 1];
            const std::int64_t gap = hi.frame_id - lo.frame_id - 1;
            if (gap < 1 || gap > max_gap) continue;
            const double span = static_cast<double>(hi.frame_id - lo.frame_id);
            for (TrackObservation& obs : out.observations) {
                if (obs.frame_id <= lo.frame_id || obs.frame_id >= hi.frame_id) continue;
                if (!obs.detection.pose) obs.detection.pose.emplace();
                Keypoint& kp = obs.detection.pose->keypoints[k];
                if (kp.valid) continue;
                const double t = static_cast<double>(obs.frame_id - lo.frame_id) / span;
                kp.x = lo.kp.x + t * (hi.kp.x - lo.kp.x);
                kp.y = lo.kp.y + t * (hi.kp.y - lo.kp.y);
                kp.confidence = std::min(lo.kp.confidence, hi.kp.confidence);
                kp.valid = true;
                kp.interpolated = true;
            }
        }
    }
    return out;
}

// Image metadata for frames the filter may need to re-create (frames the
// spatial stage dropped but interpolation can repopulate).
struct FrameMeta {
    std::int64_t timestamp_ms = 0;
    int image_width = 0;
    int image_height = 0;
    std::string image_path;
};

using FrameInventory = std::map<std::int64_t, FrameMeta>;

struct SequenceResult {
    std::vector<FrameCandidates> frames;
    std::vector<RejectionRecord> rejections;
};

// Full temporal pass over one spatially filtered video: associate into
// tracks, reject velocity violations, interpolate gaps, then flatten the
// tracks back into per-frame candidates. Frames that end up under
// s_count are dropped; frames pushed above s_count by interpolation are
// trimmed back to the s_count most confident detections. The inventory
// supplies image metadata for re-created frames; without an entry the
// metadata is synthesized from the neighboring input frames (empty
// image path).
inline SequenceResult temporal_filter(const std::vector<FrameCandidates>& frames,
                                      const FilterConfig& cfg,
                                      const FrameInventory& inventory = {}) {
    SequenceResult out;

    std::vector<Track> tracks = associate(frames, cfg);
    for (Track& track : tracks) {
        VelocityResult checked = velocity_check(track, cfg);
        for (auto& rec : checked.rejections) out.rejections.push_back(rec);
        track = interpolate(checked.track, cfg.interp_max_gap);
    }

    // Gather observations per frame: observed detections in their input
    // order first, interpolated ones after, ordered by track id.
    struct Slot {
        int track_id;
        const TrackObservation* obs;
    };
    std::map<std::int64_t, std::vector<Slot>> by_frame;
    for (const Track& track : tracks) {
        for (const TrackObservation& obs : track.observations)
            by_frame[obs.frame_id].push_back({track.track_id, &obs});
    }
    for (auto& [fid, slots] : by_frame) {
        std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
            const bool ai = a.obs->source_index < 0;
            const bool bi = b.obs->source_index < 0;
            if (ai != bi) return bi;
            if (!ai) return a.obs->source_index < b.obs->source_index;
            return a.track_id < b.track_id;
        });
    }

    std::map<std::int64_t, const FrameCandidates*> input_by_id;
    for (const FrameCandidates& f : frames) {
        input_by_id[f.frame_id] = &f;
        // input frames that lost every observation still get audited below
        by_frame[f.frame_id];
    }

    auto make_frame = [&](std::int64_t fid) -> FrameCandidates {
        FrameCandidates fc;
        fc.frame_id = fid;
        if (auto it = input_by_id.find(fid); it != input_by_id.end()) {
            fc = *it->second;
            fc.detections.clear();
            return fc;
        }
        if (auto inv = inventory.find(fid); inv != inventory.end()) {
            fc.timestamp_ms = inv->second.timestamp_ms;
            fc.image_width = inv->second.image_width;
            fc.image_height = inv->second.image_height;
            fc.image_path = inv->second.image_path;
            return fc;
        }
        // No metadata on file: derive from the surrounding input frames.
        auto after = input_by_id.upper_bound(fid);
        if (after != input_by_id.end() && after != input_by_id.begin()) {
            auto before = std::prev(after);
            const FrameCandidates& a = *before->second;
            const FrameCandidates& b = *after->second;
            const double t = static_cast<double>(fid - a.frame_id) /
                             static_cast<double>(b.frame_id - a.frame_id);
            fc.timestamp_ms = a.timestamp_ms + static_cast<std::int64_t>(std::llround(
                                                   t * static_cast<double>(b.timestamp_ms -
                                                                           a.timestamp_ms)));
            fc.image_width = a.image_width;
            fc.image_height = a.image_height;
        }
        return fc;
    };

    for (const auto& [fid, slots] : by_frame) {
        FrameCandidates fc = make_frame(fid);
        std::vector<int> sources;
        for (const Slot& slot : slots) {
            fc.detections.push_back(slot.obs->detection);
            sources.push_back(slot.obs->source_index);
        }
        const auto n = static_cast<int>(fc.detections.size());
        if (n < cfg.s_count) {
            out.rejections.push_back({fid, -1, RejectReason::frame_undercount,
                                      static_cast<double>(n),
                                      static_cast<double>(cfg.s_count)});
            continue;
        }
        if (n > cfg.s_count) {
            auto keep = detail::top_by_score(fc.detections,
                                             static_cast<std::size_t>(cfg.s_count));
            double min_kept = 1.0;
            for (std::size_t idx : keep)
                min_kept = std::min(min_kept, fc.detections[idx].bbox.score);
            std::vector<Detection> kept;
            std::size_t next = 0;
            for (std::size_t i = 0; i < fc.detections.size(); ++i) {
                if (next < keep.size() && keep[next] == i) {
                    kept.push_back(fc.detections[i]);
                    ++next;
                } else {
                    out.rejections.push_back({fid, sources[i], RejectReason::excess_hand,
                                              fc.detections[i].bbox.score, min_kept});
                }
            }
            fc.detections = std::move(kept);
        }
        out.frames.push_back(std::move(fc));
    }
    return out;
}

}  // namespace handforge
