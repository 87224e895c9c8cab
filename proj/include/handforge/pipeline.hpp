#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "handforge/config.hpp"
#include "handforge/spatial_filter.hpp"
#include "handforge/temporal_filter.hpp"

namespace handforge {

struct PipelineCounts {
    std::int64_t frames_in = 0;
    std::int64_t frames_kept = 0;
    std::int64_t detections_kept = 0;
    std::int64_t keypoints_observed = 0;
    std::int64_t keypoints_interpolated = 0;

    bool operator==(const PipelineCounts&) const = default;
};

struct PipelineResult {
    std::vector<FrameCandidates> frames;
    std::vector<RejectionRecord> rejections;
    PipelineCounts counts;
};

namespace detail {

inline void tally(PipelineResult& result, std::int64_t frames_in) {
    result.counts = {};
    result.counts.frames_in = frames_in;
    result.counts.frames_kept = static_cast<std::int64_t>(result.frames.size());
    for (const FrameCandidates& f : result.frames) {
        result.counts.detections_kept += static_cast<std::int64_t>(f.detections.size());
        for (const Detection& d : f.detections) {
            if (!d.pose) continue;
            for (const Keypoint& kp : d.pose->keypoints) {
                if (!kp.valid) continue;
                if (kp.interpolated)
                    ++result.counts.keypoints_interpolated;
                else
                    ++result.counts.keypoints_observed;
            }
        }
    }
}

}  // namespace detail

// Spatial stage over a whole sequence. Frames are independent, so they
// are filtered across `workers` threads; output order follows input
// order regardless of scheduling.
inline PipelineResult run_spatial(const std::vector<FrameCandidates>& frames,
                                  const FilterConfig& cfg, int workers = 0) {
    std::vector<FilterResult> results(frames.size());
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(frames.size())));
    if (workers <= 1 || frames.size() < 2) {
        for (std::size_t i = 0; i < frames.size(); ++i)
            results[i] = spatial_filter(frames[i], cfg);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < frames.size();
                     i = next.fetch_add(1))
                    results[i] = spatial_filter(frames[i], cfg);
            });
        }
        for (auto& t : pool) t.join();
    }

    PipelineResult out;
    for (FilterResult& r : results) {
        for (auto& rec : r.rejections) out.rejections.push_back(rec);
        if (r.frame) out.frames.push_back(std::move(*r.frame));
    }
    detail::tally(out, static_cast<std::int64_t>(frames.size()));
    return out;
}

inline FrameInventory build_inventory(const std::vector<FrameCandidates>& frames) {
    FrameInventory inv;
    for (const FrameCandidates& f : frames)
        inv[f.frame_id] = {f.timestamp_ms, f.image_width, f.image_height, f.image_path};
    return inv;
}

// The full curation pass for one video: spatial filtering followed by
// temporal filtering, with the original frames serving as the metadata
// inventory for any frame the interpolator re-creates.
inline PipelineResult run_filter_pipeline(const std::vector<FrameCandidates>& frames,
                                          const FilterConfig& cfg, int workers = 0) {
    PipelineResult spatial = run_spatial(frames, cfg, workers);
    SequenceResult temporal = temporal_filter(spatial.frames, cfg, build_inventory(frames));

    PipelineResult out;
    out.frames = std::move(temporal.frames);
    out.rejections = std::move(spatial.rejections);
    for (auto& rec : temporal.rejections) out.rejections.push_back(rec);
    detail::tally(out, static_cast<std::int64_t>(frames.size()));
    return out;
}

inline std::map<std::string, std::int64_t> rejection_histogram(
    const std::vector<RejectionRecord>& records) {
    std::map<std::string, std::int64_t> hist;
    for (const auto& rec : records) ++hist[to_string(rec.reason)];
    return hist;
}

}  // namespace handforge
