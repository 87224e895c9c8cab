#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "handforge/types.hpp"

namespace handforge {

// One-to-one matching of predicted boxes to ground truth.
struct MatchResult {
    struct PredMatch {
        int gt_index = -1;  // -1 = unmatched
        double iou = 0.0;
        double confidence = 0.0;
    };
    std::vector<PredMatch> preds;
    std::vector<bool> gt_covered;

    int true_positives() const {
        int n = 0;
        for (const auto& p : preds) n += p.gt_index >= 0 ? 1 : 0;
        return n;
    }
};

// Greedy matcher in descending prediction confidence: each prediction
// takes the still-uncovered ground truth of highest IoU, provided that
// IoU reaches the threshold. Ties fall to the lower index.
inline MatchResult match_detections(const std::vector<BBox>& preds,
                                    const std::vector<BBox>& gts, double iou_threshold) {
    MatchResult out;
    out.preds.resize(preds.size());
    out.gt_covered.assign(gts.size(), false);
    for (std::size_t i = 0; i < preds.size(); ++i)
        out.preds[i].confidence = preds[i].score;

    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return preds[a].score > preds[b].score;
    });

    for (std::size_t pi : order) {
        int best_gt = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (out.gt_covered[gi]) continue;
            const double overlap = iou(preds[pi], gts[gi]);
            if (overlap > best_iou) {
                best_iou = overlap;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            out.preds[pi].gt_index = best_gt;
            out.preds[pi].iou = best_iou;
            out.gt_covered[static_cast<std::size_t>(best_gt)] = true;
        }
    }
    return out;
}

struct PRPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;

    bool operator==(const PRPoint&) const = default;
};

struct PRCurve {
    std::vector<PRPoint> points;
};

// Corpus-level precision/recall sweep. preds and gts are per-frame box
// lists aligned by index; at each confidence threshold only predictions
// scoring at least the threshold enter the matching. Empty prediction
// sets count as precision 1.
inline PRCurve precision_recall(const std::vector<std::vector<BBox>>& preds,
                                const std::vector<std::vector<BBox>>& gts,
                                double iou_threshold, const std::vector<double>& conf_grid) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("precision_recall: pred/gt frame counts differ");
    for (std::size_t i = 0; i + 1 < conf_grid.size(); ++i)
        if (!(conf_grid[i] < conf_grid[i + 1]))
            throw std::invalid_argument("precision_recall: conf_grid must be strictly increasing");
    for (double c : conf_grid)
        if (c < 0.0 || c > 1.0)
            throw std::invalid_argument("precision_recall: conf_grid values must be in [0,1]");

    PRCurve curve;
    for (double threshold : conf_grid) {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t f = 0; f < preds.size(); ++f) {
            std::vector<BBox> admitted;
            for (const BBox& p : preds[f])
                if (p.score >= threshold) admitted.push_back(p);
            MatchResult match = match_detections(admitted, gts[f], iou_threshold);
            const std::int64_t frame_tp = match.true_positives();
            tp += frame_tp;
            fp += static_cast<std::int64_t>(admitted.size()) - frame_tp;
            fn += static_cast<std::int64_t>(gts[f].size()) - frame_tp;
        }
        const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0;
        const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 1.0;
        curve.points.push_back({threshold, precision, recall});
    }
    return curve;
}

namespace detail {

// Diagonal of the tight box around the valid ground-truth keypoints.
inline std::optional<double> pose_diagonal(const HandPose& pose) {
    double min_x = std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_x = -std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (const Keypoint& kp : pose.keypoints) {
        if (!kp.valid) continue;
        any = true;
        min_x = std::min(min_x, kp.x);
        min_y = std::min(min_y, kp.y);
        max_x = std::max(max_x, kp.x);
        max_y = std::max(max_y, kp.y);
    }
    if (!any) return std::nullopt;
    return std::hypot(max_x - min_x, max_y - min_y);
}

}  // namespace detail

// Percentage of correct keypoints: the fraction of ground-truth-valid
// joints whose prediction lies within norm_distance times the diagonal
// of the ground-truth pose's tight bounding box. Empty when the ground
// truth has no valid keypoint.
inline std::optional<double> pck(const HandPose& pred, const HandPose& gt,
                                 double norm_distance) {
    if (!(norm_distance > 0.0 && norm_distance <= 1.0))
        throw std::invalid_argument("pck: norm_distance must be in (0,1]");
    auto diagonal = detail::pose_diagonal(gt);
    if (!diagonal) return std::nullopt;
    const double radius = norm_distance * *diagonal;
    int total = 0, correct = 0;
    for (int k = 0; k < kKeypointCount; ++k) {
        if (!gt.keypoints[k].valid) continue;
        ++total;
        const Keypoint& p = pred.keypoints[k];
        if (!p.valid) continue;
        const double dist =
            std::hypot(p.x - gt.keypoints[k].x, p.y - gt.keypoints[k].y);
        if (dist <= radius) ++correct;
    }
    return static_cast<double>(correct) / total;
}

inline std::vector<double> default_auc_grid(int steps = 50, double max_threshold = 0.5) {
    std::vector<double> grid;
    for (int i = 1; i <= steps; ++i)
        grid.push_back(max_threshold * i / steps);
    return grid;
}

// Area under the mean-PCK-vs-threshold curve (trapezoidal), normalized
// by the grid span so a perfect estimator scores 1. Pose pairs whose
// ground truth has no valid keypoints are skipped; empty when nothing
// remains.
inline std::optional<double> auc(const std::vector<std::pair<HandPose, HandPose>>& pairs,
                                 const std::vector<double>& grid) {
    if (grid.size() < 2) throw std::invalid_argument("auc: grid needs at least 2 thresholds");
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (!(grid[i] < grid[i + 1]))
            throw std::invalid_argument("auc: grid must be strictly increasing");

    std::vector<double> mean_pck;
    for (double t : grid) {
        double sum = 0.0;
        int n = 0;
        for (const auto& [pred, gt] : pairs) {
            if (auto v = pck(pred, gt, t)) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        mean_pck.push_back(sum / n);
    }

    double area = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        area += (grid[i + 1] - grid[i]) * 0.5 * (mean_pck[i] + mean_pck[i + 1]);
    return area / (grid.back() - grid.front());
}

// ---------------------------------------------------------------------------
// Candidate-stream evaluation (the `evaluate` subcommand)
// ---------------------------------------------------------------------------

struct EvalReport {
    double precision_50 = 0.0;
    double recall_50 = 0.0;
    double precision_75 = 0.0;
    double recall_75 = 0.0;
    std::optional<double> pose_auc;
    std::int64_t matched_pose_pairs = 0;
    std::int64_t unmatched_gt = 0;
    PRCurve pr_50;
    PRCurve pr_75;
};

inline std::vector<double> default_conf_grid(int steps = 50) {
    std::vector<double> grid;
    for (int i = 0; i <= steps; ++i) grid.push_back(static_cast<double>(i) / steps);
    return grid;
}

// Aligns two candidate streams by frame id (union of frames, the missing
// side contributing an empty list), computes detection precision/recall
// at IoU 0.5 and 0.75 over all predictions, confidence sweeps for the PR
// curves, and pose AUC over pairs matched at IoU 0.5.
inline EvalReport evaluate_candidates(const std::vector<FrameCandidates>& pred_frames,
                                      const std::vector<FrameCandidates>& gt_frames,
                                      const std::vector<double>& conf_grid = default_conf_grid(),
                                      const std::vector<double>& auc_grid = default_auc_grid()) {
    std::map<std::int64_t, std::pair<const FrameCandidates*, const FrameCandidates*>> by_id;
    for (const auto& f : pred_frames) by_id[f.frame_id].first = &f;
    for (const auto& f : gt_frames) by_id[f.frame_id].second = &f;

    std::vector<std::vector<BBox>> preds, gts;
    std::vector<std::pair<HandPose, HandPose>> pose_pairs;
    std::int64_t unmatched_gt = 0;
    for (const auto& [fid, pair] : by_id) {
        std::vector<BBox> p, g;
        std::vector<const HandPose*> p_pose, g_pose;
        if (pair.first) {
            for (const Detection& d : pair.first->detections) {
                p.push_back(d.bbox);
                p_pose.push_back(d.pose ? &*d.pose : nullptr);
            }
        }
        if (pair.second) {
            for (const Detection& d : pair.second->detections) {
                g.push_back(d.bbox);
                g_pose.push_back(d.pose ? &*d.pose : nullptr);
            }
        }
        MatchResult match = match_detections(p, g, 0.5);
        for (std::size_t i = 0; i < match.preds.size(); ++i) {
            const int gi = match.preds[i].gt_index;
            if (gi < 0) continue;
            if (p_pose[i] && g_pose[static_cast<std::size_t>(gi)])
                pose_pairs.emplace_back(*p_pose[i], *g_pose[static_cast<std::size_t>(gi)]);
        }
        for (bool covered : match.gt_covered)
            if (!covered) ++unmatched_gt;
        preds.push_back(std::move(p));
        gts.push_back(std::move(g));
    }

    EvalReport report;
    const std::vector<double> all{0.0};
    PRCurve headline_50 = precision_recall(preds, gts, 0.50, all);
    PRCurve headline_75 = precision_recall(preds, gts, 0.75, all);
    report.precision_50 = headline_50.points.front().precision;
    report.recall_50 = headline_50.points.front().recall;
    report.precision_75 = headline_75.points.front().precision;
    report.recall_75 = headline_75.points.front().recall;
    report.pr_50 = precision_recall(preds, gts, 0.50, conf_grid);
    report.pr_75 = precision_recall(preds, gts, 0.75, conf_grid);
    report.matched_pose_pairs = static_cast<std::int64_t>(pose_pairs.size());
    report.unmatched_gt = unmatched_gt;
    if (!pose_pairs.empty()) report.pose_auc = auc(pose_pairs, auc_grid);
    return report;
}

}  // namespace handforge
