#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "handforge/metrics.hpp"
#include "handforge/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace handforge;
using Catch::Approx;

TEST_CASE("exact predictions match every ground truth at IoU 1") {
    std::vector<BBox> boxes = {{0, 0, 10, 10, 0.9}, {20, 20, 40, 40, 0.8}};
    MatchResult result = match_detections(boxes, boxes, 0.5);
    REQUIRE(result.true_positives() == 2);
    for (const auto& p : result.preds) CHECK(p.iou == 1.0);
    for (bool covered : result.gt_covered) CHECK(covered);
}

TEST_CASE("no predictions leaves every ground truth uncovered") {
    std::vector<BBox> gts = {{0, 0, 10, 10, 1.0}};
    MatchResult result = match_detections({}, gts, 0.5);
    CHECK(result.true_positives() == 0);
    CHECK(!result.gt_covered[0]);
}

TEST_CASE("matching is one-to-one") {
    // two predictions over one ground truth: only the more confident matches
    std::vector<BBox> preds = {{0, 0, 10, 10, 0.7}, {1, 0, 11, 10, 0.9}};
    std::vector<BBox> gts = {{0, 0, 10, 10, 1.0}};
    MatchResult result = match_detections(preds, gts, 0.5);
    CHECK(result.true_positives() == 1);
    CHECK(result.preds[1].gt_index == 0);  // higher confidence wins
    CHECK(result.preds[0].gt_index == -1);
}

TEST_CASE("crossing boxes match like the exhaustive optimal assignment") {
    // two overlapping hands mid-crossing
    std::vector<BBox> gts = {{100, 100, 200, 200, 1.0}, {150, 100, 250, 200, 1.0}};
    std::vector<BBox> preds = {{105, 100, 205, 200, 0.95}, {148, 100, 248, 200, 0.9}};
    MatchResult got = match_detections(preds, gts, 0.5);
    auto best = oracle::optimal_assignment(preds, gts, 0.5);
    REQUIRE(got.true_positives() == best.matches);
    for (std::size_t i = 0; i < preds.size(); ++i)
        CHECK(got.preds[i].gt_index == best.assignment[i]);
}

TEST_CASE("greedy matching equals the optimal assignment on random small scenes") {
    testutil::Rng rng(31415);
    int checked = 0;
    for (int i = 0; i < 500; ++i) {
        // ground truth boxes plus detector-style noisy predictions
        std::vector<BBox> gts, preds;
        const int n = 1 + static_cast<int>(rng.uniform(0.0, 3.99));
        for (int g = 0; g < n; ++g) {
            const BBox gt = testutil::random_box(rng);
            gts.push_back(gt);
            if (rng.uniform() < 0.85) {
                BBox p = gt;
                const double jx = rng.uniform(-8.0, 8.0), jy = rng.uniform(-8.0, 8.0);
                p.x1 += jx;
                p.x2 += jx;
                p.y1 += jy;
                p.y2 += jy;
                p.score = rng.uniform(0.2, 1.0);
                preds.push_back(p);
            }
        }
        if (rng.uniform() < 0.4) preds.push_back(testutil::random_box(rng));
        MatchResult got = match_detections(preds, gts, 0.5);
        auto best = oracle::optimal_assignment(preds, gts, 0.5);
        REQUIRE(got.true_positives() == best.matches);
        ++checked;
    }
    REQUIRE(checked == 500);
}

TEST_CASE("perfect predictions give precision and recall 1 at every threshold") {
    std::vector<std::vector<BBox>> frames = {{{0, 0, 10, 10, 0.9}},
                                             {{5, 5, 25, 25, 0.7}, {60, 60, 90, 90, 0.6}}};
    PRCurve curve = precision_recall(frames, frames, 0.5, {0.0, 0.3, 0.6});
    for (const auto& p : curve.points) {
        CHECK(p.precision == 1.0);
        CHECK(p.recall == 1.0);
    }
}

TEST_CASE("zero predictions give precision 1 and recall 0") {
    std::vector<std::vector<BBox>> preds = {{}};
    std::vector<std::vector<BBox>> gts = {{{0, 0, 10, 10, 1.0}}};
    PRCurve curve = precision_recall(preds, gts, 0.5, {0.0});
    CHECK(curve.points[0].precision == 1.0);
    CHECK(curve.points[0].recall == 0.0);
}

TEST_CASE("precision_recall equals the exhaustive counting oracle") {
    testutil::Rng rng(2718);
    std::vector<std::vector<BBox>> preds, gts;
    for (int f = 0; f < 40; ++f) {
        std::vector<BBox> p, g;
        const int n = static_cast<int>(rng.uniform(0.0, 9.99));
        for (int i = 0; i < n; ++i) g.push_back(testutil::random_box(rng));
        const int m = static_cast<int>(rng.uniform(0.0, 9.99));
        for (int i = 0; i < m; ++i) {
            if (!g.empty() && rng.uniform() < 0.7) {
                BBox noisy = g[static_cast<std::size_t>(rng.uniform(0.0, g.size() - 0.01))];
                noisy.x1 += rng.uniform(-6, 6);
                noisy.x2 += rng.uniform(-6, 6);
                noisy.y1 += rng.uniform(-6, 6);
                noisy.y2 += rng.uniform(-6, 6);
                if (noisy.x1 >= noisy.x2) noisy.x2 = noisy.x1 + 1;
                if (noisy.y1 >= noisy.y2) noisy.y2 = noisy.y1 + 1;
                noisy.score = rng.uniform(0.0, 1.0);
                p.push_back(noisy);
            } else {
                p.push_back(testutil::random_box(rng));
            }
        }
        preds.push_back(p);
        gts.push_back(g);
    }

    const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 0.9};
    PRCurve curve = precision_recall(preds, gts, 0.5, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto counts = oracle::count_pr(preds, gts, 0.5, grid[i]);
        const double precision =
            counts.tp + counts.fp > 0
                ? static_cast<double>(counts.tp) / (counts.tp + counts.fp)
                : 1.0;
        const double recall =
            counts.tp + counts.fn > 0
                ? static_cast<double>(counts.tp) / (counts.tp + counts.fn)
                : 1.0;
        REQUIRE(curve.points[i].precision == precision);
        REQUIRE(curve.points[i].recall == recall);
    }
}

TEST_CASE("recall never grows as the confidence threshold rises") {
    testutil::Rng rng(55);
    std::vector<std::vector<BBox>> preds, gts;
    for (int f = 0; f < 30; ++f) {
        std::vector<BBox> p, g;
        for (int i = 0; i < 5; ++i) g.push_back(testutil::random_box(rng));
        for (int i = 0; i < 6; ++i) p.push_back(testutil::random_box(rng));
        preds.push_back(p);
        gts.push_back(g);
    }
    PRCurve curve = precision_recall(preds, gts, 0.3, default_conf_grid(20));
    for (std::size_t i = 1; i < curve.points.size(); ++i)
        REQUIRE(curve.points[i].recall <= curve.points[i - 1].recall + 1e-12);
}

namespace {

HandPose offset_pose(const HandPose& gt, double dx, double dy) {
    HandPose out = gt;
    for (auto& kp : out.keypoints) {
        kp.x += dx;
        kp.y += dy;
    }
    return out;
}

HandPose sample_gt() {
    synth::SceneSpec scene;
    scene.n_frames = 1;
    auto frames = synth::generate(scene);
    return *frames[0].detections[0].pose;
}

}  // namespace

TEST_CASE("pck examples") {
    const HandPose gt = sample_gt();
    CHECK(*pck(gt, gt, 0.05) == 1.0);

    // move every prediction farther than the whole diagonal
    const HandPose far = offset_pose(gt, 2000.0, 2000.0);
    CHECK(*pck(far, gt, 1.0) == 0.0);

    // exactly 7 of 21 keypoints inside the radius
    HandPose mixed = gt;
    for (int k = 7; k < kKeypointCount; ++k) {
        mixed.keypoints[k].x += 5000.0;
        mixed.keypoints[k].y += 5000.0;
    }
    CHECK(*pck(mixed, gt, 0.5) == Approx(7.0 / 21.0));

    HandPose empty_gt;
    CHECK(!pck(gt, empty_gt, 0.5).has_value());
}

TEST_CASE("pck equals the direct-count oracle and is scale invariant") {
    testutil::Rng rng(808);
    const HandPose gt = sample_gt();
    for (int i = 0; i < 200; ++i) {
        HandPose pred = gt;
        for (auto& kp : pred.keypoints) {
            kp.x += rng.uniform(-60.0, 60.0);
            kp.y += rng.uniform(-60.0, 60.0);
            if (rng.uniform() < 0.1) kp.valid = false;
        }
        const double t = rng.uniform(0.01, 1.0);
        auto got = pck(pred, gt, t);
        auto expected = oracle::pck_reference(pred, gt, t);
        REQUIRE(got.has_value() == expected.has_value());
        REQUIRE(*got == *expected);

        // common scaling of both poses leaves the value unchanged
        HandPose gt_scaled = gt, pred_scaled = pred;
        const double s = rng.uniform(0.2, 5.0);
        for (int k = 0; k < kKeypointCount; ++k) {
            gt_scaled.keypoints[k].x *= s;
            gt_scaled.keypoints[k].y *= s;
            pred_scaled.keypoints[k].x *= s;
            pred_scaled.keypoints[k].y *= s;
        }
        REQUIRE(*pck(pred_scaled, gt_scaled, t) == Approx(*got).margin(1e-12));
    }
}

TEST_CASE("pck never decreases as the threshold grows") {
    testutil::Rng rng(616);
    const HandPose gt = sample_gt();
    for (int i = 0; i < 50; ++i) {
        HandPose pred = gt;
        for (auto& kp : pred.keypoints) {
            kp.x += rng.uniform(-70.0, 70.0);
            kp.y += rng.uniform(-70.0, 70.0);
        }
        double prev = 0.0;
        for (double t : default_auc_grid(20, 1.0)) {
            const double v = *pck(pred, gt, t);
            REQUIRE(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("auc endpoints: perfect 1, maximally wrong 0") {
    const HandPose gt = sample_gt();
    std::vector<std::pair<HandPose, HandPose>> perfect = {{gt, gt}};
    CHECK(*auc(perfect, default_auc_grid()) == 1.0);
    std::vector<std::pair<HandPose, HandPose>> wrong = {
        {offset_pose(gt, 5000.0, 5000.0), gt}};
    CHECK(*auc(wrong, default_auc_grid()) == 0.0);
}

TEST_CASE("auc matches the analytic value for fixed offsets") {
    // Each predicted keypoint sits exactly d away from its ground truth, so
    // the PCK curve is a step at d / diagonal and the AUC has a closed form.
    const HandPose gt = sample_gt();
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    for (const auto& kp : gt.keypoints) {
        min_x = std::min(min_x, kp.x);
        min_y = std::min(min_y, kp.y);
        max_x = std::max(max_x, kp.x);
        max_y = std::max(max_y, kp.y);
    }
    const double diag = std::hypot(max_x - min_x, max_y - min_y);

    testutil::Rng rng(4242);
    const auto grid = default_auc_grid();  // 50 steps over (0, 0.5]
    for (int i = 0; i < 1000; ++i) {
        const double d = rng.uniform(0.0, 0.6) * diag;
        const double theta = rng.uniform(0.0, 6.283185307179586);
        std::vector<std::pair<HandPose, HandPose>> pairs = {
            {offset_pose(gt, d * std::cos(theta), d * std::sin(theta)), gt}};
        const double got = *auc(pairs, grid);

        // analytic trapezoid of the unit step at d/diag over the same grid
        const double ratio = d / diag;
        double area = 0.0;
        for (std::size_t s = 0; s + 1 < grid.size(); ++s) {
            const double a = grid[s] >= ratio ? 1.0 : 0.0;
            const double b = grid[s + 1] >= ratio ? 1.0 : 0.0;
            area += (grid[s + 1] - grid[s]) * 0.5 * (a + b);
        }
        const double expected = area / (grid.back() - grid.front());
        REQUIRE(got == Approx(expected).margin(0.02));
    }
}

TEST_CASE("auc agrees with the reference implementation on random pairs") {
    testutil::Rng rng(9090);
    const HandPose gt = sample_gt();
    std::vector<std::pair<HandPose, HandPose>> pairs;
    for (int i = 0; i < 50; ++i) {
        HandPose pred = gt;
        for (auto& kp : pred.keypoints) {
            kp.x += rng.uniform(-80.0, 80.0);
            kp.y += rng.uniform(-80.0, 80.0);
        }
        pairs.push_back({pred, gt});
    }
    const auto grid = default_auc_grid();
    REQUIRE(*auc(pairs, grid) == Approx(*oracle::auc_reference(pairs, grid)).margin(1e-12));
}

TEST_CASE("evaluate_candidates aligns frames and reports both IoU levels") {
    synth::SceneSpec scene;
    scene.n_frames = 30;
    scene.motion = synth::Motion::Linear;
    scene.velocity_x = 1.0;
    auto truth = synth::generate(scene);
    synth::CorruptionSpec corruption;
    corruption.keypoint_jitter_sigma = 1.0;
    corruption.false_detection_rate = 0.3;
    auto corrupted = synth::corrupt(truth, corruption, scene.seed);

    EvalReport report = evaluate_candidates(corrupted.frames, truth);
    CHECK(report.precision_50 <= 1.0);
    CHECK(report.recall_50 == 1.0);  // no dropouts: every gt is found
    CHECK(report.precision_75 <= report.precision_50 + 1e-12);
    CHECK(report.matched_pose_pairs == 30);
    REQUIRE(report.pose_auc.has_value());
    CHECK(*report.pose_auc > 0.5);  // tiny jitter: poses land close
    CHECK(report.pr_50.points.size() == default_conf_grid().size());
}
