#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "handforge/dataset_io.hpp"
#include "handforge/synth.hpp"
#include "test_util.hpp"

using namespace handforge;
using Catch::Approx;
using testutil::TempDir;

namespace {

std::vector<FrameCandidates> messy_frames(std::uint64_t seed) {
    testutil::Rng rng(seed);
    std::vector<FrameCandidates> frames;
    for (int f = 0; f < 25; ++f) {
        FrameCandidates frame = testutil::random_frame(rng, f);
        for (auto& det : frame.detections) {
            if (det.pose && rng.uniform() < 0.3) {
                auto& kp = det.pose->keypoints[static_cast<int>(rng.uniform(0, 20.99))];
                kp.interpolated = kp.valid;
            }
            if (rng.uniform() < 0.2) det.interpolated = true;
        }
        frames.push_back(frame);
    }
    return frames;
}

}  // namespace

TEST_CASE("candidate streams survive a write/read round trip unchanged") {
    TempDir tmp("io-roundtrip");
    const auto frames = messy_frames(1234);
    const auto path = tmp.path / "candidates.jsonl";
    write_candidates(frames, path);
    ReadResult back = read_candidates(path);
    CHECK(back.malformed_lines == 0);
    REQUIRE(back.frames == frames);
}

TEST_CASE("an empty candidate file reads as an empty sequence") {
    TempDir tmp("io-empty");
    const auto path = tmp.path / "empty.jsonl";
    std::ofstream(path).close();
    ReadResult result = read_candidates(path);
    CHECK(result.frames.empty());
    CHECK(result.malformed_lines == 0);
}

TEST_CASE("a 20-keypoint record is a hard error naming the frame") {
    TempDir tmp("io-badkp");
    const auto path = tmp.path / "bad.jsonl";
    {
        std::ofstream out(path);
        out << R"({"frame_id":7,"timestamp_ms":0,"image":{"width":64,"height":64,"path":"x"},)"
            << R"("detections":[{"bbox":[1,1,10,10],"score":0.5,"keypoints":[)";
        for (int i = 0; i < 20; ++i) out << (i ? "," : "") << "[1,1,0.5]";
        out << "]}]}\n";
    }
    try {
        read_candidates(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("7") != std::string::npos);
        CHECK(std::string(e.what()).find("21") != std::string::npos);
    }
}

TEST_CASE("duplicate and non-monotonic frame ids are hard errors") {
    TempDir tmp("io-order");
    const auto path = tmp.path / "dup.jsonl";
    const char* frame0 =
        R"({"frame_id":3,"timestamp_ms":0,"image":{"width":64,"height":64,"path":"x"},"detections":[]})";
    {
        std::ofstream out(path);
        out << frame0 << "\n" << frame0 << "\n";
    }
    CHECK_THROWS_AS(read_candidates(path), IoError);
    {
        std::ofstream out(path);
        out << frame0 << "\n"
            << R"({"frame_id":1,"timestamp_ms":0,"image":{"width":64,"height":64,"path":"x"},"detections":[]})"
            << "\n";
    }
    CHECK_THROWS_AS(read_candidates(path), IoError);
}

TEST_CASE("unparseable lines are skipped and counted") {
    TempDir tmp("io-garbage");
    const auto path = tmp.path / "garbage.jsonl";
    {
        std::ofstream out(path);
        out << "this is not json\n"
            << R"({"frame_id":0,"timestamp_ms":0,"image":{"width":64,"height":64,"path":"x"},"detections":[]})"
            << "\n"
            << "[1,2,3]\n";
    }
    ReadResult result = read_candidates(path);
    CHECK(result.malformed_lines == 2);
    REQUIRE(result.frames.size() == 1);
}

TEST_CASE("parse_config reproduces the shipped parameter rows exactly") {
    ParsedConfig hanco = parse_config(std::string(HF_CONFIG_DIR) + "/hanco.cfg");
    CHECK(hanco.filter.s_bone == 50.0);
    CHECK(hanco.filter.s_area_max == 0.75);
    CHECK(hanco.filter.s_area_min == 0.15);
    CHECK(hanco.filter.s_count == 1);
    CHECK(hanco.filter.t_vmax == 25.0);
    CHECK(hanco.filter.c_hd == 0.9);
    CHECK(hanco.filter.c_pe == 0.2);
    CHECK(!hanco.loop.has_value());

    ParsedConfig assembly = parse_config(std::string(HF_CONFIG_DIR) + "/assembly.cfg");
    CHECK(assembly.filter.s_bone == 80.0);
    CHECK(assembly.filter.s_area_max == 0.80);
    CHECK(assembly.filter.s_area_min == 0.05);
    CHECK(assembly.filter.s_count == 2);
    CHECK(assembly.filter.t_vmax == 45.0);
}

TEST_CASE("config validation names the offending key") {
    TempDir tmp("cfg");
    const auto path = tmp.path / "bad.cfg";
    {
        std::ofstream out(path);
        out << "s_bone = 50\ns_area_max = 0.5\ns_area_min = 0.9\n"
            << "s_count = 1\nt_vmax = 25\nc_hd = 0.9\nc_pe = 0.2\n";
    }
    CHECK_THROWS_AS(parse_config(path), ConfigError);

    const auto missing = tmp.path / "missing.cfg";
    {
        std::ofstream out(missing);
        out << "s_bone = 50\ns_area_max = 0.75\ns_area_min = 0.15\n"
            << "s_count = 1\nt_vmax = 25\nc_hd = 0.9\n";  // no c_pe
    }
    try {
        parse_config(missing);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("c_pe") != std::string::npos);
    }

    const auto unknown = tmp.path / "unknown.cfg";
    {
        std::ofstream out(unknown);
        out << "s_bonez = 50\n";
    }
    CHECK_THROWS_AS(parse_config(unknown), ConfigError);
}

TEST_CASE("bone ratio overrides land in the table and are validated") {
    TempDir tmp("cfg-ratio");
    const auto path = tmp.path / "ratio.cfg";
    {
        std::ofstream out(path);
        out << "s_bone = 50\ns_area_max = 0.75\ns_area_min = 0.15\n"
            << "s_count = 1\nt_vmax = 25\nc_hd = 0.9\nc_pe = 0.2\n"
            << "bone_ratios.0-9 = 1.4\n";
    }
    ParsedConfig cfg = parse_config(path);
    CHECK(cfg.filter.bone_ratios.at({0, 9}) == 1.4);

    {
        std::ofstream out(path);
        out << "s_bone = 50\ns_area_max = 0.75\ns_area_min = 0.15\n"
            << "s_count = 1\nt_vmax = 25\nc_hd = 0.9\nc_pe = 0.2\n"
            << "bone_ratios.5-6 = 1.2\n";  // reference bone must stay 1.0
    }
    CHECK_THROWS_AS(parse_config(path), ConfigError);
}

TEST_CASE("configs survive a write/parse round trip") {
    TempDir tmp("cfg-roundtrip");
    FilterConfig cfg;
    cfg.s_bone = 63.25;
    cfg.s_area_max = 0.8125;
    cfg.s_area_min = 0.0625;
    cfg.s_count = 2;
    cfg.t_vmax = 31.5;
    cfg.c_hd = 0.87;
    cfg.c_pe = 0.13;
    cfg.slack = 1.21;
    cfg.bone_ratios[{0, 9}] = 2.17;
    const auto path = tmp.path / "cfg.cfg";
    write_config(cfg, path);
    ParsedConfig back = parse_config(path);
    REQUIRE(back.filter == cfg);
}

TEST_CASE("emit_datasets writes valid empty datasets for zero kept frames") {
    TempDir tmp("emit-empty");
    EmitResult result = emit_datasets({}, tmp.path, FilterConfig{});
    std::ifstream det(result.detection_dataset);
    json dj;
    det >> dj;
    CHECK(dj.at("images").empty());
    CHECK(dj.at("annotations").empty());
    REQUIRE(dj.at("categories").size() == 1);
    CHECK(dj.at("categories")[0].at("name") == "hand");
    std::ifstream pose(result.pose_dataset);
    json pj;
    pose >> pj;
    CHECK(pj.at("annotations").empty());
    CHECK(result.manifest.counts.frames_kept == 0);
}

TEST_CASE("emit_datasets maps one full pose to one annotation pair") {
    TempDir tmp("emit-one");
    FrameCandidates frame = testutil::empty_frame(4);
    Detection det;
    det.pose = testutil::uniform_pose(100.0, 120.0, 0.9);
    det.bbox = {60, 80, 140, 160, 0.95};
    frame.detections.push_back(det);

    EmitResult result = emit_datasets({frame}, tmp.path, FilterConfig{});
    std::ifstream in(result.pose_dataset);
    json pj;
    in >> pj;
    REQUIRE(pj.at("annotations").size() == 1);
    const json& ann = pj.at("annotations")[0];
    CHECK(ann.at("num_keypoints") == 21);
    REQUIRE(ann.at("keypoints").size() == 63);
    CHECK(ann.at("keypoints")[2] == 2);  // observed
    CHECK(ann.at("bbox")[2].get<double>() == Approx(80.0));   // width
    CHECK(ann.at("bbox")[3].get<double>() == Approx(80.0));   // height
    CHECK(ann.at("image_id") == pj.at("images")[0].at("id"));

    std::ifstream din(result.detection_dataset);
    json dj;
    din >> dj;
    REQUIRE(dj.at("annotations").size() == 1);
    CHECK(result.manifest.counts.detections_kept == 1);
    CHECK(result.manifest.counts.keypoints_observed == 21);
}

TEST_CASE("interpolated keypoints carry v=1, observed v=2") {
    TempDir tmp("emit-vflag");
    FrameCandidates frame = testutil::empty_frame(0);
    Detection det;
    det.pose = testutil::uniform_pose(100.0, 120.0, 0.9);
    for (int k : {2, 9, 17}) det.pose->keypoints[k].interpolated = true;
    det.bbox = {60, 80, 140, 160, 0.95};
    frame.detections.push_back(det);

    EmitResult result = emit_datasets({frame}, tmp.path, FilterConfig{});
    std::ifstream in(result.pose_dataset);
    json pj;
    in >> pj;
    const json& kps = pj.at("annotations")[0].at("keypoints");
    for (int k = 0; k < kKeypointCount; ++k) {
        const int v = kps[3 * k + 2].get<int>();
        if (k == 2 || k == 9 || k == 17)
            CHECK(v == 1);
        else
            CHECK(v == 2);
    }
    CHECK(pj.at("annotations")[0].at("num_keypoints") == 21);
    CHECK(result.manifest.counts.keypoints_interpolated == 3);
    CHECK(result.manifest.counts.keypoints_observed == 18);
}

TEST_CASE("dataset annotation counts agree with the manifest") {
    TempDir tmp("emit-counts");
    auto frames = messy_frames(777);
    EmitResult result = emit_datasets(frames, tmp.path, FilterConfig{});
    std::ifstream din(result.detection_dataset), pin(result.pose_dataset);
    json dj, pj;
    din >> dj;
    pin >> pj;
    CHECK(dj.at("annotations").size() == pj.at("annotations").size());
    CHECK(static_cast<std::int64_t>(dj.at("annotations").size()) ==
          result.manifest.counts.detections_kept);
    // referenced image ids exist and boxes are positive
    std::set<std::int64_t> image_ids;
    for (const json& img : dj.at("images")) image_ids.insert(img.at("id").get<std::int64_t>());
    for (const json& ann : dj.at("annotations")) {
        CHECK(image_ids.count(ann.at("image_id").get<std::int64_t>()) == 1);
        CHECK(ann.at("bbox")[2].get<double>() > 0.0);
        CHECK(ann.at("bbox")[3].get<double>() > 0.0);
    }
}

TEST_CASE("emit_datasets refuses to clobber a manifest unless forced") {
    TempDir tmp("emit-force");
    emit_datasets({}, tmp.path, FilterConfig{});
    CHECK_THROWS_AS(emit_datasets({}, tmp.path, FilterConfig{}), IoError);
    CHECK_NOTHROW(emit_datasets({}, tmp.path, FilterConfig{}, nullptr, {}, true));
    ::setenv("HANDFORGE_FORCE", "1", 1);
    CHECK_NOTHROW(emit_datasets({}, tmp.path, FilterConfig{}));
    ::unsetenv("HANDFORGE_FORCE");
}

TEST_CASE("manifests round trip through json") {
    TempDir tmp("manifest");
    Manifest m;
    m.counts = {100, 80, 80, 1500, 60};
    m.rejections = {{"bone-too-long", 12}, {"frame-undercount", 8}};
    m.config.s_count = 2;
    const auto path = tmp.path / "manifest.json";
    write_manifest(m, path);
    Manifest back = read_manifest(path);
    CHECK(back.counts == m.counts);
    CHECK(back.rejections == m.rejections);
    CHECK(back.config == m.config);
    CHECK(back.negatives == "dropped-frames-excluded");
}

TEST_CASE("serialized coordinates drift less than 1e-6 px") {
    TempDir tmp("io-precision");
    auto scene = synth::SceneSpec{};
    scene.n_frames = 5;
    scene.motion = synth::Motion::Linear;
    scene.velocity_x = 1.7320508075688772;  // irrational-ish drift
    auto frames = synth::generate(scene);
    const auto path = tmp.path / "precise.jsonl";
    write_candidates(frames, path);
    auto back = read_candidates(path).frames;
    REQUIRE(back.size() == frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) {
        for (std::size_t d = 0; d < frames[f].detections.size(); ++d) {
            const auto& a = frames[f].detections[d];
            const auto& b = back[f].detections[d];
            CHECK(std::abs(a.bbox.x1 - b.bbox.x1) < 1e-6);
            for (int k = 0; k < kKeypointCount; ++k) {
                CHECK(std::abs(a.pose->keypoints[k].x - b.pose->keypoints[k].x) < 1e-6);
                CHECK(std::abs(a.pose->keypoints[k].y - b.pose->keypoints[k].y) < 1e-6);
            }
        }
    }
}
