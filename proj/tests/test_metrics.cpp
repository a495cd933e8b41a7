#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "metric_oracles.hpp"
#include "wsol/metrics.hpp"
#include "wsol/rng.hpp"

using namespace wsol;

namespace {

ScoreMap make_map(int h, int w, std::vector<double> values) {
    ScoreMap m;
    m.h = h;
    m.w = w;
    m.values = std::move(values);
    return m;
}

ScoreMap plateau_map(int h, int w, const Box& box, double inside = 1.0, double outside = 0.0) {
    ScoreMap m = make_map(h, w, std::vector<double>(static_cast<size_t>(h) * w, outside));
    for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) m.values[static_cast<size_t>(y) * w + x] = inside;
    }
    return m;
}

GroundTruth gt_with_box(const Box& box, int label = 0) {
    GroundTruth gt;
    gt.boxes = {box};
    gt.label = label;
    return gt;
}

GroundTruth gt_with_mask(int h, int w, const std::vector<uint8_t>& mask, int label = 0) {
    GroundTruth gt;
    gt.mask = mask;
    gt.label = label;
    return gt;
}

struct RandomFixture {
    std::vector<ScoreMap> maps;
    std::vector<GroundTruth> gts;
};

RandomFixture random_fixture(uint64_t seed, int images, int h, int w, bool quantized) {
    SplitMix64 rng(seed);
    RandomFixture fx;
    for (int i = 0; i < images; ++i) {
        ScoreMap m = make_map(h, w, {});
        m.values.resize(static_cast<size_t>(h) * w);
        for (double& v : m.values) {
            v = quantized ? static_cast<double>(rng.below(6)) / 5.0 : rng.uniform();
        }
        GroundTruth gt;
        gt.mask.resize(m.values.size());
        for (auto& b : gt.mask) b = rng.below(100) < 30 ? 1 : 0;
        const int x0 = (int)rng.below((uint64_t)w - 2), y0 = (int)rng.below((uint64_t)h - 2);
        const int x1 = x0 + 1 + (int)rng.below((uint64_t)(w - x0 - 1));
        const int y1 = y0 + 1 + (int)rng.below((uint64_t)(h - y0 - 1));
        gt.boxes = {Box{x0, y0, x1, y1}};
        gt.label = (int)rng.below(3);
        fx.maps.push_back(std::move(m));
        fx.gts.push_back(std::move(gt));
    }
    return fx;
}

}  // namespace

TEST_CASE("extract_box worked examples") {
    SUBCASE("plateau rectangle comes back exactly") {
        const Box want{2, 1, 5, 4};
        ScoreMap m = plateau_map(8, 8, want);
        CHECK(extract_box(m, 0.5) == want);
    }
    SUBCASE("all-zero map degenerates to the first pixel") {
        ScoreMap m = make_map(3, 3, std::vector<double>(9, 0.0));
        CHECK(extract_box(m, 0.5) == Box{0, 0, 0, 0});
        CHECK(extract_box(m, 0.0) == Box{0, 0, 0, 0});
    }
    SUBCASE("largest of two components wins") {
        ScoreMap m = make_map(8, 8, std::vector<double>(64, 0.0));
        // 3x3 block (9 px) and a separate 2x2 block (4 px)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) m.values[static_cast<size_t>(y) * 8 + x] = 1.0;
        for (int y = 5; y < 7; ++y)
            for (int x = 5; x < 7; ++x) m.values[static_cast<size_t>(y) * 8 + x] = 1.0;
        CHECK(extract_box(m, 0.5) == Box{0, 0, 2, 2});
    }
    SUBCASE("equal-size components: first in scan order wins") {
        ScoreMap m = make_map(4, 4, std::vector<double>(16, 0.0));
        m.values[1] = 1.0;   // (1,0)
        m.values[14] = 1.0;  // (2,3)
        CHECK(extract_box(m, 0.5) == Box{1, 0, 1, 0});
    }
}

TEST_CASE("box iou arithmetic") {
    CHECK(box_iou(Box{0, 0, 3, 3}, Box{0, 0, 3, 3}) == doctest::Approx(1.0));
    CHECK(box_iou(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}) == 0.0);
    // equal 2x4 boxes overlapping on half their area: IoU = 1/3
    CHECK(box_iou(Box{0, 0, 3, 1}, Box{2, 0, 5, 1}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("gt-known localization examples") {
    const Box gt{2, 2, 5, 5};
    SUBCASE("perfect box") {
        CHECK(gt_known_loc({plateau_map(8, 8, gt)}, {gt_with_box(gt)}) == 1.0);
    }
    SUBCASE("disjoint box") {
        CHECK(gt_known_loc({plateau_map(8, 8, Box{0, 0, 1, 1})}, {gt_with_box(Box{4, 4, 7, 7})}) ==
              0.0);
    }
    SUBCASE("half-overlapping equal boxes stay below the threshold") {
        // predicted plateau and gt share half their area: IoU 1/3 < 0.5
        CHECK(gt_known_loc({plateau_map(8, 8, Box{0, 0, 3, 1})},
                           {gt_with_box(Box{2, 0, 5, 1})}) == 0.0);
    }
    SUBCASE("missing boxes raise") {
        GroundTruth gt_mask_only;
        gt_mask_only.mask.assign(64, 0);
        CHECK_THROWS_WITH_AS(gt_known_loc({plateau_map(8, 8, gt)}, {gt_mask_only}),
                             doctest::Contains("boxes"), std::invalid_argument);
    }
}

TEST_CASE("top1 localization requires the right class") {
    const Box gt{2, 2, 5, 5};
    std::vector<ScoreMap> maps{plateau_map(8, 8, gt)};
    std::vector<GroundTruth> gts{gt_with_box(gt, 1)};
    CHECK(top1_loc(maps, gts, {1}) == 1.0);
    CHECK(top1_loc(maps, gts, {0}) == 0.0);
    std::vector<ScoreMap> off{plateau_map(8, 8, Box{0, 0, 1, 1})};
    std::vector<GroundTruth> far{gt_with_box(Box{4, 4, 7, 7}, 1)};
    CHECK(top1_loc(off, far, {1}) == 0.0);
}

TEST_CASE("max box accuracy v2 examples") {
    SUBCASE("perfect plateaus on every image") {
        std::vector<ScoreMap> maps;
        std::vector<GroundTruth> gts;
        for (int i = 0; i < 3; ++i) {
            Box b{i, i, i + 3, i + 3};
            maps.push_back(plateau_map(8, 8, b));
            gts.push_back(gt_with_box(b));
        }
        CHECK(max_box_acc_v2(maps, gts) == doctest::Approx(1.0));
    }
    SUBCASE("all-zero maps degenerate and miss large boxes") {
        std::vector<ScoreMap> maps{make_map(8, 8, std::vector<double>(64, 0.0)),
                                   make_map(8, 8, std::vector<double>(64, 0.0))};
        std::vector<GroundTruth> gts{gt_with_box(Box{0, 0, 5, 5}), gt_with_box(Box{1, 1, 7, 7})};
        CHECK(max_box_acc_v2(maps, gts) == doctest::Approx(0.0));
    }
    SUBCASE("single image whose best box reaches IoU 0.4") {
        // gt covers 10 pixels; the map's only component covers 4 inside it
        ScoreMap m = plateau_map(8, 8, Box{0, 0, 1, 1});
        GroundTruth gt = gt_with_box(Box{0, 0, 1, 4});
        CHECK(box_iou(Box{0, 0, 1, 1}, gt.boxes[0]) == doctest::Approx(0.4));
        CHECK(max_box_acc_v2({m}, {gt}) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
}

TEST_CASE("peak iou examples") {
    SUBCASE("maps identical to masks") {
        std::vector<uint8_t> mask(16, 0);
        for (int i : {5, 6, 9, 10}) mask[(size_t)i] = 1;
        ScoreMap m = make_map(4, 4, {});
        m.values.resize(16);
        for (int i = 0; i < 16; ++i) m.values[(size_t)i] = mask[(size_t)i] ? 1.0 : 0.0;
        CHECK(peak_iou({m}, {gt_with_mask(4, 4, mask)}) == doctest::Approx(1.0));
    }
    SUBCASE("complement maps never intersect") {
        std::vector<uint8_t> mask(16, 0);
        for (int i = 0; i < 6; ++i) mask[(size_t)i] = 1;
        ScoreMap m = make_map(4, 4, {});
        m.values.resize(16);
        for (int i = 0; i < 16; ++i) m.values[(size_t)i] = mask[(size_t)i] ? 0.0 : 1.0;
        CHECK(peak_iou({m}, {gt_with_mask(4, 4, mask)}) == 0.0);
    }
    SUBCASE("2x2 worked instance agrees with the brute-force sweep") {
        // mask {p0,p1}, map [1.0, 0.4, 0.6, 0.0]
        ScoreMap m = make_map(2, 2, {1.0, 0.4, 0.6, 0.0});
        GroundTruth gt = gt_with_mask(2, 2, {1, 1, 0, 0});
        // the tau in (0.4, 0.6] slice: predicted {p0,p2}, inter 1, union 3
        {
            long long inter = 0, uni = 0;
            for (int p = 0; p < 4; ++p) {
                const bool pred = m.values[(size_t)p] > 0.5;
                inter += pred && gt.mask[(size_t)p];
                uni += pred || gt.mask[(size_t)p];
            }
            CHECK(static_cast<double>(inter) / uni == doctest::Approx(1.0 / 3));
        }
        const double got = peak_iou({m}, {gt});
        CHECK(got == doctest::Approx(oracle::piou_brute({m}, {gt})).epsilon(1e-12));
        // the peak is 2/3, reached by predicting {p0, p1, p2}
        CHECK(got == doctest::Approx(2.0 / 3).epsilon(1e-12));
    }
    SUBCASE("missing masks raise") {
        ScoreMap m = make_map(2, 2, {1, 0, 0, 0});
        CHECK_THROWS_WITH_AS(peak_iou({m}, {gt_with_box(Box{0, 0, 1, 1})}),
                             doctest::Contains("mask"), std::invalid_argument);
    }
}

TEST_CASE("pixel average precision examples") {
    SUBCASE("maps identical to binary masks") {
        std::vector<uint8_t> mask(16, 0);
        for (int i : {1, 2, 3}) mask[(size_t)i] = 1;
        ScoreMap m = make_map(4, 4, {});
        m.values.resize(16);
        for (int i = 0; i < 16; ++i) m.values[(size_t)i] = mask[(size_t)i] ? 1.0 : 0.0;
        CHECK(pixel_average_precision({m}, {gt_with_mask(4, 4, mask)}) == doctest::Approx(1.0));
    }
    SUBCASE("constant map scores exactly the prevalence") {
        // 10x10 with 30 positive pixels, map constant 0.5
        std::vector<uint8_t> mask(100, 0);
        for (int i = 0; i < 30; ++i) mask[(size_t)(i * 3)] = 1;
        ScoreMap m = make_map(10, 10, std::vector<double>(100, 0.5));
        const double got = pixel_average_precision({m}, {gt_with_mask(10, 10, mask)});
        CHECK(std::abs(got - 0.30) <= 1e-9);
    }
    SUBCASE("reversed maps equal the brute-force value") {
        SplitMix64 rng(8);
        std::vector<uint8_t> mask(36, 0);
        for (auto& v : mask) v = rng.below(10) < 4 ? 1 : 0;
        mask[0] = 1;
        ScoreMap m = make_map(6, 6, {});
        m.values.resize(36);
        for (int i = 0; i < 36; ++i) m.values[(size_t)i] = mask[(size_t)i] ? 0.0 : 1.0;
        const auto gts = std::vector<GroundTruth>{gt_with_mask(6, 6, mask)};
        CHECK(pixel_average_precision({m}, gts) ==
              doctest::Approx(oracle::pxap_brute({m}, gts)).epsilon(1e-12));
    }
    SUBCASE("no positive pixels raise") {
        ScoreMap m = make_map(2, 2, {0.1, 0.2, 0.3, 0.4});
        CHECK_THROWS_WITH_AS(pixel_average_precision({m}, {gt_with_mask(2, 2, {0, 0, 0, 0})}),
                             doctest::Contains("positive"), std::invalid_argument);
    }
}

TEST_CASE("module metrics equal brute-force reimplementations") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        for (bool quantized : {false, true}) {
            CAPTURE(seed);
            CAPTURE(quantized);
            RandomFixture fx = random_fixture(seed, 6, 6, 7, quantized);
            CHECK(std::abs(peak_iou(fx.maps, fx.gts) - oracle::piou_brute(fx.maps, fx.gts)) <= 1e-9);
            CHECK(std::abs(pixel_average_precision(fx.maps, fx.gts) -
                           oracle::pxap_brute(fx.maps, fx.gts)) <= 1e-9);
            CHECK(std::abs(max_box_acc_v2(fx.maps, fx.gts) -
                           oracle::max_box_acc_brute(fx.maps, fx.gts)) <= 1e-9);
            CHECK(std::abs(gt_known_loc(fx.maps, fx.gts) -
                           oracle::gt_known_brute(fx.maps, fx.gts, 0.5)) <= 1e-9);
        }
    }
}

TEST_CASE("box sweep agrees with fresh extraction at probe thresholds") {
    RandomFixture fx = random_fixture(11, 1, 8, 8, true);
    const ScoreMap& m = fx.maps[0];
    const auto sweep = box_threshold_sweep(m);

    auto lookup = [&](double tau) -> Box {
        // smallest distinct value strictly above tau, else empty foreground
        for (auto it = sweep.rbegin(); it != sweep.rend(); ++it) {
            if (it->first > tau) return it->second;
        }
        return extract_box(m, 1e300);  // degenerate argmax box
    };
    std::vector<double> probes{0.0, 0.05, 0.3, 0.5, 0.77, 1.0, 2.0};
    for (const auto& [v, box] : sweep) probes.push_back(v);
    for (double tau : probes) {
        CAPTURE(tau);
        CHECK(extract_box(m, tau) == lookup(tau));
    }
}

TEST_CASE("metrics are invariant under strictly monotone map transforms") {
    RandomFixture fx = random_fixture(21, 5, 6, 6, false);
    std::vector<ScoreMap> cubed = fx.maps;
    for (auto& m : cubed) {
        for (double& v : m.values) v = v * v * v;
    }
    std::vector<int> predicted;
    for (const auto& gt : fx.gts) predicted.push_back(gt.label);

    CHECK(peak_iou(fx.maps, fx.gts) == peak_iou(cubed, fx.gts));
    CHECK(pixel_average_precision(fx.maps, fx.gts) == pixel_average_precision(cubed, fx.gts));
    CHECK(max_box_acc_v2(fx.maps, fx.gts) == max_box_acc_v2(cubed, fx.gts));
    CHECK(gt_known_loc(fx.maps, fx.gts) == gt_known_loc(cubed, fx.gts));
    CHECK(top1_loc(fx.maps, fx.gts, predicted) == top1_loc(cubed, fx.gts, predicted));
}

TEST_CASE("metrics are invariant under image order permutation") {
    RandomFixture fx = random_fixture(31, 6, 6, 6, false);
    RandomFixture perm = fx;
    const std::vector<size_t> order{3, 0, 5, 1, 4, 2};
    for (size_t i = 0; i < order.size(); ++i) {
        perm.maps[i] = fx.maps[order[i]];
        perm.gts[i] = fx.gts[order[i]];
    }
    CHECK(peak_iou(fx.maps, fx.gts) == doctest::Approx(peak_iou(perm.maps, perm.gts)).epsilon(1e-12));
    CHECK(pixel_average_precision(fx.maps, fx.gts) ==
          doctest::Approx(pixel_average_precision(perm.maps, perm.gts)).epsilon(1e-12));
    CHECK(max_box_acc_v2(fx.maps, fx.gts) ==
          doctest::Approx(max_box_acc_v2(perm.maps, perm.gts)).epsilon(1e-12));
}

TEST_CASE("report serialization") {
    std::vector<EvalReport> reports(2);
    reports[0] = {"cam", "block3", 0.5, 0.625, 0.333, 0.25, 0.6594, 0.01};
    reports[1] = {"bagcams-exact", "block3", 0.7, 0.9401, 0.8488, 0.7451, 0.9038, 0.02};

    const std::string json = reports_to_json(reports, false);
    const auto back = reports_from_json(json);
    REQUIRE(back.size() == 2);
    CHECK(back[0].method == "cam");
    CHECK(back[1].pxap == doctest::Approx(0.9038).epsilon(1e-12));
    CHECK(json.find("seconds") == std::string::npos);

    const std::string csv = reports_to_csv(reports, true);
    CHECK(csv.find("method,layer,t_loc,g_loc,b_loc,piou,pxap,seconds_per_image") == 0);
    CHECK(csv.find("65.94") != std::string::npos);  // x100, two decimals
    CHECK(csv.find("90.38") != std::string::npos);
}
