#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <vector>

#include <changeforge/evalkit.hpp>

#include "oracles.hpp"
#include "testutil.hpp"

using namespace changeforge;
using Catch::Approx;

namespace {

DetectionSet make_set(int h, int w, std::vector<std::pair<int, int>> pixels) {
    DetectionSet s;
    s.height = h;
    s.width = w;
    std::sort(pixels.begin(), pixels.end());
    s.pixels = std::move(pixels);
    return s;
}

AnomalyMap random_map(std::mt19937_64& rng, int h, int w) {
    AnomalyMap m;
    m.height = h;
    m.width = w;
    m.values.resize(static_cast<std::size_t>(h) * w);
    std::uniform_real_distribution<double> dist(0.0, 100.0);
    for (double& v : m.values) v = dist(rng);
    m.provenance = "hacd";
    return m;
}

} // namespace

TEST_CASE("robust ratio basics") {
    const DetectionSet x = make_set(4, 4, {{0, 0}, {1, 2}, {3, 3}});
    SECTION("identical sets") { REQUIRE(robust_ratio(x, x) == 1.0); }
    SECTION("disjoint sets") {
        const DetectionSet y = make_set(4, 4, {{2, 2}, {0, 1}});
        REQUIRE(robust_ratio(x, y) == 0.0);
    }
    SECTION("containment") {
        const DetectionSet y = make_set(4, 4, {{0, 0}, {1, 2}, {3, 3}, {2, 0}});
        REQUIRE(robust_ratio(x, y) == 1.0);
    }
    SECTION("partial overlap") {
        const DetectionSet y = make_set(4, 4, {{0, 0}, {2, 2}});
        REQUIRE(robust_ratio(x, y) == Approx(1.0 / 3.0));
    }
    SECTION("empty original set is undefined") {
        const DetectionSet empty = make_set(4, 4, {});
        REQUIRE_THROWS_AS(robust_ratio(empty, x), numeric_error);
    }
    SECTION("different grids") {
        const DetectionSet other = make_set(5, 4, {{0, 0}});
        REQUIRE_THROWS_AS(robust_ratio(x, other), data_error);
    }
}

TEST_CASE("robust ratio properties over random sets") {
    std::mt19937_64 rng(61);
    std::uniform_int_distribution<int> coin(0, 3);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::pair<int, int>> xs, extra;
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                const int v = coin(rng);
                if (v == 0) xs.emplace_back(r, c);
                else if (v == 1) extra.emplace_back(r, c);
            }
        if (xs.empty()) continue;
        const DetectionSet x = make_set(8, 8, xs);
        REQUIRE(robust_ratio(x, x) == 1.0);

        std::vector<std::pair<int, int>> ys = xs;
        ys.insert(ys.end(), extra.begin(), extra.end());
        REQUIRE(robust_ratio(x, make_set(8, 8, ys)) == 1.0); // containment

        // removing transformed detections never raises the ratio
        std::vector<std::pair<int, int>> fewer = xs;
        fewer.resize(fewer.size() / 2);
        REQUIRE(robust_ratio(x, make_set(8, 8, fewer)) <=
                robust_ratio(x, make_set(8, 8, xs)));
    }
}

TEST_CASE("default percentile grid mirrors the published sweep") {
    const std::vector<double> grid = default_percentile_grid();
    REQUIRE(grid.size() == 20);
    REQUIRE(grid.front() == 0.0);
    REQUIRE(grid.back() == 95.0);
    for (std::size_t i = 1; i < grid.size(); ++i)
        REQUIRE(grid[i] - grid[i - 1] == 5.0);
}

TEST_CASE("identity transform yields a flat ratio of one") {
    std::mt19937_64 rng(62);
    const AnomalyMap map = random_map(rng, 16, 16);
    const RobustnessCurve curve = robustness_curve(map, map, default_percentile_grid());
    REQUIRE(curve.samples.size() == 20);
    for (const auto& s : curve.samples) {
        REQUIRE(s.ratio.has_value());
        REQUIRE(*s.ratio == 1.0);
        REQUIRE(s.threshold ==
                Approx(oracles::sort_percentile(map.values, s.percentile)).margin(1e-9));
    }
}

TEST_CASE("rank matching follows a monotone value shift; absolute mode does not") {
    std::mt19937_64 rng(63);
    const AnomalyMap map = random_map(rng, 12, 12);
    AnomalyMap lifted = map;
    for (double& v : lifted.values) v -= 1000.0; // uniform drop, ranks unchanged

    const std::vector<double> grid{0.0, 50.0, 90.0};
    const RobustnessCurve ranked = robustness_curve(map, lifted, grid, true);
    for (const auto& s : ranked.samples) {
        REQUIRE(s.ratio.has_value());
        REQUIRE(*s.ratio == 1.0);
    }

    // the original map's threshold lies far above every shifted value
    const RobustnessCurve absolute = robustness_curve(map, lifted, grid, false);
    for (const auto& s : absolute.samples) {
        REQUIRE(s.ratio.has_value());
        REQUIRE(*s.ratio == 0.0);
    }
}

TEST_CASE("a permuted map keeps about the expected fraction at the median") {
    std::mt19937_64 rng(64);
    const AnomalyMap map = random_map(rng, 64, 64);
    AnomalyMap permuted = map;
    std::shuffle(permuted.values.begin(), permuted.values.end(), rng);

    const RobustnessCurve curve = robustness_curve(map, permuted, {50.0});
    REQUIRE(curve.samples.size() == 1);
    REQUIRE(curve.samples[0].ratio.has_value());
    // ~binomial(2048, 0.5)/2048: three sigma is about 0.033
    REQUIRE(*curve.samples[0].ratio == Approx(0.5).margin(0.035));
}

TEST_CASE("constant maps leave every ratio undefined") {
    AnomalyMap flat;
    flat.height = 4;
    flat.width = 4;
    flat.values.assign(16, 2.0);
    flat.provenance = "hacd";
    const RobustnessCurve curve = robustness_curve(flat, flat, {0.0, 50.0});
    for (const auto& s : curve.samples) REQUIRE_FALSE(s.ratio.has_value());
}

TEST_CASE("curve csv round-trips, including undefined ratios") {
    testutil::TempDir tmp("evalkit_csv");
    RobustnessCurve curve;
    curve.samples.push_back({0.0, 1.25, 0.875});
    curve.samples.push_back({50.0, 2.5, std::nullopt});
    curve.samples.push_back({95.0, 9.0, 1.0});
    const std::string path = (tmp / "curve.csv").string();
    export_curve(curve, path);

    const std::string text = testutil::slurp(path);
    REQUIRE(text == "percentile,threshold,ratio\n0,1.25,0.875\n50,2.5,\n95,9,1\n");

    const RobustnessCurve back = load_curve(path);
    REQUIRE(back.samples.size() == 3);
    REQUIRE(back.samples[0].ratio == 0.875);
    REQUIRE_FALSE(back.samples[1].ratio.has_value());
    REQUIRE(back.samples[2].threshold == 9.0);
}

TEST_CASE("curve rejects malformed percentile grids") {
    std::mt19937_64 rng(65);
    const AnomalyMap map = random_map(rng, 6, 6);
    REQUIRE_THROWS_AS(robustness_curve(map, map, {}), config_error);
    REQUIRE_THROWS_AS(robustness_curve(map, map, {10.0, 10.0}), config_error);
    REQUIRE_THROWS_AS(robustness_curve(map, map, {50.0, 100.0}), config_error);
    AnomalyMap other = random_map(rng, 6, 7);
    REQUIRE_THROWS_AS(robustness_curve(map, other, {50.0}), data_error);
}

TEST_CASE("detection difference mask uses the documented grey levels") {
    testutil::TempDir tmp("evalkit_pgm");
    const DetectionSet original = make_set(2, 2, {{0, 0}, {0, 1}});
    const DetectionSet transformed = make_set(2, 2, {{0, 1}, {1, 0}});
    const std::string path = (tmp / "diff.pgm").string();
    save_detection_diff_pgm(original, transformed, path);

    const std::string bytes = testutil::slurp(path);
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.substr(0, header.size()) == header);
    const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
    REQUIRE(px[0] == 85);  // original only
    REQUIRE(px[1] == 170); // both
    REQUIRE(px[2] == 255); // transformed only
    REQUIRE(px[3] == 0);   // neither
}
