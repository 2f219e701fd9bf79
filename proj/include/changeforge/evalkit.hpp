#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "changeforge/acd.hpp"
#include "changeforge/errors.hpp"
#include "changeforge/format.hpp"
#include "changeforge/raster.hpp"

namespace changeforge {

/// |X ∩ Y| / |X| over pixel index sets on the same grid.
inline double robust_ratio(const DetectionSet& original, const DetectionSet& transformed) {
    if (original.height != transformed.height || original.width != transformed.width)
        throw data_error("detection sets cover different grids");
    if (original.pixels.empty())
        throw numeric_error("robust ratio undefined: original detection set is empty");
    std::vector<std::pair<int, int>> inter;
    inter.reserve(std::min(original.pixels.size(), transformed.pixels.size()));
    std::set_intersection(original.pixels.begin(), original.pixels.end(),
                          transformed.pixels.begin(), transformed.pixels.end(),
                          std::back_inserter(inter));
    return static_cast<double>(inter.size()) / static_cast<double>(original.pixels.size());
}

struct RobustnessCurve {
    struct Sample {
        double percentile = 0;
        double threshold = 0; // threshold applied to the original map
        std::optional<double> ratio; // empty when |X| = 0 at this percentile
    };
    std::string original_name;
    std::string transformed_name;
    std::vector<Sample> samples;
};

/// Fig.-4-style sweep: 0,5,...,95.
inline std::vector<double> default_percentile_grid() {
    std::vector<double> out;
    for (int p = 0; p < 100; p += 5) out.push_back(static_cast<double>(p));
    return out;
}

/// Threshold both maps at each percentile and record the surviving fraction.
/// Rank-matched mode (default) thresholds each map at its own percentile;
/// the absolute variant reuses the original map's threshold value on the
/// transformed map.
inline RobustnessCurve robustness_curve(const AnomalyMap& map_original,
                                        const AnomalyMap& map_transformed,
                                        const std::vector<double>& percentiles,
                                        bool rank_matched = true) {
    map_original.validate();
    map_transformed.validate();
    if (map_original.height != map_transformed.height ||
        map_original.width != map_transformed.width)
        throw data_error("anomaly maps have different extents");
    if (percentiles.empty()) throw config_error("percentile grid is empty");
    for (std::size_t i = 0; i < percentiles.size(); ++i) {
        if (percentiles[i] < 0.0 || percentiles[i] >= 100.0)
            throw config_error("curve percentiles must lie in [0, 100)");
        if (i > 0 && percentiles[i] <= percentiles[i - 1])
            throw config_error("curve percentiles must be strictly increasing");
    }
    RobustnessCurve curve;
    for (double p : percentiles) {
        const DetectionSet x = threshold_map(map_original, p);
        DetectionSet y;
        if (rank_matched) {
            y = threshold_map(map_transformed, p);
        } else {
            y.height = map_transformed.height;
            y.width = map_transformed.width;
            y.percentile = p;
            y.threshold = x.threshold;
            for (int r = 0; r < map_transformed.height; ++r)
                for (int c = 0; c < map_transformed.width; ++c)
                    if (map_transformed.at(r, c) > x.threshold) y.pixels.emplace_back(r, c);
        }
        RobustnessCurve::Sample s;
        s.percentile = p;
        s.threshold = x.threshold;
        if (!x.pixels.empty()) s.ratio = robust_ratio(x, y);
        curve.samples.push_back(s);
    }
    return curve;
}

/// CSV "percentile,threshold,ratio"; undefined ratios leave the field empty.
inline void export_curve(const RobustnessCurve& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw data_error("cannot write curve " + path);
    f << "percentile,threshold,ratio\n";
    for (const auto& s : curve.samples) {
        f << format_double(s.percentile) << ',' << format_double(s.threshold) << ',';
        if (s.ratio) f << format_double(*s.ratio);
        f << '\n';
    }
    if (!f) throw data_error("failed writing curve " + path);
}

inline RobustnessCurve load_curve(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("missing curve " + path);
    std::string line;
    if (!std::getline(f, line) || line != "percentile,threshold,ratio")
        throw data_error("unexpected curve header in " + path);
    RobustnessCurve curve;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw data_error("malformed curve row in " + path + ": " + line);
        RobustnessCurve::Sample s;
        s.percentile = std::stod(line.substr(0, c1));
        s.threshold = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        const std::string ratio = line.substr(c2 + 1);
        if (!ratio.empty()) s.ratio = std::stod(ratio);
        curve.samples.push_back(s);
    }
    return curve;
}

/// PGM mask of where the two detection sets agree: original-only pixels 85,
/// both 170, transformed-only 255, neither 0.
inline void save_detection_diff_pgm(const DetectionSet& original,
                                    const DetectionSet& transformed,
                                    const std::string& path) {
    if (original.height != transformed.height || original.width != transformed.width)
        throw data_error("detection sets cover different grids");
    const int h = original.height, w = original.width;
    std::vector<unsigned char> member(static_cast<std::size_t>(h) * w, 0);
    for (const auto& [r, c] : original.pixels)
        member[static_cast<std::size_t>(r) * w + c] |= 1;
    for (const auto& [r, c] : transformed.pixels)
        member[static_cast<std::size_t>(r) * w + c] |= 2;
    constexpr unsigned char levels[4] = {0, 85, 255, 170};
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot write pgm " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c)
            row[c] = levels[member[static_cast<std::size_t>(r) * w + c]];
        f.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!f) throw data_error("failed writing pgm " + path);
}

} // namespace changeforge
