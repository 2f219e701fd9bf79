#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "changeforge/errors.hpp"
#include "changeforge/format.hpp"
#include "changeforge/parallel.hpp"
#include "changeforge/percentile.hpp"
#include "changeforge/raster.hpp"

namespace changeforge {

/// Gaussian statistics of a before/after pair: per-image means/covariances
/// and the joint covariance of stacked pixels z = [x; y]. The stored K_x and
/// K_y are exactly the diagonal blocks of K_z (pre-shrinkage); factorizations
/// are of the shrunk matrices.
struct GaussianChangeModel {
    int bands = 0;
    Eigen::VectorXd mu_x, mu_y;
    Eigen::MatrixXd k_x, k_y, k_z;
    double shrink_x = 0, shrink_y = 0, shrink_z = 0;
    Eigen::LLT<Eigen::MatrixXd> llt_x, llt_y, llt_z;

    void refactor() {
        auto factor = [](const Eigen::MatrixXd& k, double shrink,
                         Eigen::LLT<Eigen::MatrixXd>& llt, const char* which) {
            Eigen::MatrixXd shrunk = k;
            shrunk.diagonal().array() += shrink;
            llt.compute(shrunk);
            if (llt.info() != Eigen::Success)
                throw numeric_error(std::string("covariance ") + which +
                                    " is not positive definite even after shrinkage");
        };
        factor(k_x, shrink_x, llt_x, "K_x");
        factor(k_y, shrink_y, llt_y, "K_y");
        factor(k_z, shrink_z, llt_z, "K_z");
    }
};

/// Maximum-likelihood fit (divide by N) over the pixels of the stride grid.
/// `shrinkage_scale` sets epsilon = scale * trace(K)/dim(K) per covariance.
inline GaussianChangeModel fit_gaussian(const ImagePair& pair, int sample_stride = 1,
                                        double shrinkage_scale = 1e-6) {
    pair.validate();
    if (sample_stride < 1) throw config_error("sample_stride must be positive");
    if (shrinkage_scale < 0) throw config_error("shrinkage_scale must be nonnegative");
    const int b = pair.before.bands;
    const int d = 2 * b;
    const int h = pair.before.height;
    const int w = pair.before.width;
    std::int64_t count = 0;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd z(d);
    auto fill_z = [&](int r, int c) {
        for (int k = 0; k < b; ++k) {
            z[k] = pair.before.at(k, r, c);
            z[b + k] = pair.after.at(k, r, c);
        }
    };
    for (int r = 0; r < h; r += sample_stride)
        for (int c = 0; c < w; c += sample_stride) {
            fill_z(r, c);
            mu += z;
            ++count;
        }
    if (count <= 2 * b)
        throw data_error("too few sampled pixels (" + std::to_string(count) +
                         ") to fit " + std::to_string(b) + "-band statistics");
    mu /= static_cast<double>(count);
    Eigen::MatrixXd k = Eigen::MatrixXd::Zero(d, d);
    for (int r = 0; r < h; r += sample_stride)
        for (int c = 0; c < w; c += sample_stride) {
            fill_z(r, c);
            z -= mu;
            k.selfadjointView<Eigen::Lower>().rankUpdate(z);
        }
    k /= static_cast<double>(count);
    k.triangularView<Eigen::StrictlyUpper>() = k.transpose();

    GaussianChangeModel m;
    m.bands = b;
    m.mu_x = mu.head(b);
    m.mu_y = mu.tail(b);
    m.k_z = k;
    m.k_x = k.topLeftCorner(b, b);
    m.k_y = k.bottomRightCorner(b, b);
    m.shrink_x = shrinkage_scale * m.k_x.trace() / b;
    m.shrink_y = shrinkage_scale * m.k_y.trace() / b;
    m.shrink_z = shrinkage_scale * m.k_z.trace() / d;
    m.refactor();
    return m;
}

/// Per-pixel anomalousness values plus the provenance that produced them.
struct AnomalyMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::string provenance; // "hacd" or "lcra"
    int radius = 0;

    double at(int r, int c) const {
        return values[static_cast<std::size_t>(r) * width + c];
    }
    void validate() const {
        if (height <= 0 || width <= 0 || values.size() != static_cast<std::size_t>(height) * width)
            throw data_error("anomaly map extents do not match value count");
        for (double v : values)
            if (!std::isfinite(v)) throw numeric_error("non-finite anomaly value");
    }
};

namespace detail {

inline constexpr int kMapRowsPerChunk = 16;

/// Squared Mahalanobis norms of the columns of `dev` under the factored
/// covariance: || L^{-1} dev ||^2 column-wise.
inline Eigen::VectorXd mahalanobis_sq(const Eigen::LLT<Eigen::MatrixXd>& llt,
                                      Eigen::MatrixXd dev) {
    llt.matrixL().solveInPlace(dev);
    return dev.colwise().squaredNorm();
}

/// zeta(x) per pixel for one image against (mu, llt); row-major h*w vector.
inline std::vector<double> image_quadratic(const MultibandImage& img,
                                           const Eigen::VectorXd& mu,
                                           const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const int b = img.bands, h = img.height, w = img.width;
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    const std::size_t n_chunks =
        (static_cast<std::size_t>(h) + kMapRowsPerChunk - 1) / kMapRowsPerChunk;
    parallel_for_chunks(n_chunks, [&](std::size_t chunk) {
        const int r0 = static_cast<int>(chunk) * kMapRowsPerChunk;
        const int r1 = std::min(h, r0 + kMapRowsPerChunk);
        Eigen::MatrixXd dev(b, w);
        for (int r = r0; r < r1; ++r) {
            for (int c = 0; c < w; ++c)
                for (int k = 0; k < b; ++k) dev(k, c) = img.at(k, r, c) - mu[k];
            const Eigen::VectorXd q = mahalanobis_sq(llt, dev);
            for (int c = 0; c < w; ++c) out[static_cast<std::size_t>(r) * w + c] = q[c];
        }
    });
    return out;
}

/// Minimum over the given offsets of A(x(i,j), y(i+di, j+dj)); offsets taking
/// y out of bounds are skipped pixel-wise.
inline AnomalyMap offset_min_map(const ImagePair& pair, const GaussianChangeModel& model,
                                 const std::vector<std::pair<int, int>>& offsets) {
    pair.validate();
    if (pair.before.bands != model.bands)
        throw data_error("pair has " + std::to_string(pair.before.bands) +
                         " bands, model was fit on " + std::to_string(model.bands));
    const int b = model.bands;
    const int h = pair.before.height;
    const int w = pair.before.width;

    const std::vector<double> zeta_x = image_quadratic(pair.before, model.mu_x, model.llt_x);
    const std::vector<double> zeta_y = image_quadratic(pair.after, model.mu_y, model.llt_y);

    AnomalyMap map;
    map.height = h;
    map.width = w;
    map.values.assign(static_cast<std::size_t>(h) * w,
                      std::numeric_limits<double>::infinity());

    const std::size_t n_chunks =
        (static_cast<std::size_t>(h) + kMapRowsPerChunk - 1) / kMapRowsPerChunk;
    parallel_for_chunks(n_chunks, [&](std::size_t chunk) {
        const int r0 = static_cast<int>(chunk) * kMapRowsPerChunk;
        const int r1 = std::min(h, r0 + kMapRowsPerChunk);
        Eigen::MatrixXd dev(2 * b, w);
        for (const auto& [di, dj] : offsets) {
            const int c_lo = std::max(0, -dj);
            const int c_hi = std::min(w, w - dj);
            if (c_lo >= c_hi) continue;
            for (int r = r0; r < r1; ++r) {
                const int yr = r + di;
                if (yr < 0 || yr >= h) continue;
                const int n_cols = c_hi - c_lo;
                for (int c = c_lo; c < c_hi; ++c)
                    for (int k = 0; k < b; ++k) {
                        dev(k, c - c_lo) = pair.before.at(k, r, c) - model.mu_x[k];
                        dev(b + k, c - c_lo) = pair.after.at(k, yr, c + dj) - model.mu_y[k];
                    }
                const Eigen::VectorXd zeta_z =
                    mahalanobis_sq(model.llt_z, dev.leftCols(n_cols));
                for (int c = c_lo; c < c_hi; ++c) {
                    const double a = zeta_z[c - c_lo] -
                                     zeta_x[static_cast<std::size_t>(r) * w + c] -
                                     zeta_y[static_cast<std::size_t>(yr) * w + (c + dj)];
                    double& slot = map.values[static_cast<std::size_t>(r) * w + c];
                    slot = std::min(slot, a);
                }
            }
        }
    });
    for (double v : map.values)
        if (!std::isfinite(v))
            throw numeric_error("anomaly map has pixels with no in-bounds offset");
    return map;
}

} // namespace detail

/// A(x,y) = zeta_z([x;y]) - zeta_x(x) - zeta_y(y).
inline AnomalyMap hacd_map(const ImagePair& pair, const GaussianChangeModel& model) {
    AnomalyMap map = detail::offset_min_map(pair, model, {{0, 0}});
    map.provenance = "hacd";
    map.radius = 0;
    return map;
}

/// Local co-registration adjustment: minimum of A over shifts of the after
/// image within the given radius (the before image stays fixed).
inline AnomalyMap lcra_map(const ImagePair& pair, const GaussianChangeModel& model,
                           int radius) {
    if (radius < 0) throw config_error("lcra radius must be nonnegative");
    std::vector<std::pair<int, int>> offsets;
    for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj) offsets.emplace_back(di, dj);
    AnomalyMap map = detail::offset_min_map(pair, model, offsets);
    map.provenance = radius == 0 ? "hacd" : "lcra";
    map.radius = radius;
    return map;
}

/// Pixels strictly above the map's own percentile threshold.
struct DetectionSet {
    int height = 0;
    int width = 0;
    double percentile = 0;
    double threshold = 0;
    std::vector<std::pair<int, int>> pixels; // row-major order

    std::size_t size() const { return pixels.size(); }
};

inline DetectionSet threshold_map(const AnomalyMap& map, double percentile) {
    map.validate();
    DetectionSet set;
    set.height = map.height;
    set.width = map.width;
    set.percentile = percentile;
    set.threshold = percentile_of(map.values.begin(), map.values.end(), percentile);
    for (int r = 0; r < map.height; ++r)
        for (int c = 0; c < map.width; ++c)
            if (map.at(r, c) > set.threshold) set.pixels.emplace_back(r, c);
    return set;
}

// --- exports --------------------------------------------------------------------

inline MultibandImage anomaly_to_image(const AnomalyMap& map) {
    map.validate();
    MultibandImage img = make_image(1, map.height, map.width);
    for (std::size_t i = 0; i < map.values.size(); ++i)
        img.data[i] = static_cast<float>(map.values[i]);
    return img;
}

inline AnomalyMap anomaly_from_image(const MultibandImage& img) {
    img.validate();
    if (img.bands != 1) throw data_error("anomaly map image must have exactly one band");
    AnomalyMap map;
    map.height = img.height;
    map.width = img.width;
    map.values.assign(img.data.begin(), img.data.end());
    map.provenance = "file";
    return map;
}

inline void save_anomaly_map(const AnomalyMap& map, const std::string& path) {
    save_image(anomaly_to_image(map), path);
}

inline AnomalyMap load_anomaly_map(const std::string& path) {
    return anomaly_from_image(load_image(path));
}

inline void save_anomaly_pgm(const AnomalyMap& map, const std::string& path) {
    map.validate();
    std::vector<float> v(map.values.begin(), map.values.end());
    save_pgm(v, map.height, map.width, path);
}

/// CSV of detections as "row,col,value" in row-major order.
inline void export_detections(const DetectionSet& set, const AnomalyMap& map,
                              const std::string& path) {
    if (set.height != map.height || set.width != map.width)
        throw data_error("detection set and map extents differ");
    std::ofstream f(path);
    if (!f) throw data_error("cannot write detections " + path);
    f << "row,col,value\n";
    for (const auto& [r, c] : set.pixels)
        f << r << ',' << c << ',' << format_double(map.at(r, c)) << '\n';
    if (!f) throw data_error("failed writing detections " + path);
}

} // namespace changeforge
