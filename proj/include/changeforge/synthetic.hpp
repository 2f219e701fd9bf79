#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "changeforge/raster.hpp"
#include "changeforge/rng.hpp"

namespace changeforge {

// Built-in two-domain synthetic corpus. Domain X tiles are smooth random
// plane-wave textures; domain Y applies a "snow" transformation to fresh
// tiles of the same family: 20% salt speckle, then additive offsets of +0.6
// on band 0 and +0.3 on band 2. Tile identity is carried by the wave
// structure, not by absolute levels: instance-normalized generators discard
// per-channel means, so a corpus keyed on random per-tile offsets would make
// cycle reconstruction impossible by construction.

inline constexpr double kSnowBand0Offset = 0.6;
inline constexpr double kSnowBand2Offset = 0.3;
inline constexpr double kSnowSpeckleRate = 0.2;
inline constexpr double kSnowSpeckleLevel = 1.0;

inline MultibandImage synthetic_tile(std::mt19937_64& rng, int height = 32, int width = 32,
                                     int bands = 3) {
    MultibandImage img = make_image(bands, height, width);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 0.01);
    constexpr double two_pi = 6.283185307179586;
    // two plane waves shared by every band, scaled by a per-band gain
    struct Wave {
        double fr, fc, phase, amp;
    } waves[2];
    for (auto& wv : waves) {
        wv.fr = (uni(rng) - 0.5) * 0.3;
        wv.fc = (uni(rng) - 0.5) * 0.3;
        wv.phase = uni(rng) * two_pi;
        wv.amp = 0.06 + 0.06 * uni(rng);
    }
    for (int b = 0; b < bands; ++b) {
        const double base = 0.42 + 0.06 * (b % 3);
        const double gain = 0.8 + 0.4 * uni(rng);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                double v = base;
                for (const auto& wv : waves)
                    v += gain * wv.amp * std::cos(two_pi * (wv.fr * r + wv.fc * c) + wv.phase);
                img.at(b, r, c) = static_cast<float>(v + jitter(rng));
            }
    }
    return img;
}

inline void apply_snow(MultibandImage& img, std::mt19937_64& rng) {
    img.validate();
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            if (uni(rng) < kSnowSpeckleRate)
                for (int b = 0; b < img.bands; ++b)
                    img.at(b, r, c) = static_cast<float>(kSnowSpeckleLevel);
    const std::size_t plane = img.pixel_count();
    for (std::size_t i = 0; i < plane; ++i)
        img.data[i] = static_cast<float>(img.data[i] + kSnowBand0Offset);
    if (img.bands >= 3) {
        float* b2 = img.data.data() + 2 * plane;
        for (std::size_t i = 0; i < plane; ++i)
            b2[i] = static_cast<float>(b2[i] + kSnowBand2Offset);
    }
}

/// Write `n_tiles` .bsq tiles per domain plus dataset manifests into
/// dir/x_NNN.bsq, dir/y_NNN.bsq, dir/manifest_x.json, dir/manifest_y.json.
/// Returns the two datasets (validation tail already reserved).
inline std::pair<TileDataset, TileDataset> write_synthetic_domains(
    const std::filesystem::path& dir, int n_tiles, std::uint64_t seed, int tile_size = 32,
    int bands = 3, int reserve = -1) {
    if (n_tiles < 1) throw config_error("need at least one tile per domain");
    std::filesystem::create_directories(dir);
    if (reserve < 0) reserve = std::min(200, n_tiles / 10);
    if (reserve >= n_tiles) reserve = 0;
    auto rx = make_rng(seed, "synthetic/x");
    auto ry = make_rng(seed, "synthetic/y");
    TileDataset ds_x, ds_y;
    ds_x.domain = "X";
    ds_y.domain = "Y";
    ds_x.reserved_validation = reserve;
    ds_y.reserved_validation = reserve;
    char name[32];
    for (int i = 0; i < n_tiles; ++i) {
        std::snprintf(name, sizeof(name), "x_%03d.bsq", i);
        const std::filesystem::path px = dir / name;
        save_image(synthetic_tile(rx, tile_size, tile_size, bands), px);
        ds_x.images.push_back(px.string());

        std::snprintf(name, sizeof(name), "y_%03d.bsq", i);
        const std::filesystem::path py = dir / name;
        MultibandImage tile = synthetic_tile(ry, tile_size, tile_size, bands);
        apply_snow(tile, ry);
        save_image(tile, py);
        ds_y.images.push_back(py.string());
    }
    save_dataset_manifest(ds_x, (dir / "manifest_x.json").string());
    save_dataset_manifest(ds_y, (dir / "manifest_y.json").string());
    return {ds_x, ds_y};
}

/// Overwrite a square patch with a fixed out-of-family spectral signature.
inline void inject_anomaly(MultibandImage& img, int row, int col, int size = 3) {
    img.validate();
    if (row < 0 || col < 0 || row + size > img.height || col + size > img.width)
        throw config_error("anomaly patch out of bounds");
    for (int b = 0; b < img.bands; ++b) {
        const float level = b % 2 == 0 ? 1.0f : 0.1f;
        for (int r = row; r < row + size; ++r)
            for (int c = col; c < col + size; ++c) img.at(b, r, c) = level;
    }
}

/// Before/after pair from the X texture family: the after image carries a
/// mild global pervasive shift plus pixel noise (no anomaly yet).
inline ImagePair synthetic_eval_pair(std::uint64_t seed, int height = 64, int width = 64,
                                     int bands = 3) {
    auto rng = make_rng(seed, "synthetic/eval");
    ImagePair pair;
    pair.before = synthetic_tile(rng, height, width, bands);
    pair.after = pair.before;
    std::normal_distribution<double> noise(0.0, 0.01);
    for (float& v : pair.after.data) v = static_cast<float>(v + 0.05 + noise(rng));
    return pair;
}

} // namespace changeforge
