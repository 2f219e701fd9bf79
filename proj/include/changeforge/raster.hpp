#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "changeforge/errors.hpp"
#include "changeforge/percentile.hpp"

namespace changeforge {

// Multiband imagery is stored as flat little-endian float32 band-sequential
// payloads (.bsq) with a JSON sidecar header carrying the dimensions:
//   {"bands": B, "height": H, "width": W, "dtype": "f32le", "band_names": [...]?}
// Band identity is opaque metadata; nothing downstream interprets it.

/// Dense B x H x W image, band-major then row-major. Values are finite after load.
struct MultibandImage {
    int bands = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;
    std::vector<std::string> band_names; // empty or exactly `bands` entries

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    std::size_t value_count() const { return pixel_count() * static_cast<std::size_t>(bands); }

    float& at(int b, int r, int c) {
        return data[(static_cast<std::size_t>(b) * height + r) * width + c];
    }
    float at(int b, int r, int c) const {
        return data[(static_cast<std::size_t>(b) * height + r) * width + c];
    }

    void validate() const {
        if (bands <= 0 || height <= 0 || width <= 0)
            throw data_error("image dimensions must be positive");
        if (data.size() != value_count())
            throw data_error("image data length " + std::to_string(data.size()) +
                             " does not match bands*height*width = " + std::to_string(value_count()));
        if (!band_names.empty() && band_names.size() != static_cast<std::size_t>(bands))
            throw data_error("band_names length does not match band count");
    }
};

inline MultibandImage make_image(int bands, int height, int width, float fill = 0.0f) {
    MultibandImage img;
    img.bands = bands;
    img.height = height;
    img.width = width;
    img.data.assign(static_cast<std::size_t>(bands) * height * width, fill);
    img.validate();
    return img;
}

/// Co-registered before/after pair; identical extents by construction.
struct ImagePair {
    MultibandImage before;
    MultibandImage after;

    void validate() const {
        before.validate();
        after.validate();
        if (before.bands != after.bands || before.height != after.height ||
            before.width != after.width)
            throw data_error("image pair extents differ");
    }
};

namespace detail {

inline std::filesystem::path header_path_for(const std::filesystem::path& bsq_path) {
    std::filesystem::path p = bsq_path;
    p.replace_extension(".json");
    return p;
}

// Payloads are little-endian on disk. All supported targets here are
// little-endian; serialize via byte copy of the float array.
static_assert(sizeof(float) == 4, "float must be 32-bit");

} // namespace detail

inline void save_image(const MultibandImage& img, const std::string& path) {
    img.validate();
    if (!img.data.empty() && !std::all_of(img.data.begin(), img.data.end(),
                                          [](float v) { return std::isfinite(v); }))
        throw data_error("refusing to save non-finite image payload: " + path);

    nlohmann::ordered_json header;
    header["bands"] = img.bands;
    header["height"] = img.height;
    header["width"] = img.width;
    header["dtype"] = "f32le";
    if (!img.band_names.empty()) header["band_names"] = img.band_names;

    const auto header_path = detail::header_path_for(path);
    {
        std::ofstream hf(header_path);
        if (!hf) throw data_error("cannot write header " + header_path.string());
        hf << header.dump(2) << "\n";
        if (!hf) throw data_error("failed writing header " + header_path.string());
    }
    std::ofstream bf(path, std::ios::binary);
    if (!bf) throw data_error("cannot write payload " + path);
    bf.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!bf) throw data_error("failed writing payload " + path);
}

inline MultibandImage load_image(const std::string& path) {
    const auto header_path = detail::header_path_for(path);
    std::ifstream hf(header_path);
    if (!hf) throw data_error("missing header " + header_path.string());
    nlohmann::json header;
    try {
        hf >> header;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed header " + header_path.string() + ": " + e.what());
    }

    MultibandImage img;
    try {
        img.bands = header.at("bands").get<int>();
        img.height = header.at("height").get<int>();
        img.width = header.at("width").get<int>();
        if (header.value("dtype", "f32le") != std::string("f32le"))
            throw data_error("unsupported dtype in " + header_path.string());
        if (header.contains("band_names"))
            img.band_names = header["band_names"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error("invalid header fields in " + header_path.string() + ": " + e.what());
    }
    if (img.bands <= 0 || img.height <= 0 || img.width <= 0)
        throw data_error("non-positive dimensions in " + header_path.string());

    std::ifstream bf(path, std::ios::binary | std::ios::ate);
    if (!bf) throw data_error("missing payload " + path);
    const std::streamsize file_size = bf.tellg();
    const std::size_t expected = img.value_count() * sizeof(float);
    if (static_cast<std::size_t>(file_size) != expected)
        throw data_error("payload size " + std::to_string(file_size) + " != expected " +
                         std::to_string(expected) + " for " + path);
    bf.seekg(0);
    img.data.resize(img.value_count());
    bf.read(reinterpret_cast<char*>(img.data.data()), file_size);
    if (!bf) throw data_error("failed reading payload " + path);

    for (float v : img.data)
        if (!std::isfinite(v)) throw data_error("non-finite value in payload " + path);
    img.validate();
    return img;
}

// ---------------------------------------------------------------------------
// Normalization: per-band affine stretch [low, high] -> [-1, +1], matching the
// tanh output range of the generators.
// ---------------------------------------------------------------------------

struct NormalizationSpec {
    std::vector<double> low;  // per band
    std::vector<double> high; // per band
    bool clamp = true;

    int bands() const { return static_cast<int>(low.size()); }
    void validate() const {
        if (low.empty() || low.size() != high.size())
            throw data_error("normalization spec band counts differ");
        for (std::size_t b = 0; b < low.size(); ++b)
            if (!(low[b] < high[b]))
                throw data_error("normalization band " + std::to_string(b) +
                                 " has low >= high (degenerate band)");
    }
};

/// Per-band stretch anchors at the p_lo-th and p_hi-th percentiles.
/// A constant band yields low == high and is rejected.
inline NormalizationSpec fit_normalization(const MultibandImage& img, double p_lo = 1.0,
                                           double p_hi = 99.0, bool clamp = true) {
    img.validate();
    if (!(p_lo >= 0.0 && p_lo < p_hi && p_hi <= 100.0))
        throw config_error("need 0 <= p_lo < p_hi <= 100");
    NormalizationSpec spec;
    spec.clamp = clamp;
    const std::size_t plane = img.pixel_count();
    for (int b = 0; b < img.bands; ++b) {
        const float* begin = img.data.data() + static_cast<std::size_t>(b) * plane;
        const double lo = percentile_of(begin, begin + plane, p_lo);
        const double hi = percentile_of(begin, begin + plane, p_hi);
        if (!(lo < hi))
            throw data_error("band " + std::to_string(b) + " is degenerate (low == high)");
        spec.low.push_back(lo);
        spec.high.push_back(hi);
    }
    return spec;
}

/// Fit anchors over several images pooled together (shared spec for both domains).
inline NormalizationSpec fit_normalization(const std::vector<const MultibandImage*>& imgs,
                                           double p_lo = 1.0, double p_hi = 99.0,
                                           bool clamp = true) {
    if (imgs.empty()) throw data_error("fit_normalization over empty image set");
    if (!(p_lo >= 0.0 && p_lo < p_hi && p_hi <= 100.0))
        throw config_error("need 0 <= p_lo < p_hi <= 100");
    const int bands = imgs.front()->bands;
    NormalizationSpec spec;
    spec.clamp = clamp;
    for (int b = 0; b < bands; ++b) {
        std::vector<double> pool;
        for (const MultibandImage* img : imgs) {
            if (img->bands != bands) throw data_error("band count mismatch across images");
            const std::size_t plane = img->pixel_count();
            const float* begin = img->data.data() + static_cast<std::size_t>(b) * plane;
            pool.insert(pool.end(), begin, begin + plane);
        }
        const double lo = percentile_of(pool.begin(), pool.end(), p_lo);
        const double hi = percentile_of(pool.begin(), pool.end(), p_hi);
        if (!(lo < hi))
            throw data_error("band " + std::to_string(b) + " is degenerate (low == high)");
        spec.low.push_back(lo);
        spec.high.push_back(hi);
    }
    return spec;
}

inline MultibandImage normalize(const MultibandImage& img, const NormalizationSpec& spec) {
    img.validate();
    spec.validate();
    if (spec.bands() != img.bands)
        throw data_error("normalization spec has " + std::to_string(spec.bands()) +
                         " bands, image has " + std::to_string(img.bands));
    MultibandImage out = img;
    const std::size_t plane = img.pixel_count();
    for (int b = 0; b < img.bands; ++b) {
        const float lo = static_cast<float>(spec.low[b]);
        const float scale = static_cast<float>(2.0 / (spec.high[b] - spec.low[b]));
        float* p = out.data.data() + static_cast<std::size_t>(b) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            float v = (p[i] - lo) * scale - 1.0f;
            if (spec.clamp) v = std::clamp(v, -1.0f, 1.0f);
            p[i] = v;
        }
    }
    return out;
}

inline MultibandImage denormalize(const MultibandImage& img, const NormalizationSpec& spec) {
    img.validate();
    spec.validate();
    if (spec.bands() != img.bands)
        throw data_error("normalization spec has " + std::to_string(spec.bands()) +
                         " bands, image has " + std::to_string(img.bands));
    MultibandImage out = img;
    const std::size_t plane = img.pixel_count();
    for (int b = 0; b < img.bands; ++b) {
        const float lo = static_cast<float>(spec.low[b]);
        const float half_span = static_cast<float>((spec.high[b] - spec.low[b]) / 2.0);
        float* p = out.data.data() + static_cast<std::size_t>(b) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            p[i] = (p[i] + 1.0f) * half_span + lo;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tile dataset: one domain's image list with a reserved validation tail.
// ---------------------------------------------------------------------------

struct TileDataset {
    std::string domain; // "X" or "Y"
    std::vector<std::string> images;
    int reserved_validation = 0;

    void validate() const {
        if (domain != "X" && domain != "Y") throw data_error("domain must be X or Y");
        if (images.empty()) throw data_error("dataset has no images");
        if (reserved_validation < 0 ||
            reserved_validation >= static_cast<int>(images.size()))
            throw data_error("reserved validation count must be < total image count");
    }
    std::vector<std::string> train_paths() const {
        return {images.begin(), images.end() - reserved_validation};
    }
    std::vector<std::string> validation_paths() const {
        return {images.end() - reserved_validation, images.end()};
    }
};

inline void save_dataset_manifest(const TileDataset& ds, const std::string& path) {
    ds.validate();
    nlohmann::ordered_json j;
    j["domain"] = ds.domain;
    j["images"] = ds.images;
    j["reserved_validation"] = ds.reserved_validation;
    std::ofstream f(path);
    if (!f) throw data_error("cannot write manifest " + path);
    f << j.dump(2) << "\n";
}

inline TileDataset load_dataset_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw data_error("missing manifest " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed manifest " + path + ": " + e.what());
    }
    TileDataset ds;
    try {
        ds.domain = j.at("domain").get<std::string>();
        ds.images = j.at("images").get<std::vector<std::string>>();
        ds.reserved_validation = j.at("reserved_validation").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw data_error("invalid manifest fields in " + path + ": " + e.what());
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// PGM preview export (P5, 8-bit, min-max scaled). Used for anomaly maps.
// ---------------------------------------------------------------------------

inline void save_pgm(const std::vector<float>& values, int height, int width,
                     const std::string& path) {
    if (values.size() != static_cast<std::size_t>(height) * width)
        throw data_error("pgm value count does not match extents");
    float lo = values.empty() ? 0.0f : values[0];
    float hi = lo;
    for (float v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi - lo;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot write pgm " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(width));
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const float v = values[static_cast<std::size_t>(r) * width + c];
            const float scaled = span > 0.0f ? (v - lo) / span : 0.0f;
            row[c] = static_cast<unsigned char>(std::lround(scaled * 255.0f));
        }
        f.write(reinterpret_cast<const char*>(row.data()), width);
    }
    if (!f) throw data_error("failed writing pgm " + path);
}

} // namespace changeforge
