#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "changeforge/errors.hpp"

namespace changeforge {

// Single percentile definition for the whole code base: linear interpolation
// on the sorted sample at index (n-1) * p / 100. Normalization anchors,
// detection thresholds and curve sweeps all go through here.

/// Percentile of an already sorted (ascending) sample.
inline double percentile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw data_error("percentile of empty sample");
    if (p < 0.0 || p > 100.0) throw config_error("percentile outside [0, 100]");
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = static_cast<double>(n - 1) * p / 100.0;
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Percentile of an unsorted sample. Uses nth_element selection, so large
/// anomaly maps do not pay for a full sort.
template <typename It>
double percentile_of(It first, It last, double p) {
    std::vector<double> v(first, last);
    if (v.empty()) throw data_error("percentile of empty sample");
    if (p < 0.0 || p > 100.0) throw config_error("percentile outside [0, 100]");
    const std::size_t n = v.size();
    if (n == 1) return v[0];
    const double pos = static_cast<double>(n - 1) * p / 100.0;
    const std::size_t lo = static_cast<std::size_t>(pos);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const double a = v[lo];
    if (lo + 1 >= n) return a;
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0) return a;
    const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + frac * (b - a);
}

} // namespace changeforge
