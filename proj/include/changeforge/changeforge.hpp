#pragma once

// Umbrella header for the full pipeline: multiband raster I/O, the autodiff
// engine and CycleGAN-style translation training, hyperbolic anomalous change
// detection with local co-registration adjustment, and robustness evaluation.

#include "changeforge/acd.hpp"
#include "changeforge/autodiff.hpp"
#include "changeforge/config.hpp"
#include "changeforge/errors.hpp"
#include "changeforge/evalkit.hpp"
#include "changeforge/format.hpp"
#include "changeforge/nn.hpp"
#include "changeforge/parallel.hpp"
#include "changeforge/percentile.hpp"
#include "changeforge/raster.hpp"
#include "changeforge/rng.hpp"
#include "changeforge/synthetic.hpp"
#include "changeforge/tensor.hpp"
#include "changeforge/translation.hpp"

namespace changeforge {
inline constexpr const char* kVersion = "0.1.0";
}
