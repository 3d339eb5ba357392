#pragma once

#include <cstddef>
#include <vector>

#include "ordcast/raster.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

/// Displacement in pixels per step; frame_{k+1}(x) = frame_k(x - v).
struct MotionField {
  double vx = 0.0;
  double vy = 0.0;
  // Per-block mode: dense per-pixel components (H x W); empty in global mode.
  Tensor vx_field;
  Tensor vy_field;
  bool low_confidence = false;
  double peak_correlation = 0.0;

  bool dense() const { return !vx_field.empty(); }
};

struct MotionOptions {
  int radius = 16;              // search window +-radius px
  double min_overlap = 0.25;    // minimum overlap fraction for a shift to count
  double min_peak = 0.5;        // peak correlation below this is low-confidence
  std::size_t block = 0;        // 0 = one global vector, else per-block search
};

std::vector<Raster> persistence(const Raster& last, std::size_t t_out);

/// Integer shift maximizing normalized cross-correlation between consecutive
/// frames (missing pixels excluded), refined by a 1-D quadratic fit per axis
/// unless the integer peak is already an exact match.
MotionField estimate_motion(const std::vector<Raster>& frames, const MotionOptions& opt = {});

/// Backward semi-Lagrangian extrapolation with bilinear sampling. Lead k
/// (1-based) samples last(x - k v); out-of-domain or missing sources give
/// kMissing.
std::vector<Raster> advect(const Raster& last, const MotionField& v, std::size_t t_out);

}  // namespace ordcast
