#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ordcast/micromodel.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

// f(x) and, when grad is non-null, df/dx with the same shape as x.
using ScalarFunction = std::function<double(const Tensor& x, Tensor* grad)>;

struct Attribution {
  Tensor map;                        // same shape as the input
  std::vector<double> per_channel;   // map summed over space, per axis-0 slice
  double total = 0.0;                // sum of the map
  double f_input = 0.0;
  double f_baseline = 0.0;
};

// Per-channel minimum of a C x H x W input, broadcast over space.
Tensor min_baseline(const Tensor& input);

/// Path-integral attribution from `baseline` to `input` with a midpoint
/// Riemann sum over `steps` points, scaled by (input - baseline).
Attribution integrated_gradients(const ScalarFunction& f, const Tensor& input,
                                 const Tensor& baseline, std::size_t steps);

/// Attribution of a micromodel target (summed logits) to its encoded input,
/// with the per-feature minimum baseline.
Attribution attribute(const MicroModel& model, const Tensor& frames,
                      const AttributionTarget& target, std::size_t steps, bool use_ema = false);

}  // namespace ordcast
