#include "ordcast/attribution.hpp"

#include <algorithm>

#include "ordcast/error.hpp"

namespace ordcast {

Tensor min_baseline(const Tensor& input) {
  if (input.rank() < 2) throw DimensionError("min_baseline expects C x ... input");
  const std::size_t C = input.dim(0), n = input.size() / C;
  Tensor b(input.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const auto first = input.vec().begin() + static_cast<std::ptrdiff_t>(c * n);
    const double lo = *std::min_element(first, first + static_cast<std::ptrdiff_t>(n));
    std::fill_n(b.vec().begin() + static_cast<std::ptrdiff_t>(c * n), n, lo);
  }
  return b;
}

Attribution integrated_gradients(const ScalarFunction& f, const Tensor& input,
                                 const Tensor& baseline, std::size_t steps) {
  if (steps < 1) throw PreconditionError("integrated_gradients: steps must be >= 1");
  require_same_shape(input, baseline, "integrated_gradients");
  Attribution a;
  a.f_input = f(input, nullptr);
  a.f_baseline = f(baseline, nullptr);
  Tensor avg(input.shape());
  Tensor point(input.shape()), grad;
  const double m = static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double s = (static_cast<double>(k) + 0.5) / m;
    for (std::size_t i = 0; i < input.size(); ++i)
      point[i] = baseline[i] + s * (input[i] - baseline[i]);
    f(point, &grad);
    require_same_shape(grad, input, "integrated_gradients gradient");
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += grad[i];
  }
  a.map = Tensor(input.shape());
  for (std::size_t i = 0; i < avg.size(); ++i)
    a.map[i] = (input[i] - baseline[i]) * (avg[i] / m);
  const std::size_t C = input.rank() ? input.dim(0) : 1, n = input.size() / C;
  a.per_channel.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) a.per_channel[c] += a.map[c * n + i];
  for (double v : a.per_channel) a.total += v;
  return a;
}

Attribution attribute(const MicroModel& model, const Tensor& frames,
                      const AttributionTarget& target, std::size_t steps, bool use_ema) {
  const auto& cfg = model.config();
  const Tensor x = cfg.mode == OutputMode::SinglePass ? encode_input(frames, cfg)
                                                     : encode_input(frames, cfg, target.lead);
  const ScalarFunction f = [&](const Tensor& in, Tensor* grad) {
    return target_logit_sum(model, in, target, grad, use_ema);
  };
  return integrated_gradients(f, x, min_baseline(x), steps);
}

}  // namespace ordcast
