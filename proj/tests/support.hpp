#pragma once

// Shared helpers for the unit and acceptance tests: random fields and
// independent scalar-loop oracles that deliberately avoid the library code
// paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ordcast/intensity.hpp"
#include "ordcast/tensor.hpp"

namespace testsupport {

using ordcast::Tensor;

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = 0.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline Tensor random_binary(std::vector<std::size_t> shape, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution b(p);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

// Rain-like field: zero with probability p_dry, else exponential rate.
inline Tensor random_rates(std::vector<std::size_t> shape, std::mt19937_64& rng, double p_dry = 0.4,
                           double mean = 3.0, double p_missing = 0.0) {
  std::bernoulli_distribution dry(p_dry), miss(p_missing);
  std::exponential_distribution<double> e(1.0 / mean);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = miss(rng) ? -1.0 : (dry(rng) ? 0.0 : e(rng));
  return t;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ordcast_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---- metric oracles (naive per-pixel loops) ----

struct Counts {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts naive_counts(const Tensor& pred, const Tensor& obs, double thr) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (obs[i] == -1.0) continue;
    const bool p = pred[i] >= thr, o = obs[i] >= thr;
    if (p && o) c.tp += 1;
    else if (p) c.fp += 1;
    else if (o) c.fn += 1;
    else c.tn += 1;
  }
  return c;
}

inline std::optional<double> naive_csi(const Counts& c) {
  const double d = c.tp + c.fp + c.fn;
  if (d == 0) return std::nullopt;
  return c.tp / d;
}

inline std::optional<double> naive_fbi(const Counts& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return (c.tp + c.fp) / (c.tp + c.fn);
}

// Heidke skill score written from its "hits expected by chance" definition.
inline std::optional<double> naive_hss(const Counts& c) {
  const double n = c.tp + c.fp + c.fn + c.tn;
  if (n == 0) return std::nullopt;
  const double expected = ((c.tp + c.fn) * (c.tp + c.fp) + (c.tn + c.fn) * (c.tn + c.fp)) / n;
  const double d = n - expected;
  if (d == 0) return std::nullopt;
  return (c.tp + c.tn - expected) / d;
}

// Fraction of events in the truncated window around (y, x), by direct loop.
inline double naive_fraction(const Tensor& b, std::size_t y, std::size_t x, std::size_t window) {
  const long H = static_cast<long>(b.dim(0)), W = static_cast<long>(b.dim(1));
  const long r = static_cast<long>(window / 2);
  double s = 0, n = 0;
  for (long yy = static_cast<long>(y) - r; yy <= static_cast<long>(y) + r; ++yy)
    for (long xx = static_cast<long>(x) - r; xx <= static_cast<long>(x) + r; ++xx) {
      if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
      s += b[static_cast<std::size_t>(yy * W + xx)];
      n += 1;
    }
  return s / n;
}

inline double naive_fss(const Tensor& p, const Tensor& o, std::size_t window) {
  double num = 0, den = 0;
  for (std::size_t y = 0; y < p.dim(0); ++y)
    for (std::size_t x = 0; x < p.dim(1); ++x) {
      const double f = naive_fraction(p, y, x, window), g = naive_fraction(o, y, x, window);
      num += (f - g) * (f - g);
      den += f * f + g * g;
    }
  if (den == 0) return 1.0;
  return 1.0 - num / den;
}

inline std::optional<double> naive_pooled_csi(const Tensor& pred, const Tensor& obs, std::size_t pool,
                                              double thr) {
  Counts c;
  for (std::size_t by = 0; by < pred.dim(0) / pool; ++by)
    for (std::size_t bx = 0; bx < pred.dim(1) / pool; ++bx) {
      bool p = false, o = false;
      for (std::size_t dy = 0; dy < pool; ++dy)
        for (std::size_t dx = 0; dx < pool; ++dx) {
          const std::size_t i = (by * pool + dy) * pred.dim(1) + bx * pool + dx;
          p = p || pred[i] >= thr;
          o = o || (obs[i] != -1.0 && obs[i] >= thr);
        }
      if (p && o) c.tp += 1;
      else if (p) c.fp += 1;
      else if (o) c.fn += 1;
      else c.tn += 1;
    }
  return naive_csi(c);
}

// Discretized CRPS for one pixel from the bucket definition: the forecast
// CDF at each bucket's lower edge against the observed step function.
inline double naive_crps_pixel(const std::vector<double>& p, double rate,
                               const std::vector<double>& edges, double top_width) {
  const std::size_t K = edges.size();
  double s = 0;
  for (std::size_t b = 0; b <= K; ++b) {
    const double lower = b == 0 ? 0.0 : edges[b - 1];
    const double width = b == K ? top_width : edges[b] - lower;
    const double forecast_below = b == 0 ? 0.0 : 1.0 - p[b - 1];
    const double observed_below = rate < lower ? 1.0 : 0.0;
    s += (forecast_below - observed_below) * (forecast_below - observed_below) * width;
  }
  return s;
}

// Reference SSIM written directly from the windowed definition.
inline double naive_ssim(const Tensor& x, const Tensor& y, std::size_t win = 11, double sigma = 1.5) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  std::vector<double> g(win * win);
  double gs = 0;
  const double c = (static_cast<double>(win) - 1) / 2;
  for (std::size_t i = 0; i < win; ++i)
    for (std::size_t j = 0; j < win; ++j) {
      const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      g[i * win + j] = std::exp(-d2 / (2 * sigma * sigma));
      gs += g[i * win + j];
    }
  for (double& v : g) v /= gs;
  double lo = y[0], hi = y[0];
  for (double v : y.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  const double L = hi > lo ? hi - lo : 1.0;
  const double C1 = (0.01 * L) * (0.01 * L), C2 = (0.03 * L) * (0.03 * L);
  double total = 0;
  std::size_t n = 0;
  for (std::size_t y0 = 0; y0 + win <= H; ++y0)
    for (std::size_t x0 = 0; x0 + win <= W; ++x0) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          mx += g[i * win + j] * x[(y0 + i) * W + x0 + j];
          my += g[i * win + j] * y[(y0 + i) * W + x0 + j];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double a = x[(y0 + i) * W + x0 + j] - mx, b = y[(y0 + i) * W + x0 + j] - my;
          vx += g[i * win + j] * a * a;
          vy += g[i * win + j] * b * b;
          cxy += g[i * win + j] * a * b;
        }
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++n;
    }
  return total / static_cast<double>(n);
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testsupport
