#include "ordcast/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ordcast/error.hpp"
#include "ordcast/kernels.hpp"

namespace ordcast {

namespace {

constexpr double kUndefined = -std::numeric_limits<double>::infinity();

struct Window {
  std::size_t y0, y1, x0, x1;  // region of `cur` evaluated
};

// Pearson correlation of cur(x) against prev(x - d) over the window.
double ncc(const Raster& prev, const Raster& cur, const Window& win, int dx, int dy,
           double min_count) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  std::size_t n = 0;
  for (std::size_t y = win.y0; y < win.y1; ++y) {
    const long py = static_cast<long>(y) - dy;
    if (py < 0 || py >= static_cast<long>(prev.h)) continue;
    for (std::size_t x = win.x0; x < win.x1; ++x) {
      const long px = static_cast<long>(x) - dx;
      if (px < 0 || px >= static_cast<long>(prev.w)) continue;
      const double a = prev.at(static_cast<std::size_t>(py), static_cast<std::size_t>(px));
      const double b = cur.at(y, x);
      if (is_missing(a) || is_missing(b)) continue;
      sa += a;
      sb += b;
      saa += a * a;
      sbb += b * b;
      sab += a * b;
      ++n;
    }
  }
  if (static_cast<double>(n) < min_count || n < 2) return kUndefined;
  const double nn = static_cast<double>(n);
  const double va = saa - sa * sa / nn, vb = sbb - sb * sb / nn;
  if (va <= 1e-12 * (saa + 1.0) || vb <= 1e-12 * (sbb + 1.0)) return kUndefined;
  return (sab - sa * sb / nn) / std::sqrt(va * vb);
}

struct Peak {
  double vx = 0, vy = 0, corr = kUndefined;
};

Peak search(const std::vector<Raster>& frames, const Window& win, const MotionOptions& opt) {
  const int r = opt.radius;
  const std::size_t side = static_cast<std::size_t>(2 * r + 1);
  const double area = static_cast<double>((win.y1 - win.y0) * (win.x1 - win.x0));
  std::vector<double> surface(side * side, 0.0);
  std::vector<int> defined(side * side, 0);
  const long rows = static_cast<long>(side);
#pragma omp parallel for schedule(static)
  for (long iy = 0; iy < rows; ++iy) {
    for (std::size_t ix = 0; ix < side; ++ix) {
      const int dy = static_cast<int>(iy) - r, dx = static_cast<int>(ix) - r;
      double sum = 0.0;
      int ok = 1;
      for (std::size_t f = 1; f < frames.size(); ++f) {
        const double c = ncc(frames[f - 1], frames[f], win, dx, dy, opt.min_overlap * area);
        if (c == kUndefined) {
          ok = 0;
          break;
        }
        sum += c;
      }
      surface[static_cast<std::size_t>(iy) * side + ix] =
          ok ? sum / static_cast<double>(frames.size() - 1) : kUndefined;
      defined[static_cast<std::size_t>(iy) * side + ix] = ok;
    }
  }
  Peak best;
  std::size_t bi = 0;
  // Scan order fixes ties: smallest |d| first, then raster order.
  for (int rad = 0; rad <= r; ++rad)
    for (std::size_t i = 0; i < side * side; ++i) {
      const int dy = static_cast<int>(i / side) - r, dx = static_cast<int>(i % side) - r;
      if (std::max(std::abs(dx), std::abs(dy)) != rad || !defined[i]) continue;
      if (surface[i] > best.corr) {
        best.corr = surface[i];
        bi = i;
      }
    }
  if (best.corr == kUndefined) return best;
  const int py = static_cast<int>(bi / side), px = static_cast<int>(bi % side);
  best.vy = py - r;
  best.vx = px - r;
  if (best.corr >= 1.0 - 1e-12) return best;

  auto refine = [&](int i0, int i1, int i2) -> double {
    if (!defined[static_cast<std::size_t>(i0)] || !defined[static_cast<std::size_t>(i2)]) return 0.0;
    const double a = surface[static_cast<std::size_t>(i0)], b = surface[static_cast<std::size_t>(i1)],
                 c = surface[static_cast<std::size_t>(i2)];
    const double den = a - 2 * b + c;
    if (den >= 0) return 0.0;
    return std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
  };
  const int s = static_cast<int>(side);
  const int center = py * s + px;
  if (px > 0 && px < s - 1) best.vx += refine(center - 1, center, center + 1);
  if (py > 0 && py < s - 1) best.vy += refine(center - s, center, center + s);
  return best;
}

}  // namespace

std::vector<Raster> persistence(const Raster& last, std::size_t t_out) {
  return std::vector<Raster>(t_out, last);
}

MotionField estimate_motion(const std::vector<Raster>& frames, const MotionOptions& opt) {
  if (frames.size() < 2) throw PreconditionError("estimate_motion needs at least two frames");
  for (const auto& f : frames)
    if (f.h != frames[0].h || f.w != frames[0].w)
      throw DimensionError("estimate_motion: frames differ in size");
  if (opt.radius < 0) throw PreconditionError("estimate_motion: negative radius");
  const std::size_t H = frames[0].h, W = frames[0].w;

  MotionField mf;
  if (opt.block == 0) {
    const Peak p = search(frames, {0, H, 0, W}, opt);
    mf.peak_correlation = p.corr == kUndefined ? 0.0 : p.corr;
    if (p.corr == kUndefined || p.corr < opt.min_peak) {
      mf.low_confidence = true;
      return mf;
    }
    mf.vx = p.vx;
    mf.vy = p.vy;
    return mf;
  }

  // Per-block: blocks without a confident peak inherit the global vector.
  MotionOptions global_opt = opt;
  global_opt.block = 0;
  const MotionField global = estimate_motion(frames, global_opt);
  mf = global;
  mf.vx_field = Tensor({H, W}, global.vx);
  mf.vy_field = Tensor({H, W}, global.vy);
  for (std::size_t by = 0; by < H; by += opt.block)
    for (std::size_t bx = 0; bx < W; bx += opt.block) {
      const Window win{by, std::min(H, by + opt.block), bx, std::min(W, bx + opt.block)};
      const Peak p = search(frames, win, opt);
      if (p.corr == kUndefined || p.corr < opt.min_peak) continue;
      for (std::size_t y = win.y0; y < win.y1; ++y)
        for (std::size_t x = win.x0; x < win.x1; ++x) {
          mf.vx_field.at(y, x) = p.vx;
          mf.vy_field.at(y, x) = p.vy;
        }
    }
  return mf;
}

std::vector<Raster> advect(const Raster& last, const MotionField& v, std::size_t t_out) {
  if (!std::isfinite(v.vx) || !std::isfinite(v.vy))
    throw PreconditionError("advect: motion must be finite");
  std::vector<Raster> out;
  out.reserve(t_out);
  for (std::size_t k = 1; k <= t_out; ++k) {
    Raster f = last;
    const double kd = static_cast<double>(k);
    if (!v.dense()) {
      kernels::shift_bilinear(last.values.data(), f.values.data(), last.h, last.w, kd * v.vy,
                              kd * v.vx, kMissing);
    } else {
      // Constant-vector trajectories per pixel, sampled from its own vector.
      for (std::size_t y = 0; y < last.h; ++y)
        for (std::size_t x = 0; x < last.w; ++x) {
          const double sy = static_cast<double>(y) - kd * v.vy_field.at(y, x);
          const double sx = static_cast<double>(x) - kd * v.vx_field.at(y, x);
          const double fy = std::floor(sy), fx = std::floor(sx);
          const double ay = sy - fy, ax = sx - fx;
          double acc = 0.0;
          bool miss = false;
          for (int dy = 0; dy < 2 && !miss; ++dy)
            for (int dx = 0; dx < 2 && !miss; ++dx) {
              const double wgt = (dy ? ay : 1 - ay) * (dx ? ax : 1 - ax);
              if (wgt == 0.0) continue;
              const long yy = static_cast<long>(fy) + dy, xx = static_cast<long>(fx) + dx;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(last.h) ||
                  xx >= static_cast<long>(last.w)) {
                miss = true;
                break;
              }
              const double val = last.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              if (is_missing(val)) {
                miss = true;
                break;
              }
              acc += wgt * val;
            }
          f.at(y, x) = miss ? kMissing : acc;
        }
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace ordcast
