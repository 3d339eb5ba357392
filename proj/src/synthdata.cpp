#include "ordcast/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ordcast/error.hpp"
#include "ordcast/raster.hpp"

namespace ordcast {

void SceneConfig::validate() const {
  if (!h || !w) throw PreconditionError("scene: empty domain");
  if (amp_min < 0 || amp_max < amp_min) throw PreconditionError("scene: bad amplitude range");
  if (!(radius_min > 0) || radius_max < radius_min) throw PreconditionError("scene: bad radius range");
  if (noise_sigma < 0 || missing_prob < 0 || missing_prob > 1 || missing_radius < 0)
    throw PreconditionError("scene: bad noise or hole settings");
  if (!(res_km > 0) || !(rate_max > 0)) throw PreconditionError("scene: bad resolution or cap");
}

nlohmann::json SceneConfig::to_json() const {
  return {{"h", h},
          {"w", w},
          {"n_cells", n_cells},
          {"amp_min", amp_min},
          {"amp_max", amp_max},
          {"radius_min", radius_min},
          {"radius_max", radius_max},
          {"vx", vx},
          {"vy", vy},
          {"rotation", rotation},
          {"drift", drift},
          {"noise_sigma", noise_sigma},
          {"missing_prob", missing_prob},
          {"missing_radius", missing_radius},
          {"res_km", res_km},
          {"rate_max", rate_max},
          {"seed", seed}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
  SceneConfig c;
  const auto defaults = c.to_json();
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw FormatError("scene config: unknown key '" + key + "'");
  try {
    c.h = j.value("h", c.h);
    c.w = j.value("w", c.w);
    c.n_cells = j.value("n_cells", c.n_cells);
    c.amp_min = j.value("amp_min", c.amp_min);
    c.amp_max = j.value("amp_max", c.amp_max);
    c.radius_min = j.value("radius_min", c.radius_min);
    c.radius_max = j.value("radius_max", c.radius_max);
    c.vx = j.value("vx", c.vx);
    c.vy = j.value("vy", c.vy);
    c.rotation = j.value("rotation", c.rotation);
    c.drift = j.value("drift", c.drift);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.missing_prob = j.value("missing_prob", c.missing_prob);
    c.missing_radius = j.value("missing_radius", c.missing_radius);
    c.res_km = j.value("res_km", c.res_km);
    c.rate_max = j.value("rate_max", c.rate_max);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(e.what());
  }
  return c;
}

Tensor gen_sequence(const SceneConfig& cfg, std::size_t T) {
  cfg.validate();
  if (T < 1) throw PreconditionError("gen_sequence: T must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  struct Cell {
    double x0, y0, amp, radius;
  };
  const double H = static_cast<double>(cfg.h), W = static_cast<double>(cfg.w);
  const double mid = 0.5 * static_cast<double>(T - 1);
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < cfg.n_cells; ++i) {
    // Place each cell inside the domain at mid-sequence so it stays in view.
    const double xm = uniform(0.0, W - 1.0), ym = uniform(0.0, H - 1.0);
    cells.push_back({xm - mid * cfg.vx, ym - mid * cfg.vy, uniform(cfg.amp_min, cfg.amp_max),
                     uniform(cfg.radius_min, cfg.radius_max)});
  }
  bool hole = false;
  double hx = 0, hy = 0;
  if (cfg.missing_prob > 0 && unit(rng) < cfg.missing_prob) {
    hole = true;
    hx = uniform(0.0, W - 1.0);
    hy = uniform(0.0, H - 1.0);
  }

  Tensor out({T, cfg.h, cfg.w});
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);
  const double cx = 0.5 * (W - 1.0), cy = 0.5 * (H - 1.0);
  for (std::size_t k = 0; k < T; ++k) {
    const double kd = static_cast<double>(k);
    const double ca = std::cos(cfg.rotation * kd), sa = std::sin(cfg.rotation * kd);
    const double gain = std::exp(cfg.drift * kd);
    for (const Cell& c : cells) {
      double px = c.x0 + kd * cfg.vx, py = c.y0 + kd * cfg.vy;
      if (cfg.rotation != 0.0) {
        const double rx = px - cx, ry = py - cy;
        px = cx + ca * rx - sa * ry;
        py = cy + sa * rx + ca * ry;
      }
      const double inv = 1.0 / (2.0 * c.radius * c.radius);
      for (std::size_t y = 0; y < cfg.h; ++y)
        for (std::size_t x = 0; x < cfg.w; ++x) {
          const double dx = static_cast<double>(x) - px, dy = static_cast<double>(y) - py;
          out.at(k, y, x) += c.amp * gain * std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
    for (std::size_t y = 0; y < cfg.h; ++y)
      for (std::size_t x = 0; x < cfg.w; ++x) {
        double& v = out.at(k, y, x);
        if (cfg.noise_sigma > 0) v += noise(rng);
        v = std::clamp(v, 0.0, cfg.rate_max);
        if (hole) {
          const double dx = static_cast<double>(x) - hx, dy = static_cast<double>(y) - hy;
          if (dx * dx + dy * dy <= cfg.missing_radius * cfg.missing_radius) v = kMissing;
        }
      }
  }
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Blackout: return "blackout";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "blackout") return Split::Blackout;
  throw FormatError("unknown split label '" + s + "'");
}

std::vector<Split> make_splits(const std::vector<double>& ts, const SplitOptions& opt) {
  if (ts.empty()) throw PreconditionError("make_splits: no timestamps");
  if (!std::is_sorted(ts.begin(), ts.end())) throw PreconditionError("make_splits: unsorted timestamps");
  if (opt.train_days <= 0 || opt.val_days <= 0 || opt.test_days <= 0 || opt.blackout_h < 0)
    throw PreconditionError("make_splits: bad cycle lengths");
  constexpr double kDay = 24.0 * 60.0;
  const double train = opt.train_days * kDay, val = opt.val_days * kDay, test = opt.test_days * kDay;
  const double cycle = train + val + test, blackout = opt.blackout_h * 60.0;
  std::vector<Split> out(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double rel = ts[i] - ts.front();
    const double n = std::floor(rel / cycle);
    const double pos = rel - n * cycle;
    if (pos < train) {
      out[i] = (n > 0 && pos < blackout) ? Split::Blackout : Split::Train;
    } else if (pos < train + val) {
      out[i] = pos - train < blackout ? Split::Blackout : Split::Val;
    } else {
      out[i] = pos - train - val < blackout ? Split::Blackout : Split::Test;
    }
  }
  return out;
}

std::vector<Patch> sample_patches(const Tensor& frames_in, double res_km, const PatchOptions& opt) {
  Tensor frames = frames_in;
  if (frames.rank() == 2) frames = frames.reshaped({1, frames.dim(0), frames.dim(1)});
  if (frames.rank() != 3) throw DimensionError("sample_patches expects T x H x W frames");
  const std::size_t T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
  const double px = opt.patch_km / res_km;
  const auto P = static_cast<std::size_t>(std::llround(px));
  if (P < 1 || std::abs(px - static_cast<double>(P)) > 1e-9 || P > H || P > W)
    throw PreconditionError("sample_patches: patch does not fit the domain");
  const long off = static_cast<long>(std::floor(opt.offset_km / res_km));

  std::mt19937_64 rng(opt.seed);
  std::uniform_int_distribution<long> jitter(-off, off);
  std::vector<Patch> out;
  for (std::size_t gy = 0; gy + P <= H; gy += P)
    for (std::size_t gx = 0; gx + P <= W; gx += P) {
      long y = static_cast<long>(gy), x = static_cast<long>(gx);
      if (opt.training && off > 0) {
        y = std::clamp(y + jitter(rng), 0L, static_cast<long>(H - P));
        x = std::clamp(x + jitter(rng), 0L, static_cast<long>(W - P));
      }
      std::size_t valid = 0;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t yy = 0; yy < P; ++yy)
          for (std::size_t xx = 0; xx < P; ++xx)
            valid += !is_missing(frames.at(t, static_cast<std::size_t>(y) + yy,
                                           static_cast<std::size_t>(x) + xx));
      const double cov = static_cast<double>(valid) / static_cast<double>(T * P * P);
      if (opt.training && cov < opt.min_coverage) continue;
      out.push_back({static_cast<std::size_t>(y), static_cast<std::size_t>(x), P, cov});
    }
  return out;
}

std::vector<Sample> window_samples(const Tensor& seq, std::size_t t_in, std::size_t t_out,
                                   std::size_t stride) {
  if (seq.rank() != 3) throw DimensionError("window_samples expects T x H x W");
  if (!stride || !t_in || !t_out) throw PreconditionError("window_samples: zero size");
  const std::size_t T = seq.dim(0), HW = seq.dim(1) * seq.dim(2);
  std::vector<Sample> out;
  for (std::size_t s = 0; s + t_in + t_out <= T; s += stride) {
    auto slice = [&](std::size_t from, std::size_t n) {
      std::vector<double> v(seq.vec().begin() + static_cast<std::ptrdiff_t>(from * HW),
                            seq.vec().begin() + static_cast<std::ptrdiff_t>((from + n) * HW));
      return Tensor({n, seq.dim(1), seq.dim(2)}, std::move(v));
    };
    out.push_back({slice(s, t_in), slice(s + t_in, t_out)});
  }
  return out;
}

}  // namespace ordcast
