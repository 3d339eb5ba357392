#include "ordcast/raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ordcast/error.hpp"

namespace ordcast {

namespace {

using json = nlohmann::json;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

const char* kind_name(RasterKind k) { return k == RasterKind::Rate ? "rate" : "dbz"; }

RasterKind parse_kind(const std::string& s) {
  if (s == "rate") return RasterKind::Rate;
  if (s == "dbz") return RasterKind::Dbz;
  throw FormatError("unknown raster kind '" + s + "'");
}

bool value_ok(double v, RasterKind kind) {
  if (is_missing(v)) return true;
  if (!std::isfinite(v)) return false;
  return kind == RasterKind::Rate ? v >= 0.0 : (v >= -1.0 && v <= 64.0);
}

// Integer pixel count for an extent; throws unless it is a whole multiple.
long pixels_for(double extent_km, double res_km) {
  const double px = extent_km / res_km;
  const double rounded = std::round(px);
  if (std::abs(px - rounded) > 1e-9 * std::max(1.0, std::abs(px)) || rounded < 1)
    throw AlignmentError("extent " + std::to_string(extent_km) +
                         " km is not a positive multiple of " + std::to_string(res_km) + " km");
  return static_cast<long>(rounded);
}

}  // namespace

Raster::Raster(std::size_t h_, std::size_t w_, double res, double fill, OriginKm o, RasterKind k)
    : h(h_), w(w_), values(h_ * w_, fill), res_km(res), origin(o), kind(k) {}

void Raster::validate() const {
  if (h < 1 || w < 1) throw PreconditionError("raster must be at least 1x1");
  if (!(res_km > 0)) throw PreconditionError("raster resolution must be positive");
  if (values.size() != h * w) throw DimensionError("raster value count does not match h*w");
  for (double v : values)
    if (!value_ok(v, kind))
      throw PreconditionError("raster value " + std::to_string(v) + " out of range for " +
                              kind_name(kind));
}

SourceStack::SourceStack(Tensor d, double res, OriginKm o, std::vector<double> ts, RasterKind k)
    : data(std::move(d)), res_km(res), origin(o), timesteps_min(std::move(ts)), kind(k) {
  if (data.rank() != 4) throw DimensionError("source stack must be T x C x H x W");
  if (timesteps_min.size() != data.dim(0))
    throw DimensionError("timesteps_min length does not match T");
}

void SourceStack::validate() const {
  if (data.rank() != 4) throw DimensionError("source stack must be T x C x H x W");
  if (!(res_km > 0)) throw PreconditionError("stack resolution must be positive");
  if (timesteps_min.size() != t()) throw DimensionError("timesteps_min length does not match T");
  for (std::size_t i = 1; i < timesteps_min.size(); ++i)
    if (!(timesteps_min[i] > timesteps_min[i - 1]))
      throw PreconditionError("timesteps_min must be strictly increasing");
  for (double v : data.data())
    if (!value_ok(v, kind)) throw PreconditionError("stack value out of range");
}

Raster SourceStack::frame(std::size_t ti, std::size_t ch) const {
  Raster r(h(), w(), res_km, 0.0, origin, kind);
  const std::size_t off = data.offset(ti, ch, std::size_t{0}, std::size_t{0});
  std::copy_n(data.data().begin() + static_cast<std::ptrdiff_t>(off), h() * w(), r.values.begin());
  return r;
}

SourceStack SourceStack::from_frames(const std::vector<Raster>& frames,
                                     std::vector<double> timesteps_min) {
  if (frames.empty()) throw DimensionError("from_frames needs at least one frame");
  const Raster& f0 = frames.front();
  Tensor data({frames.size(), 1, f0.h, f0.w});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].h != f0.h || frames[t].w != f0.w)
      throw DimensionError("from_frames: frames differ in size");
    std::copy(frames[t].values.begin(), frames[t].values.end(),
              data.data().begin() + static_cast<std::ptrdiff_t>(t * f0.h * f0.w));
  }
  return SourceStack(std::move(data), f0.res_km, f0.origin, std::move(timesteps_min), f0.kind);
}

Raster downsample_mean(const Raster& r, std::size_t factor) {
  if (factor < 1 || r.h % factor != 0 || r.w % factor != 0)
    throw DimensionError("downsample factor " + std::to_string(factor) +
                         " does not divide raster dimensions");
  Raster out(r.h / factor, r.w / factor, r.res_km * static_cast<double>(factor), 0.0, r.origin,
             r.kind);
  for (std::size_t i = 0; i < out.h; ++i) {
    for (std::size_t j = 0; j < out.w; ++j) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t di = 0; di < factor; ++di) {
        for (std::size_t dj = 0; dj < factor; ++dj) {
          const double v = r.at(i * factor + di, j * factor + dj);
          if (is_missing(v)) continue;
          sum += v;
          ++n;
        }
      }
      out.at(i, j) = n ? sum / static_cast<double>(n) : kMissing;
    }
  }
  return out;
}

Raster upsample_bilinear(const Raster& r, std::size_t factor) {
  if (factor < 1) throw PreconditionError("upsample factor must be >= 1");
  if (std::any_of(r.values.begin(), r.values.end(), is_missing))
    throw PreconditionError("upsample_bilinear: input contains missing pixels");
  if (factor == 1) return r;
  Raster out(r.h * factor, r.w * factor, r.res_km / static_cast<double>(factor), 0.0, r.origin,
             r.kind);
  const double f = static_cast<double>(factor);
  auto source_coord = [f](std::size_t i, std::size_t n, std::size_t& lo, std::size_t& hi,
                          double& frac) {
    double s = (static_cast<double>(i) + 0.5) / f - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, n - 1);
    frac = s - static_cast<double>(lo);
  };
  for (std::size_t i = 0; i < out.h; ++i) {
    std::size_t r0, r1;
    double fy;
    source_coord(i, r.h, r0, r1, fy);
    for (std::size_t j = 0; j < out.w; ++j) {
      std::size_t c0, c1;
      double fx;
      source_coord(j, r.w, c0, c1, fx);
      const double top = (1 - fx) * r.at(r0, c0) + fx * r.at(r0, c1);
      const double bot = (1 - fx) * r.at(r1, c0) + fx * r.at(r1, c1);
      out.at(i, j) = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

Tensor space_to_depth(const Tensor& in, std::size_t b) {
  if (in.rank() != 3) throw DimensionError("space_to_depth expects C x H x W");
  const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
  if (b < 1 || H % b != 0 || W % b != 0)
    throw DimensionError("space_to_depth block " + std::to_string(b) +
                         " does not divide " + in.shape_str());
  const std::size_t Ho = H / b, Wo = W / b;
  Tensor out({C * b * b, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < b; ++dy)
      for (std::size_t dx = 0; dx < b; ++dx) {
        const std::size_t oc = (c * b + dy) * b + dx;
        for (std::size_t y = 0; y < Ho; ++y)
          for (std::size_t x = 0; x < Wo; ++x) out.at(oc, y, x) = in.at(c, y * b + dy, x * b + dx);
      }
  return out;
}

Tensor depth_to_space(const Tensor& in, std::size_t b) {
  if (in.rank() != 3) throw DimensionError("depth_to_space expects C x H x W");
  if (b < 1 || in.dim(0) % (b * b) != 0)
    throw DimensionError("depth_to_space block " + std::to_string(b) +
                         " does not divide channel count of " + in.shape_str());
  const std::size_t C = in.dim(0) / (b * b), Hi = in.dim(1), Wi = in.dim(2);
  Tensor out({C, Hi * b, Wi * b});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t dy = 0; dy < b; ++dy)
      for (std::size_t dx = 0; dx < b; ++dx) {
        const std::size_t ic = (c * b + dy) * b + dx;
        for (std::size_t y = 0; y < Hi; ++y)
          for (std::size_t x = 0; x < Wi; ++x) out.at(c, y * b + dy, x * b + dx) = in.at(ic, y, x);
      }
  return out;
}

namespace {

template <typename Fn>
SourceStack map_frames(const SourceStack& s, Fn&& fn, double res_scale) {
  std::vector<Tensor> per_t;
  per_t.reserve(s.t());
  const std::size_t frame = s.c() * s.h() * s.w();
  for (std::size_t t = 0; t < s.t(); ++t) {
    std::vector<double> chunk(s.data.data().begin() + static_cast<std::ptrdiff_t>(t * frame),
                              s.data.data().begin() + static_cast<std::ptrdiff_t>((t + 1) * frame));
    per_t.push_back(fn(Tensor({s.c(), s.h(), s.w()}, std::move(chunk))));
  }
  const auto& sh = per_t.front().shape();
  Tensor out({s.t(), sh[0], sh[1], sh[2]});
  for (std::size_t t = 0; t < s.t(); ++t)
    std::copy(per_t[t].vec().begin(), per_t[t].vec().end(),
              out.vec().begin() + static_cast<std::ptrdiff_t>(t * per_t[t].size()));
  return SourceStack(std::move(out), s.res_km * res_scale, s.origin, s.timesteps_min, s.kind);
}

}  // namespace

SourceStack space_to_depth(const SourceStack& s, std::size_t block) {
  return map_frames(s, [block](const Tensor& t) { return space_to_depth(t, block); },
                    static_cast<double>(block));
}

SourceStack depth_to_space(const SourceStack& s, std::size_t block) {
  return map_frames(s, [block](const Tensor& t) { return depth_to_space(t, block); },
                    1.0 / static_cast<double>(block));
}

Tensor merge_time_channels(const Tensor& tchw) {
  if (tchw.rank() != 4) throw DimensionError("merge_time_channels expects T x C x H x W");
  return tchw.reshaped({tchw.dim(0) * tchw.dim(1), tchw.dim(2), tchw.dim(3)});
}

Tensor merge_time_channels(const SourceStack& s) { return merge_time_channels(s.data); }

Tensor split_time_channels(const Tensor& tc_hw, std::size_t channels) {
  if (tc_hw.rank() != 3) throw DimensionError("split_time_channels expects (TC) x H x W");
  if (channels == 0 || tc_hw.dim(0) % channels != 0)
    throw DimensionError("split_time_channels: " + std::to_string(tc_hw.dim(0)) +
                         " channels not divisible by " + std::to_string(channels));
  return tc_hw.reshaped({tc_hw.dim(0) / channels, channels, tc_hw.dim(1), tc_hw.dim(2)});
}

SourceStack align_center(const SourceStack& s, double width_km, double height_km) {
  const long tw = pixels_for(width_km, s.res_km);
  const long th = pixels_for(height_km, s.res_km);
  const long dw = tw - static_cast<long>(s.w());
  const long dh = th - static_cast<long>(s.h());
  if (dw % 2 != 0 || dh % 2 != 0)
    throw AlignmentError("align_center: extent difference of (" + std::to_string(dw) + ", " +
                         std::to_string(dh) + ") px cannot be split equally");
  // Offset of output pixel (0,0) in input pixel coordinates.
  const long off_x = -dw / 2;
  const long off_y = -dh / 2;
  Tensor out({s.t(), s.c(), static_cast<std::size_t>(th), static_cast<std::size_t>(tw)});
  for (std::size_t t = 0; t < s.t(); ++t)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (long y = 0; y < th; ++y) {
        const long sy = y + off_y;
        if (sy < 0 || sy >= static_cast<long>(s.h())) continue;
        for (long x = 0; x < tw; ++x) {
          const long sx = x + off_x;
          if (sx < 0 || sx >= static_cast<long>(s.w())) continue;
          out.at(t, c, y, x) = s.data.at(t, c, sy, sx);
        }
      }
  const OriginKm origin{s.origin.x + static_cast<double>(off_x) * s.res_km,
                        s.origin.y + static_cast<double>(off_y) * s.res_km};
  return SourceStack(std::move(out), s.res_km, origin, s.timesteps_min, s.kind);
}

void write_f32(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    buf[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
  if (!os) throw FormatError("short write to " + path.string());
}

std::vector<double> read_f32(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes % 4 != 0) throw FormatError(path.string() + ": payload is not a float32 array");
  is.seekg(0);
  std::vector<std::uint32_t> buf(bytes / 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  std::vector<double> out(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    out[i] = static_cast<double>(std::bit_cast<float>(to_le(buf[i])));
  return out;
}

void write_stack(const std::filesystem::path& base, const SourceStack& s) {
  json hdr;
  hdr["h"] = s.h();
  hdr["w"] = s.w();
  hdr["res_km"] = s.res_km;
  hdr["origin_km"] = {s.origin.x, s.origin.y};
  hdr["kind"] = kind_name(s.kind);
  hdr["timesteps_min"] = s.timesteps_min;
  if (s.c() != 1) hdr["channels"] = s.c();
  auto jpath = base;
  jpath += ".json";
  std::ofstream os(jpath);
  if (!os) throw FormatError("cannot open " + jpath.string() + " for writing");
  os << hdr.dump(2) << '\n';
  auto fpath = base;
  fpath += ".f32";
  write_f32(fpath, s.data.data());
}

SourceStack read_stack(const std::filesystem::path& base) {
  auto jpath = base;
  jpath += ".json";
  std::ifstream is(jpath);
  if (!is) throw FormatError("cannot open " + jpath.string());
  json hdr;
  try {
    hdr = json::parse(is);
    const auto h = hdr.at("h").get<std::size_t>();
    const auto w = hdr.at("w").get<std::size_t>();
    const auto res = hdr.at("res_km").get<double>();
    const auto org = hdr.at("origin_km").get<std::vector<double>>();
    if (org.size() != 2) throw FormatError("origin_km must have two entries");
    const RasterKind kind = parse_kind(hdr.at("kind").get<std::string>());
    std::vector<double> ts{0.0};
    if (hdr.contains("timesteps_min")) ts = hdr["timesteps_min"].get<std::vector<double>>();
    const std::size_t ch = hdr.value("channels", std::size_t{1});
    auto fpath = base;
    fpath += ".f32";
    auto values = read_f32(fpath);
    if (values.size() != ts.size() * ch * h * w)
      throw FormatError(fpath.string() + ": payload size does not match header");
    Tensor data({ts.size(), ch, h, w}, std::move(values));
    SourceStack s(std::move(data), res, OriginKm{org[0], org[1]}, std::move(ts), kind);
    return s;
  } catch (const json::exception& e) {
    throw FormatError(jpath.string() + ": " + e.what());
  }
}

void write_raster(const std::filesystem::path& base, const Raster& r) {
  write_stack(base, SourceStack::from_frames({r}, {0.0}));
}

Raster read_raster(const std::filesystem::path& base) {
  auto s = read_stack(base);
  if (s.t() != 1 || s.c() != 1) throw FormatError(base.string() + ": expected a single frame");
  return s.frame(0);
}

}  // namespace ordcast
