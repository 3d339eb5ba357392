#pragma once

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

#include "ordcast/tensor.hpp"

namespace ordcast {

/// Marks pixels without ground truth (outside radar coverage).
inline constexpr double kMissing = -1.0;

inline bool is_missing(double v) { return v == kMissing; }

enum class RasterKind { Rate, Dbz };

/// Top-left corner of a grid in a shared frame. x grows rightward, y
/// downward, both in km.
struct OriginKm {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const OriginKm&, const OriginKm&) = default;
};

/// A single georeferenced 2-D field.
struct Raster {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;  // row-major h*w
  double res_km = 1.0;
  OriginKm origin;
  RasterKind kind = RasterKind::Rate;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, double res_km, double fill = 0.0,
         OriginKm origin = {}, RasterKind kind = RasterKind::Rate);

  double& at(std::size_t r, std::size_t c) { return values[r * w + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * w + c]; }

  // Throws PreconditionError on bad dims/resolution or out-of-range values.
  void validate() const;
};

/// T x C x H x W stack of frames from one source, with their offsets in
/// minutes relative to the forecast origin.
struct SourceStack {
  Tensor data;
  double res_km = 1.0;
  OriginKm origin;
  std::vector<double> timesteps_min;
  RasterKind kind = RasterKind::Rate;

  SourceStack() = default;
  SourceStack(Tensor data, double res_km, OriginKm origin, std::vector<double> timesteps_min,
              RasterKind kind = RasterKind::Rate);

  std::size_t t() const { return data.dim(0); }
  std::size_t c() const { return data.dim(1); }
  std::size_t h() const { return data.dim(2); }
  std::size_t w() const { return data.dim(3); }

  // Frame (t, ch) as a standalone raster.
  Raster frame(std::size_t t, std::size_t ch = 0) const;
  static SourceStack from_frames(const std::vector<Raster>& frames,
                                 std::vector<double> timesteps_min);

  void validate() const;
};

Raster downsample_mean(const Raster& r, std::size_t factor);
Raster upsample_bilinear(const Raster& r, std::size_t factor);

// C x H x W <-> (C*b*b) x (H/b) x (W/b). Output channel c*b*b + dy*b + dx
// holds input phase (dy, dx) of channel c.
Tensor space_to_depth(const Tensor& chw, std::size_t block);
Tensor depth_to_space(const Tensor& chw, std::size_t block);

SourceStack space_to_depth(const SourceStack& s, std::size_t block);
SourceStack depth_to_space(const SourceStack& s, std::size_t block);

// T x C x H x W -> (T*C) x H x W, time-major.
Tensor merge_time_channels(const Tensor& tchw);
Tensor merge_time_channels(const SourceStack& s);
Tensor split_time_channels(const Tensor& tc_hw, std::size_t channels);

/// Pads with zeros or crops, split equally on opposite sides, so the stack
/// covers exactly `width_km` x `height_km` around its current center.
SourceStack align_center(const SourceStack& s, double width_km, double height_km);

// Portable raster files: <base>.json header + <base>.f32 payload
// (little-endian float32, row-major, time-major when stacked).
void write_stack(const std::filesystem::path& base, const SourceStack& s);
SourceStack read_stack(const std::filesystem::path& base);
void write_raster(const std::filesystem::path& base, const Raster& r);
Raster read_raster(const std::filesystem::path& base);

void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& path);

}  // namespace ordcast
