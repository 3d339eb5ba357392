#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordcast/micromodel.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

struct SceneConfig {
  std::size_t h = 32;
  std::size_t w = 32;
  std::size_t n_cells = 3;
  double amp_min = 2.0;  // mm/h
  double amp_max = 20.0;
  double radius_min = 2.0;  // px
  double radius_max = 5.0;
  double vx = 2.0;  // px/step
  double vy = 0.0;
  double rotation = 0.0;  // rad/step about the domain centre, applied after translation
  double drift = 0.0;     // amplitude_k = amplitude_0 * exp(drift * k)
  double noise_sigma = 0.0;
  double missing_prob = 0.0;  // chance of one static coverage hole per sequence
  double missing_radius = 0.0;
  double res_km = 2.0;
  double rate_max = 64.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

/// T x H x W rain-rate frames: Gaussian cells moving at constant velocity,
/// with intensity drift, clipped additive noise and optional holes.
Tensor gen_sequence(const SceneConfig& cfg, std::size_t t);

enum class Split { Train, Val, Test, Blackout };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct SplitOptions {
  double train_days = 12;
  double val_days = 2;
  double test_days = 2;
  double blackout_h = 12;
};

/// Cycles of train/val/test anchored at the first timestamp. The first
/// blackout_h hours after every segment boundary (train->val, val->test,
/// test->next train) are blackout. Timestamps are minutes, sorted.
std::vector<Split> make_splits(const std::vector<double>& timestamps_min,
                               const SplitOptions& opt = {});

struct Patch {
  std::size_t y = 0, x = 0, size = 0;
  double coverage = 0.0;
};

struct PatchOptions {
  double patch_km = 64;
  double offset_km = 32;       // uniform jitter +-offset for training
  double min_coverage = 0.5;   // training only
  bool training = true;
  std::uint64_t seed = 0;
};

/// Non-overlapping grid patches over T x H x W frames. Training patches are
/// jittered (clamped to the domain) and dropped below min_coverage;
/// evaluation patches keep the grid and any coverage.
std::vector<Patch> sample_patches(const Tensor& frames, double res_km, const PatchOptions& opt);

// Sliding windows (t_in inputs, t_out targets) over a T x H x W sequence.
std::vector<Sample> window_samples(const Tensor& sequence, std::size_t t_in, std::size_t t_out,
                                   std::size_t stride = 1);

}  // namespace ordcast
