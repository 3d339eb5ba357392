#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "ordcast/intensity.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

// Cubes are T x K x H x W tensors. A conditional cube holds
// q[t,0] = P(R >= e_1) and q[t,c] = P(R >= e_{c+1} | R >= e_c); a
// probability cube holds the unconditional exceedances P(R >= e_{c+1}).

inline constexpr double kProbEps = 1e-7;

/// Cumulative product along the class axis. Nonincreasing in c for any
/// input in [0, 1].
Tensor reconstruct(const Tensor& cond);

enum class WeightForm {
  Ratio,    // w[t] = alpha^(-t/(T-1)); first/last = alpha
  Literal,  // w[t] = exp(-alpha * t)
};

struct LeadWeights {
  std::vector<double> w;  // mean 1, nonincreasing
  double alpha = 1.0;
  WeightForm form = WeightForm::Ratio;
};

LeadWeights lead_time_weights(double alpha, std::size_t t_out, WeightForm form = WeightForm::Ratio);
LeadWeights uniform_weights(std::size_t t_out);

struct LossResult {
  double value = 0.0;
  std::size_t count = 0;  // |S|, or valid pixels for CE
  bool empty = false;     // no element contributed
  Tensor grad;            // d value / d input, filled when requested
};

/// Masked BCE on the conditional outputs, averaged over
/// S = {valid and (c == 0 or R >= e_c)} with per-lead weights applied per
/// element.
LossResult ordinal_loss(const Tensor& cond, const ClassMasks& targets, const LeadWeights& lw,
                        bool want_grad = false);

/// Softmax cross-entropy over K+1 bucket logits (T x (K+1) x H x W) against
/// the bucket of each valid pixel, lead-time weighted.
LossResult ce_loss(const Tensor& bucket_logits, const ClassMasks& targets, const LeadWeights& lw,
                   bool want_grad = false);

// Softmax over axis 1 of a T x (K+1) x H x W tensor.
Tensor bucket_softmax(const Tensor& logits);
// Tail sums p[c] = sum_{b > c} probs[b]: bucket probabilities to exceedances.
Tensor bucket_probs_to_exceedance(const Tensor& probs);

/// Activation thresholds per (class, lead time), K x T.
struct ThresholdTable {
  Tensor thr;                       // K x T
  std::vector<double> edges;        // bin edges used for calibration
  std::vector<double> lead_min;     // lead-time offsets
  std::vector<std::uint8_t> fallback;  // K*T, 1 where no event was observed

  double at(std::size_t c, std::size_t t) const { return thr.at(c, t); }
  std::size_t k() const { return thr.dim(0); }
  std::size_t t() const { return thr.dim(1); }

  nlohmann::json to_json() const;
  static ThresholdTable from_json(const nlohmann::json& j);
  // Throws FormatError if edges or lead times disagree.
  void check_compatible(const BinSet& bins, const std::vector<double>& lead_min) const;
};

std::vector<double> default_threshold_grid();

/// Per (class, lead) CSI-maximizing threshold over all validation pixels.
/// Ties go to the smaller candidate; unobserved classes fall back to 0.5.
ThresholdTable calibrate_thresholds(const std::vector<Tensor>& prob_cubes,
                                    const std::vector<ClassMasks>& targets, const BinSet& bins,
                                    std::vector<double> lead_min = {},
                                    const std::vector<double>& grid = default_threshold_grid());

/// Rate of the highest activated bucket per (t, pixel); T x H x W.
Tensor extract_intensity(const Tensor& prob, const ThresholdTable& thr, const BinSet& bins);

struct CrpsResult {
  double value = 0.0;
  std::size_t count = 0;
  bool undefined = false;
};

/// Bucket-discretized CRPS averaged over valid pixels and lead times.
/// `rates` is T x H x W.
CrpsResult crps(const Tensor& prob, const Tensor& rates, const BinSet& bins);
// Per-pixel CRPS sum and count, for accumulation across samples.
CrpsResult crps_sum(const Tensor& prob, const Tensor& rates, const BinSet& bins,
                    std::size_t lead);

}  // namespace ordcast
