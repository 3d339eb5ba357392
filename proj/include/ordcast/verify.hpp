#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordcast/intensity.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Event on both sides is value >= threshold. `valid` may be empty (then
// pixels where obs is kMissing are skipped) or a 0/1 tensor shaped like obs.
ConfusionCounts accumulate_confusion(const Tensor& pred, const Tensor& obs, double threshold,
                                     const Tensor& valid = {});

struct CategoricalScores {
  std::optional<double> csi, fbi, hss;  // nullopt where the ratio is 0/0
};

CategoricalScores categorical_scores(const ConfusionCounts& c);

struct FssSums {
  double sq_diff = 0.0;  // sum (F - O)^2
  double sq_sum = 0.0;   // sum F^2 + sum O^2
  FssSums& operator+=(const FssSums& o) {
    sq_diff += o.sq_diff;
    sq_sum += o.sq_sum;
    return *this;
  }
};

struct FssResult {
  double value = 1.0;
  bool vacuous = false;  // both fields empty
};

// Binary H x W fields; window is the odd box side in pixels.
FssSums fss_sums(const Tensor& pred_binary, const Tensor& obs_binary, std::size_t window);
FssResult fss_from_sums(const FssSums& s);
FssResult fss(const Tensor& pred_binary, const Tensor& obs_binary, std::size_t window);

// Odd window for a neighbourhood size: 2 * round_half_even(km / (2 res)) + 1.
std::size_t window_for_neighbourhood(double neighbourhood_km, double res_km);

// Binarize at threshold, max-pool both fields with stride `pool`, count.
// Missing observations count as non-events.
ConfusionCounts pooled_confusion(const Tensor& pred, const Tensor& obs, std::size_t pool,
                                 double threshold);
std::optional<double> pooled_csi(const Tensor& pred, const Tensor& obs, std::size_t pool,
                                 double threshold);

struct ErrorSums {
  double abs = 0.0, sq = 0.0;
  std::size_t n = 0;
  ErrorSums& operator+=(const ErrorSums& o) {
    abs += o.abs;
    sq += o.sq;
    n += o.n;
    return *this;
  }
};

struct ErrorScores {
  std::optional<double> mae, mse;
};

ErrorSums error_sums(const Tensor& pred, const Tensor& obs, const Tensor& valid = {});
ErrorScores error_scores(const ErrorSums& s);
ErrorScores error_scores(const Tensor& pred, const Tensor& obs, const Tensor& valid = {});

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean SSIM over all fully-contained Gaussian windows of two H x W fields.
// Dynamic range is max(obs) - min(obs), or 1 for a constant observation.
double ssim(const Tensor& pred, const Tensor& obs, const SsimOptions& opt = {});

struct ReportConfig {
  std::vector<double> thresholds{0.5, 1, 2, 5, 10};
  std::vector<std::size_t> windows{1, 5, 11};
  std::vector<std::size_t> pools{};
  std::vector<double> lead_min{};
  bool with_ssim = false;

  nlohmann::json to_json() const;
};

/// One evaluation sample: T x H x W predicted and observed rates, plus an
/// optional T x K x H x W exceedance cube for CRPS.
struct EvalSample {
  Tensor pred;
  Tensor obs;
  Tensor prob;
};

struct ReportRow {
  std::string metric;
  std::string threshold;  // empty when not thresholded, "all" for macro rows
  std::string lead;       // lead in minutes, or "all"
  std::optional<double> value;
};

struct SkillReport {
  nlohmann::json config;
  std::vector<ReportRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  // Wide per-lead series: one column per (metric, threshold).
  std::string plot_data_csv() const;
  const ReportRow* find(const std::string& metric, const std::string& threshold,
                        const std::string& lead) const;
};

/// Micro-aggregating accumulator: counts and sums per (threshold, lead)
/// are summed over all samples, and scores are formed once in finish().
class ReportBuilder {
 public:
  ReportBuilder(ReportConfig config, std::optional<BinSet> bins = std::nullopt);

  void add(const EvalSample& s);
  std::size_t samples() const { return samples_; }
  // Throws PreconditionError when nothing was added.
  SkillReport finish() const;

  const ConfusionCounts& counts(std::size_t threshold_idx, std::size_t lead) const;

 private:
  std::size_t leads() const { return lead_labels_.size(); }
  void init_leads(std::size_t t);

  ReportConfig cfg_;
  std::optional<BinSet> bins_;
  std::vector<std::string> lead_labels_;
  std::size_t samples_ = 0;
  // Indexed [threshold][lead] / [threshold][window][lead] / [lead].
  std::vector<std::vector<ConfusionCounts>> counts_;
  std::vector<std::vector<std::vector<FssSums>>> fss_;
  std::vector<std::vector<std::vector<ConfusionCounts>>> pooled_;
  std::vector<ErrorSums> errors_;
  std::vector<double> crps_sum_;
  std::vector<std::size_t> crps_n_;
  std::vector<double> ssim_sum_;
  std::vector<std::size_t> ssim_n_;
};

SkillReport build_report(const std::vector<EvalSample>& samples, const ReportConfig& config,
                         std::optional<BinSet> bins = std::nullopt);

std::string format_number(double v);

}  // namespace ordcast
