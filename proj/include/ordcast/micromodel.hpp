#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordcast/intensity.hpp"
#include "ordcast/probcast.hpp"
#include "ordcast/tape.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

enum class OutputMode { SinglePass, LeadConditioned };
enum class LossKind { Ordinal, CrossEntropy };

struct ModelConfig {
  std::size_t t_in = 4;
  std::size_t t_out = 6;
  std::size_t k = 5;
  std::size_t stem_block = 2;
  std::size_t channels = 16;
  std::size_t n_blocks = 2;
  OutputMode mode = OutputMode::SinglePass;
  LossKind loss = LossKind::Ordinal;
  double alpha = 10.0;
  WeightForm weight_form = WeightForm::Ratio;
  std::uint64_t seed = 0;
  double rate_cap = 32.0;  // mm/h mapped to 1.0 at the input

  // Optimizer.
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double ema_decay = 0.99975;
  bool use_ema = true;
  std::size_t steps = 2000;
  std::size_t batch = 8;

  std::size_t input_channels() const;   // rates + validity (+ lead one-hot)
  std::size_t outputs_per_lead() const;  // K, or K+1 for cross-entropy
  std::size_t head_outputs() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Named parameter tensors in a fixed order, with an optional EMA shadow.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  std::vector<Tensor> ema;
  std::size_t step = 0;

  std::size_t count() const;  // total scalar parameters
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  // Shadow if present and requested, else the raw parameters.
  const std::vector<Tensor>& for_eval(bool use_ema) const {
    return use_ema && !ema.empty() ? ema : tensors;
  }
};

ParamSet init_params(const ModelConfig& cfg);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One training/evaluation example: t_in rate frames and t_out target rate
/// frames (T x H x W, kMissing for gaps).
struct Sample {
  Tensor input;
  Tensor target;
};

// Normalized network input (C x H x W): rates / cap clipped to [0, 1] with
// gaps imputed to 0, then one validity channel per frame, then (in
// lead-conditioned mode) a one-hot lead plane set.
Tensor encode_input(const Tensor& frames, const ModelConfig& cfg,
                    std::optional<std::size_t> lead = std::nullopt);

/// Stem space-to-depth -> 1x1 conv -> residual 3x3 blocks -> depth-to-space
/// -> concat with the input -> 1x1 head. Builds the graph on `tape` and
/// returns the logits node, (outputs) x H x W.
class Network {
 public:
  Network(ModelConfig cfg, const std::vector<Tensor>& params, Tape& tape, bool params_grad);

  Tape::Id logits(Tape::Id input);
  const std::vector<Tape::Id>& param_ids() const { return param_ids_; }
  std::size_t forwards() const { return forwards_; }

 private:
  ModelConfig cfg_;
  Tape& tape_;
  std::vector<Tape::Id> param_ids_;
  std::size_t forwards_ = 0;
};

class MicroModel {
 public:
  explicit MicroModel(ModelConfig cfg);
  MicroModel(ModelConfig cfg, ParamSet params);
  MicroModel(const MicroModel& o) : cfg_(o.cfg_), params_(o.params_) {}
  MicroModel(MicroModel&& o) noexcept : cfg_(std::move(o.cfg_)), params_(std::move(o.params_)) {}
  MicroModel& operator=(const MicroModel& o) {
    cfg_ = o.cfg_;
    params_ = o.params_;
    return *this;
  }

  const ModelConfig& config() const { return cfg_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  /// Conditional cube (T_out x K x H x W) of sigmoid outputs in ordinal mode,
  /// or bucket probabilities (T_out x (K+1) x H x W) in CE mode.
  Tensor forward(const Tensor& frames, bool use_ema = false) const;
  /// Raw logits, T_out x outputs_per_lead x H x W.
  Tensor logits(const Tensor& frames, bool use_ema = false) const;
  /// Monotone exceedance cube T_out x K x H x W.
  Tensor predict(const Tensor& frames, bool use_ema = false) const;

  struct LossAndGrad {
    double loss = 0.0;
    bool empty = false;
    std::vector<Tensor> grads;
  };
  /// Lead-weighted loss for one sample and its parameter gradients.
  LossAndGrad loss_and_grad(const Sample& s, const LeadWeights& lw, const BinSet& bins,
                            double seed = 1.0) const;
  double loss(const Sample& s, const LeadWeights& lw, const BinSet& bins) const;

  // Network-body evaluations since construction.
  std::size_t forward_count() const { return forward_count_.load(); }

 private:
  Tape::Id build(Tape& tape, const Tensor& frames, const std::vector<Tensor>& params,
                 bool params_grad, std::vector<Tape::Id>* param_ids) const;

  ModelConfig cfg_;
  ParamSet params_;
  mutable std::atomic<std::size_t> forward_count_{0};
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean batch loss per step
  std::size_t skipped = 0;         // fully-missing samples ignored
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// AdamW with decoupled weight decay, fixed learning rate, optional EMA.
/// Batches are drawn from a seed-determined permutation of `data`.
TrainResult train(MicroModel& model, const std::vector<Sample>& data, const BinSet& bins,
                  const StepCallback& on_step = {});

void save_checkpoint(const std::filesystem::path& base, const MicroModel& model,
                     const nlohmann::json& extra = {});
MicroModel load_checkpoint(const std::filesystem::path& base, nlohmann::json* extra = nullptr);

}  // namespace ordcast

namespace ordcast {

/// Output cells whose logits are summed into an attribution target.
struct AttributionTarget {
  std::size_t lead = 0;
  std::size_t cls = 0;                // class (ordinal) or bucket (CE) index
  std::vector<std::size_t> pixels{};  // flat y*W+x indices; empty = all
};

/// Sum of the selected logits for an already-encoded input (C x H x W), and
/// its gradient wrt that input when `grad` is non-null.
double target_logit_sum(const MicroModel& model, const Tensor& encoded,
                        const AttributionTarget& target, Tensor* grad, bool use_ema = false);

}  // namespace ordcast
