#include "ordcast/micromodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ordcast/error.hpp"
#include "ordcast/raster.hpp"

namespace ordcast {

namespace {

const char* mode_name(OutputMode m) {
  return m == OutputMode::SinglePass ? "single-pass" : "lead-conditioned";
}
const char* loss_name(LossKind l) { return l == LossKind::Ordinal ? "ordinal" : "ce"; }
const char* form_name(WeightForm f) { return f == WeightForm::Ratio ? "ratio" : "literal"; }

}  // namespace

std::size_t ModelConfig::input_channels() const {
  return 2 * t_in + (mode == OutputMode::LeadConditioned ? t_out : 0);
}

std::size_t ModelConfig::outputs_per_lead() const {
  return loss == LossKind::Ordinal ? k : k + 1;
}

std::size_t ModelConfig::head_outputs() const {
  return mode == OutputMode::SinglePass ? t_out * outputs_per_lead() : outputs_per_lead();
}

void ModelConfig::validate() const {
  if (!t_in || !t_out || !k || !stem_block || !channels || !batch)
    throw PreconditionError("model config: sizes must be positive");
  if (channels % (stem_block * stem_block) != 0)
    throw PreconditionError("model config: channels must be divisible by stem_block^2");
  if (!(rate_cap > 0) || !(lr > 0) || !(alpha >= 1.0 || weight_form == WeightForm::Literal))
    throw PreconditionError("model config: rate_cap, lr must be positive and alpha >= 1");
  if (ema_decay < 0 || ema_decay >= 1) throw PreconditionError("model config: ema_decay in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"t_in", t_in},
          {"t_out", t_out},
          {"k", k},
          {"stem_block", stem_block},
          {"channels", channels},
          {"n_blocks", n_blocks},
          {"mode", mode_name(mode)},
          {"loss", loss_name(loss)},
          {"alpha", alpha},
          {"weight_form", form_name(weight_form)},
          {"seed", seed},
          {"rate_cap", rate_cap},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"weight_decay", weight_decay},
          {"ema_decay", ema_decay},
          {"use_ema", use_ema},
          {"steps", steps},
          {"batch", batch}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  const nlohmann::json defaults = c.to_json();
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw FormatError("model config: unknown key '" + key + "'");
  try {
    c.t_in = j.value("t_in", c.t_in);
    c.t_out = j.value("t_out", c.t_out);
    c.k = j.value("k", c.k);
    c.stem_block = j.value("stem_block", c.stem_block);
    c.channels = j.value("channels", c.channels);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    const auto mode = j.value("mode", std::string(mode_name(c.mode)));
    if (mode == "single-pass")
      c.mode = OutputMode::SinglePass;
    else if (mode == "lead-conditioned")
      c.mode = OutputMode::LeadConditioned;
    else
      throw FormatError("model config: unknown mode '" + mode + "'");
    const auto loss = j.value("loss", std::string(loss_name(c.loss)));
    if (loss == "ordinal")
      c.loss = LossKind::Ordinal;
    else if (loss == "ce")
      c.loss = LossKind::CrossEntropy;
    else
      throw FormatError("model config: unknown loss '" + loss + "'");
    const auto form = j.value("weight_form", std::string(form_name(c.weight_form)));
    if (form == "ratio")
      c.weight_form = WeightForm::Ratio;
    else if (form == "literal")
      c.weight_form = WeightForm::Literal;
    else
      throw FormatError("model config: unknown weight_form '" + form + "'");
    c.alpha = j.value("alpha", c.alpha);
    c.seed = j.value("seed", c.seed);
    c.rate_cap = j.value("rate_cap", c.rate_cap);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.use_ema = j.value("use_ema", c.use_ema);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const PreconditionError& e) {
    throw FormatError(e.what());
  }
  return c;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

Tensor& ParamSet::get(const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw PreconditionError("no parameter named " + name);
  return tensors[static_cast<std::size_t>(it - names.begin())];
}

const Tensor& ParamSet::get(const std::string& name) const {
  return const_cast<ParamSet*>(this)->get(name);
}

ParamSet init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamSet p;
  auto add = [&](std::string name, std::vector<std::size_t> shape, bool random) {
    Tensor t(std::move(shape));
    if (random) {
      const std::size_t fan_in = t.dim(1) * t.dim(2) * t.dim(3);
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.data()) v = u(rng);
    }
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(t));
  };
  const std::size_t b2 = cfg.stem_block * cfg.stem_block;
  const std::size_t C = cfg.channels;
  add("stem.w", {C, cfg.input_channels() * b2, 1, 1}, true);
  add("stem.b", {C}, false);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    const std::string pre = "block" + std::to_string(i);
    add(pre + ".conv1.w", {C, C, 3, 3}, true);
    add(pre + ".conv1.b", {C}, false);
    add(pre + ".conv2.w", {C, C, 3, 3}, true);
    add(pre + ".conv2.b", {C}, false);
  }
  // Zero head: every initial output is exactly sigmoid(0) = 0.5.
  add("head.w", {cfg.head_outputs(), C / b2 + cfg.input_channels(), 1, 1}, false);
  add("head.b", {cfg.head_outputs()}, false);
  return p;
}

Tensor encode_input(const Tensor& frames, const ModelConfig& cfg, std::optional<std::size_t> lead) {
  Tensor f = frames;
  if (f.rank() == 4 && f.dim(1) == 1) f = f.reshaped({f.dim(0), f.dim(2), f.dim(3)});
  if (f.rank() != 3 || f.dim(0) != cfg.t_in)
    throw DimensionError("model input must be t_in x H x W, got " + f.shape_str());
  const std::size_t H = f.dim(1), W = f.dim(2), HW = H * W;
  if (H % cfg.stem_block != 0 || W % cfg.stem_block != 0)
    throw DimensionError("model input size must be divisible by stem_block");
  Tensor x({cfg.input_channels(), H, W});
  for (std::size_t t = 0; t < cfg.t_in; ++t)
    for (std::size_t i = 0; i < HW; ++i) {
      const double v = f[t * HW + i];
      if (is_missing(v)) continue;
      x[t * HW + i] = std::clamp(v / cfg.rate_cap, 0.0, 1.0);
      x[(cfg.t_in + t) * HW + i] = 1.0;
    }
  if (cfg.mode == OutputMode::LeadConditioned) {
    if (!lead || *lead >= cfg.t_out)
      throw PreconditionError("lead-conditioned input needs a lead index < t_out");
    std::fill_n(x.vec().begin() + static_cast<std::ptrdiff_t>((2 * cfg.t_in + *lead) * HW), HW, 1.0);
  }
  return x;
}

Network::Network(ModelConfig cfg, const std::vector<Tensor>& params, Tape& tape, bool params_grad)
    : cfg_(std::move(cfg)), tape_(tape) {
  for (const auto& p : params) param_ids_.push_back(tape_.leaf(p, params_grad));
}

Tape::Id Network::logits(Tape::Id input) {
  ++forwards_;
  std::size_t pi = 0;
  auto next = [&] { return param_ids_[pi++]; };
  const Tape::Id sw = next(), sb = next();
  Tape::Id h = tape_.space_to_depth(input, cfg_.stem_block);
  h = tape_.silu(tape_.conv2d(h, sw, sb));
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    const Tape::Id w1 = next(), b1 = next(), w2 = next(), b2 = next();
    const Tape::Id inner = tape_.conv2d(tape_.silu(tape_.conv2d(h, w1, b1)), w2, b2);
    h = tape_.add(h, inner);
  }
  h = tape_.depth_to_space(tape_.silu(h), cfg_.stem_block);
  const Tape::Id features = tape_.concat({h, input});
  const Tape::Id hw = next(), hb = next();
  return tape_.conv2d(features, hw, hb);
}

MicroModel::MicroModel(ModelConfig cfg) : cfg_(std::move(cfg)), params_(init_params(cfg_)) {}

MicroModel::MicroModel(ModelConfig cfg, ParamSet params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  const ParamSet shape_ref = init_params(cfg_);
  if (shape_ref.names != params_.names)
    throw FormatError("parameter names do not match the model config");
  for (std::size_t i = 0; i < params_.tensors.size(); ++i)
    if (!params_.tensors[i].same_shape(shape_ref.tensors[i]) ||
        (!params_.ema.empty() && !params_.ema[i].same_shape(shape_ref.tensors[i])))
      throw FormatError("parameter " + params_.names[i] + " has the wrong shape");
}

Tape::Id MicroModel::build(Tape& tape, const Tensor& frames, const std::vector<Tensor>& params,
                           bool params_grad, std::vector<Tape::Id>* param_ids) const {
  Network net(cfg_, params, tape, params_grad);
  if (param_ids) *param_ids = net.param_ids();
  const std::size_t P = cfg_.outputs_per_lead();
  Tape::Id out;
  std::size_t H = 0, W = 0;
  if (cfg_.mode == OutputMode::SinglePass) {
    const Tensor x = encode_input(frames, cfg_);
    H = x.dim(1);
    W = x.dim(2);
    out = net.logits(tape.leaf(x));
  } else {
    std::vector<Tape::Id> per_lead;
    for (std::size_t t = 0; t < cfg_.t_out; ++t) {
      const Tensor x = encode_input(frames, cfg_, t);
      H = x.dim(1);
      W = x.dim(2);
      per_lead.push_back(net.logits(tape.leaf(x)));
    }
    out = tape.concat(per_lead);
  }
  forward_count_ += net.forwards();
  // (T*P) x H x W -> T x P x H x W: time-major channel split.
  return tape.reshape(out, {cfg_.t_out, P, H, W});
}

Tensor MicroModel::logits(const Tensor& frames, bool use_ema) const {
  Tape tape;
  const Tape::Id id = build(tape, frames, params_.for_eval(use_ema), false, nullptr);
  return tape.value(id);
}

Tensor MicroModel::forward(const Tensor& frames, bool use_ema) const {
  const Tensor z = logits(frames, use_ema);
  if (cfg_.loss == LossKind::CrossEntropy) return bucket_softmax(z);
  Tensor q = z;
  for (double& v : q.data()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return q;
}

Tensor MicroModel::predict(const Tensor& frames, bool use_ema) const {
  const Tensor out = forward(frames, use_ema);
  return cfg_.loss == LossKind::Ordinal ? reconstruct(out) : bucket_probs_to_exceedance(out);
}

MicroModel::LossAndGrad MicroModel::loss_and_grad(const Sample& s, const LeadWeights& lw,
                                                  const BinSet& bins, double seed) const {
  if (bins.k() != cfg_.k) throw DimensionError("model K does not match bins");
  const ClassMasks masks = exceedance_masks(s.target, bins);
  Tape tape;
  std::vector<Tape::Id> pids;
  const Tape::Id z = build(tape, s.input, params_.tensors, true, &pids);
  Tape::Id loss_id;
  bool empty = false;
  if (cfg_.loss == LossKind::Ordinal) {
    loss_id = tape.loss(tape.sigmoid(z), [&masks, &lw, &empty](const Tensor& q, bool g) {
      auto r = ordinal_loss(q, masks, lw, g);
      empty = r.empty;
      return r;
    });
  } else {
    loss_id = tape.loss(z, [&masks, &lw, &empty](const Tensor& l, bool g) {
      auto r = ce_loss(l, masks, lw, g);
      empty = r.empty;
      return r;
    });
  }
  LossAndGrad out;
  out.loss = tape.value(loss_id)[0];
  out.empty = empty;
  tape.backward(loss_id, seed);
  for (Tape::Id id : pids) out.grads.push_back(tape.grad(id));
  return out;
}

double MicroModel::loss(const Sample& s, const LeadWeights& lw, const BinSet& bins) const {
  if (bins.k() != cfg_.k) throw DimensionError("model K does not match bins");
  const ClassMasks masks = exceedance_masks(s.target, bins);
  const Tensor z = logits(s.input);
  if (cfg_.loss == LossKind::CrossEntropy) return ce_loss(z, masks, lw).value;
  return ordinal_loss(forward(s.input), masks, lw).value;
}

TrainResult train(MicroModel& model, const std::vector<Sample>& data, const BinSet& bins,
                  const StepCallback& on_step) {
  const ModelConfig& cfg = model.config();
  cfg.validate();
  if (data.empty()) throw PreconditionError("train: empty dataset");
  const LeadWeights lw = lead_time_weights(cfg.alpha, cfg.t_out, cfg.weight_form);
  ParamSet& ps = model.params();
  std::vector<Tensor> m1, m2;
  for (const auto& t : ps.tensors) {
    m1.emplace_back(t.shape());
    m2.emplace_back(t.shape());
  }
  if (ps.ema.empty()) ps.ema = ps.tensors;

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  TrainResult res;
  std::vector<std::size_t> batch(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& b : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      b = order[cursor++];
    }
    std::vector<MicroModel::LossAndGrad> parts(batch.size());
    const long nb = static_cast<long>(batch.size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < nb; ++i)
      parts[static_cast<std::size_t>(i)] =
          model.loss_and_grad(data[batch[static_cast<std::size_t>(i)]], lw, bins);

    // Fixed-order reduction over the batch.
    std::vector<Tensor> grad;
    for (const auto& t : ps.tensors) grad.emplace_back(t.shape());
    double loss_sum = 0.0;
    std::size_t used = 0;
    for (const auto& p : parts) {
      if (p.empty) {
        ++res.skipped;
        continue;
      }
      loss_sum += p.loss;
      ++used;
      for (std::size_t k = 0; k < grad.size(); ++k)
        for (std::size_t i = 0; i < grad[k].size(); ++i) grad[k][i] += p.grads[k][i];
    }
    if (used == 0) {
      res.loss_curve.push_back(0.0);
      continue;
    }
    const double inv = 1.0 / static_cast<double>(used);
    const double batch_loss = loss_sum * inv;
    if (!std::isfinite(batch_loss))
      throw DivergenceError("training diverged at step " + std::to_string(step) +
                            ": loss = " + std::to_string(batch_loss));

    ++ps.step;
    const double t = static_cast<double>(ps.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < ps.tensors.size(); ++k) {
      Tensor& p = ps.tensors[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grad[k][i] * inv;
        m1[k][i] = cfg.beta1 * m1[k][i] + (1.0 - cfg.beta1) * g;
        m2[k][i] = cfg.beta2 * m2[k][i] + (1.0 - cfg.beta2) * g * g;
        const double mh = m1[k][i] / bc1, vh = m2[k][i] / bc2;
        p[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.adam_eps) + cfg.weight_decay * p[i]);
        if (!std::isfinite(p[i]))
          throw DivergenceError("non-finite parameter " + ps.names[k] + " at step " +
                                std::to_string(step));
      }
    }
    // Warm-started shadow: early steps track the raw weights closely.
    const double decay = std::min(cfg.ema_decay, (1.0 + t) / (10.0 + t));
    for (std::size_t k = 0; k < ps.tensors.size(); ++k)
      for (std::size_t i = 0; i < ps.tensors[k].size(); ++i)
        ps.ema[k][i] = decay * ps.ema[k][i] + (1.0 - decay) * ps.tensors[k][i];

    res.loss_curve.push_back(batch_loss);
    if (on_step) on_step(step, batch_loss);
  }
  return res;
}

void save_checkpoint(const std::filesystem::path& base, const MicroModel& model,
                     const nlohmann::json& extra) {
  const ParamSet& ps = model.params();
  nlohmann::json man;
  man["config"] = model.config().to_json();
  man["step"] = ps.step;
  man["has_ema"] = !ps.ema.empty();
  auto& tensors = man["tensors"] = nlohmann::json::array();
  std::vector<double> payload;
  auto append = [&](const std::vector<Tensor>& set) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (&set == &ps.tensors)
        tensors.push_back({{"name", ps.names[i]}, {"shape", set[i].shape()}, {"offset", payload.size()}});
      payload.insert(payload.end(), set[i].vec().begin(), set[i].vec().end());
    }
  };
  append(ps.tensors);
  if (!ps.ema.empty()) append(ps.ema);
  if (!extra.is_null()) man["extra"] = extra;
  auto j = base;
  j += ".json";
  std::ofstream os(j);
  if (!os) throw FormatError("cannot write " + j.string());
  os << man.dump(2) << '\n';
  auto f = base;
  f += ".f32";
  write_f32(f, payload);
}

MicroModel load_checkpoint(const std::filesystem::path& base, nlohmann::json* extra) {
  auto j = base;
  j += ".json";
  std::ifstream is(j);
  if (!is) throw FormatError("cannot open " + j.string());
  try {
    const auto man = nlohmann::json::parse(is);
    const ModelConfig cfg = ModelConfig::from_json(man.at("config"));
    auto f = base;
    f += ".f32";
    const auto payload = read_f32(f);
    ParamSet ps;
    std::size_t total = 0;
    for (const auto& t : man.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto off = t.at("offset").get<std::size_t>();
      const std::size_t n = Tensor::count(shape);
      if (off + n > payload.size()) throw FormatError("checkpoint payload too short");
      ps.names.push_back(t.at("name").get<std::string>());
      ps.tensors.emplace_back(shape, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(off),
                                                         payload.begin() + static_cast<std::ptrdiff_t>(off + n)));
      total += n;
    }
    if (man.value("has_ema", false)) {
      std::size_t off = total;
      for (const auto& t : ps.tensors) {
        if (off + t.size() > payload.size()) throw FormatError("checkpoint EMA payload too short");
        ps.ema.emplace_back(t.shape(), std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(off),
                                                           payload.begin() + static_cast<std::ptrdiff_t>(off + t.size())));
        off += t.size();
      }
    }
    ps.step = man.value("step", std::size_t{0});
    if (extra) *extra = man.value("extra", nlohmann::json());
    return MicroModel(cfg, std::move(ps));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(j.string() + ": " + e.what());
  }
}

double target_logit_sum(const MicroModel& model, const Tensor& encoded,
                        const AttributionTarget& target, Tensor* grad, bool use_ema) {
  const ModelConfig& cfg = model.config();
  if (encoded.rank() != 3 || encoded.dim(0) != cfg.input_channels())
    throw DimensionError("attribution input must be encoded C x H x W");
  if (target.lead >= cfg.t_out || target.cls >= cfg.outputs_per_lead())
    throw PreconditionError("attribution target out of range");
  const std::size_t H = encoded.dim(1), W = encoded.dim(2), HW = H * W;
  Tape tape;
  Network net(cfg, model.params().for_eval(use_ema), tape, false);
  const Tape::Id x = tape.leaf(encoded, grad != nullptr);
  const Tape::Id z = net.logits(x);
  // Single-pass: channel lead*P + cls; lead-conditioned: the input already
  // carries the lead, so channel cls.
  const std::size_t ch = cfg.mode == OutputMode::SinglePass
                             ? target.lead * cfg.outputs_per_lead() + target.cls
                             : target.cls;
  Tensor seed(tape.value(z).shape());
  double total = 0.0;
  auto take = [&](std::size_t i) {
    if (i >= HW) throw PreconditionError("attribution pixel out of range");
    total += tape.value(z)[ch * HW + i];
    seed[ch * HW + i] += 1.0;
  };
  if (target.pixels.empty())
    for (std::size_t i = 0; i < HW; ++i) take(i);
  else
    for (std::size_t i : target.pixels) take(i);
  if (grad) {
    tape.backward(z, seed);
    *grad = tape.grad(x);
  }
  return total;
}

}  // namespace ordcast
