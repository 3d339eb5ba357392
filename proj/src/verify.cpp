#include "ordcast/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ordcast/error.hpp"
#include "ordcast/kernels.hpp"
#include "ordcast/probcast.hpp"
#include "ordcast/raster.hpp"

namespace ordcast {

namespace {

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

Tensor as_hw(const Tensor& t, const char* what) {
  if (t.rank() == 2) return t;
  if (t.rank() == 3 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2)});
  throw DimensionError(std::string(what) + ": expected an H x W field, got " + t.shape_str());
}

Tensor binarize(const Tensor& rates, double thr, const Tensor* valid_from) {
  Tensor b(rates.shape());
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (valid_from && is_missing((*valid_from)[i])) continue;
    b[i] = rates[i] >= thr ? 1.0 : 0.0;
  }
  return b;
}

// Lead slice t of a T x H x W tensor as H x W.
Tensor slice(const Tensor& thw, std::size_t t) {
  const std::size_t hw = thw.dim(1) * thw.dim(2);
  std::vector<double> v(thw.vec().begin() + static_cast<std::ptrdiff_t>(t * hw),
                        thw.vec().begin() + static_cast<std::ptrdiff_t>((t + 1) * hw));
  return Tensor({thw.dim(1), thw.dim(2)}, std::move(v));
}

Tensor as_thw(const Tensor& t, const char* what) {
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.dim(1) == 1) return t.reshaped({t.dim(0), t.dim(2), t.dim(3)});
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  throw DimensionError(std::string(what) + ": expected T x H x W rates, got " + t.shape_str());
}

std::string threshold_label(double v) { return format_number(v); }

}  // namespace

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

ConfusionCounts accumulate_confusion(const Tensor& pred, const Tensor& obs, double threshold,
                                     const Tensor& valid) {
  require_same_shape(pred, obs, "accumulate_confusion");
  Tensor v = valid;
  if (v.empty()) {
    v = Tensor(obs.shape(), 1.0);
    for (std::size_t i = 0; i < obs.size(); ++i)
      if (is_missing(obs[i])) v[i] = 0.0;
  } else if (v.size() != obs.size()) {
    throw DimensionError("accumulate_confusion: valid mask does not match fields");
  }
  const auto c = kernels::confusion(pred.data().data(), obs.data().data(), v.data().data(),
                                    obs.size(), threshold);
  return {c.tp, c.fp, c.fn, c.tn};
}

CategoricalScores categorical_scores(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
               fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  CategoricalScores s;
  s.csi = ratio(tp, tp + fp + fn);
  s.fbi = ratio(tp + fp, tp + fn);
  s.hss = ratio(2.0 * (tp * tn - fn * fp), (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn));
  return s;
}

FssSums fss_sums(const Tensor& pred_binary, const Tensor& obs_binary, std::size_t window) {
  const Tensor p = as_hw(pred_binary, "fss"), o = as_hw(obs_binary, "fss");
  require_same_shape(p, o, "fss");
  const Tensor F = kernels::box_mean(p, window);
  const Tensor O = kernels::box_mean(o, window);
  FssSums s;
  for (std::size_t i = 0; i < F.size(); ++i) {
    const double d = F[i] - O[i];
    s.sq_diff += d * d;
    s.sq_sum += F[i] * F[i] + O[i] * O[i];
  }
  return s;
}

FssResult fss_from_sums(const FssSums& s) {
  if (s.sq_sum == 0.0) return {1.0, true};
  return {(s.sq_sum - s.sq_diff) / s.sq_sum, false};
}

FssResult fss(const Tensor& pred_binary, const Tensor& obs_binary, std::size_t window) {
  return fss_from_sums(fss_sums(pred_binary, obs_binary, window));
}

std::size_t window_for_neighbourhood(double km, double res_km) {
  if (!(km >= 0) || !(res_km > 0)) throw DomainError("window_for_neighbourhood: bad sizes");
  return 2 * static_cast<std::size_t>(std::nearbyint(km / (2.0 * res_km))) + 1;
}

ConfusionCounts pooled_confusion(const Tensor& pred, const Tensor& obs, std::size_t pool,
                                 double threshold) {
  const Tensor p = as_hw(pred, "pooled_csi"), o = as_hw(obs, "pooled_csi");
  require_same_shape(p, o, "pooled_csi");
  const std::size_t H = p.dim(0), W = p.dim(1);
  if (pool < 1 || H % pool != 0 || W % pool != 0)
    throw DimensionError("pooled_csi: pool " + std::to_string(pool) + " does not divide " +
                         p.shape_str());
  const std::size_t Ho = H / pool, Wo = W / pool;
  Tensor pp({Ho, Wo}), po({Ho, Wo});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (p.at(y, x) >= threshold) pp.at(y / pool, x / pool) = 1.0;
      if (!is_missing(o.at(y, x)) && o.at(y, x) >= threshold) po.at(y / pool, x / pool) = 1.0;
    }
  const auto c = kernels::confusion(pp.data().data(), po.data().data(), nullptr, pp.size(), 0.5);
  return {c.tp, c.fp, c.fn, c.tn};
}

std::optional<double> pooled_csi(const Tensor& pred, const Tensor& obs, std::size_t pool,
                                 double threshold) {
  return categorical_scores(pooled_confusion(pred, obs, pool, threshold)).csi;
}

ErrorSums error_sums(const Tensor& pred, const Tensor& obs, const Tensor& valid) {
  require_same_shape(pred, obs, "error_scores");
  if (!valid.empty() && valid.size() != obs.size())
    throw DimensionError("error_scores: valid mask does not match fields");
  ErrorSums s;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const bool ok = valid.empty() ? !is_missing(obs[i]) : valid[i] != 0.0;
    if (!ok) continue;
    const double d = pred[i] - obs[i];
    s.abs += std::abs(d);
    s.sq += d * d;
    ++s.n;
  }
  return s;
}

ErrorScores error_scores(const ErrorSums& s) {
  if (s.n == 0) return {};
  const double n = static_cast<double>(s.n);
  return {s.abs / n, s.sq / n};
}

ErrorScores error_scores(const Tensor& pred, const Tensor& obs, const Tensor& valid) {
  return error_scores(error_sums(pred, obs, valid));
}

double ssim(const Tensor& pred_in, const Tensor& obs_in, const SsimOptions& opt) {
  const Tensor x = as_hw(pred_in, "ssim"), y = as_hw(obs_in, "ssim");
  require_same_shape(x, y, "ssim");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (is_missing(x[i]) || is_missing(y[i]))
      throw PreconditionError("ssim: fields must not contain missing pixels");
  const std::size_t H = x.dim(0), W = x.dim(1), n = opt.window;
  if (n < 1 || n % 2 == 0) throw PreconditionError("ssim: window must be odd");
  if (H < n || W < n) throw DimensionError("ssim: field smaller than the window");

  std::vector<double> g(n * n);
  const double half = static_cast<double>(n / 2);
  double gsum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dy = static_cast<double>(i) - half, dx = static_cast<double>(j) - half;
      g[i * n + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * opt.sigma * opt.sigma));
      gsum += g[i * n + j];
    }
  for (double& v : g) v /= gsum;

  const auto [lo, hi] = std::minmax_element(y.vec().begin(), y.vec().end());
  double range = *hi - *lo;
  if (range == 0.0) range = 1.0;
  const double c1 = (opt.k1 * range) * (opt.k1 * range);
  const double c2 = (opt.k2 * range) * (opt.k2 * range);

  const std::size_t Ho = H - n + 1, Wo = W - n + 1;
  std::vector<double> per_row(Ho, 0.0);
  const long hl = static_cast<long>(Ho);
#pragma omp parallel for schedule(static)
  for (long ol = 0; ol < hl; ++ol) {
    const auto oy = static_cast<std::size_t>(ol);
    double row = 0.0;
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double wv = g[i * n + j];
          const double a = x.at(oy + i, ox + j), b = y.at(oy + i, ox + j);
          mx += wv * a;
          my += wv * b;
          sxx += wv * a * a;
          syy += wv * b * b;
          sxy += wv * a * b;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      row += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    per_row[oy] = row;
  }
  double total = 0.0;
  for (double r : per_row) total += r;
  return total / static_cast<double>(Ho * Wo);
}

nlohmann::json ReportConfig::to_json() const {
  nlohmann::json j;
  j["thresholds"] = thresholds;
  j["windows"] = windows;
  j["pools"] = pools;
  j["lead_min"] = lead_min;
  j["ssim"] = with_ssim;
  return j;
}

std::string SkillReport::to_csv() const {
  std::ostringstream os;
  os << "metric,threshold,lead_min,value\n";
  for (const auto& r : rows)
    os << r.metric << ',' << r.threshold << ',' << r.lead << ','
       << (r.value ? format_number(*r.value) : std::string()) << '\n';
  return os.str();
}

nlohmann::json SkillReport::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  auto& arr = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"metric", r.metric}, {"threshold", r.threshold}, {"lead_min", r.lead}};
    row["value"] = r.value ? nlohmann::json(*r.value) : nlohmann::json(nullptr);
    arr.push_back(std::move(row));
  }
  return j;
}

std::string SkillReport::plot_data_csv() const {
  std::vector<std::string> columns;
  std::vector<std::string> leads;
  std::map<std::pair<std::string, std::string>, std::string> cell;
  for (const auto& r : rows) {
    if (r.lead == "all") continue;
    const std::string col = r.threshold.empty() || r.threshold == "all"
                                ? r.metric + (r.threshold.empty() ? "" : "@all")
                                : r.metric + "@" + r.threshold;
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    if (std::find(leads.begin(), leads.end(), r.lead) == leads.end()) leads.push_back(r.lead);
    cell[{r.lead, col}] = r.value ? format_number(*r.value) : std::string();
  }
  std::ostringstream os;
  os << "lead_min";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  for (const auto& l : leads) {
    os << l;
    for (const auto& c : columns) {
      const auto it = cell.find({l, c});
      os << ',' << (it == cell.end() ? std::string() : it->second);
    }
    os << '\n';
  }
  return os.str();
}

const ReportRow* SkillReport::find(const std::string& metric, const std::string& threshold,
                                   const std::string& lead) const {
  for (const auto& r : rows)
    if (r.metric == metric && r.threshold == threshold && r.lead == lead) return &r;
  return nullptr;
}

ReportBuilder::ReportBuilder(ReportConfig config, std::optional<BinSet> bins)
    : cfg_(std::move(config)), bins_(std::move(bins)) {
  for (std::size_t w : cfg_.windows)
    if (w < 1 || w % 2 == 0) throw PreconditionError("report: FSS windows must be odd");
}

void ReportBuilder::init_leads(std::size_t T) {
  if (!cfg_.lead_min.empty() && cfg_.lead_min.size() != T)
    throw DimensionError("report: lead_min length does not match sample T");
  for (std::size_t t = 0; t < T; ++t)
    lead_labels_.push_back(cfg_.lead_min.empty() ? std::to_string(t)
                                                 : format_number(cfg_.lead_min[t]));
  const std::size_t nt = cfg_.thresholds.size();
  counts_.assign(nt, std::vector<ConfusionCounts>(T));
  fss_.assign(nt, std::vector<std::vector<FssSums>>(cfg_.windows.size(), std::vector<FssSums>(T)));
  pooled_.assign(nt, std::vector<std::vector<ConfusionCounts>>(cfg_.pools.size(),
                                                               std::vector<ConfusionCounts>(T)));
  errors_.assign(T, {});
  crps_sum_.assign(T, 0.0);
  crps_n_.assign(T, 0);
  ssim_sum_.assign(T, 0.0);
  ssim_n_.assign(T, 0);
}

void ReportBuilder::add(const EvalSample& s) {
  const Tensor pred = as_thw(s.pred, "report"), obs = as_thw(s.obs, "report");
  require_same_shape(pred, obs, "report");
  const std::size_t T = obs.dim(0);
  if (samples_ == 0)
    init_leads(T);
  else if (T != leads())
    throw DimensionError("report: samples disagree in lead count");
  const bool has_prob = !s.prob.empty();
  if (has_prob) {
    if (!bins_) throw PreconditionError("report: probability cube given without bins");
    if (s.prob.rank() != 4 || s.prob.dim(0) != T || s.prob.dim(2) != obs.dim(1) ||
        s.prob.dim(3) != obs.dim(2))
      throw DimensionError("report: probability cube does not match rates");
  }

  for (std::size_t t = 0; t < T; ++t) {
    const Tensor p = slice(pred, t), o = slice(obs, t);
    Tensor valid(o.shape(), 1.0);
    for (std::size_t i = 0; i < o.size(); ++i)
      if (is_missing(o[i])) valid[i] = 0.0;
    for (std::size_t k = 0; k < cfg_.thresholds.size(); ++k) {
      const double thr = cfg_.thresholds[k];
      counts_[k][t] += accumulate_confusion(p, o, thr, valid);
      // Outside coverage neither field holds an event.
      Tensor pb = binarize(p, thr, &o), ob = binarize(o, thr, &o);
      for (std::size_t wi = 0; wi < cfg_.windows.size(); ++wi)
        fss_[k][wi][t] += fss_sums(pb, ob, cfg_.windows[wi]);
      for (std::size_t pi = 0; pi < cfg_.pools.size(); ++pi)
        pooled_[k][pi][t] += pooled_confusion(p, o, cfg_.pools[pi], thr);
    }
    errors_[t] += error_sums(p, o, valid);
    if (has_prob) {
      const auto c = crps_sum(s.prob, obs, *bins_, t);
      crps_sum_[t] += c.value;
      crps_n_[t] += c.count;
    }
    if (cfg_.with_ssim) {
      Tensor pf = p, of = o;
      for (std::size_t i = 0; i < of.size(); ++i)
        if (valid[i] == 0.0) pf[i] = of[i] = 0.0;
      ssim_sum_[t] += ssim(pf, of);
      ++ssim_n_[t];
    }
  }
  ++samples_;
}

const ConfusionCounts& ReportBuilder::counts(std::size_t k, std::size_t t) const {
  return counts_.at(k).at(t);
}

SkillReport ReportBuilder::finish() const {
  if (samples_ == 0) throw PreconditionError("report: no samples");
  SkillReport rep;
  rep.config = cfg_.to_json();
  if (bins_) rep.config["bins"] = bins_->to_json();
  rep.config["samples"] = samples_;
  const std::size_t T = leads(), NT = cfg_.thresholds.size();

  auto mean_defined = [](const std::vector<std::optional<double>>& v) -> std::optional<double> {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : v)
      if (x) {
        s += *x;
        ++n;
      }
    if (!n) return std::nullopt;
    return s / static_cast<double>(n);
  };

  // Thresholded metric: value(k, t). Emits per-cell rows, then the macro
  // mean over thresholds per lead and the overall mean over leads.
  auto emit_thresholded = [&](const std::string& name, auto&& value) {
    std::vector<std::vector<std::optional<double>>> grid(NT, std::vector<std::optional<double>>(T));
    for (std::size_t k = 0; k < NT; ++k)
      for (std::size_t t = 0; t < T; ++t) {
        grid[k][t] = value(k, t);
        rep.rows.push_back({name, threshold_label(cfg_.thresholds[k]), lead_labels_[t], grid[k][t]});
      }
    std::vector<std::optional<double>> per_lead(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<std::optional<double>> col(NT);
      for (std::size_t k = 0; k < NT; ++k) col[k] = grid[k][t];
      per_lead[t] = mean_defined(col);
      rep.rows.push_back({name, "all", lead_labels_[t], per_lead[t]});
    }
    rep.rows.push_back({name, "all", "all", mean_defined(per_lead)});
  };
  auto emit_plain = [&](const std::string& name, auto&& value) {
    std::vector<std::optional<double>> per_lead(T);
    for (std::size_t t = 0; t < T; ++t) {
      per_lead[t] = value(t);
      rep.rows.push_back({name, "", lead_labels_[t], per_lead[t]});
    }
    rep.rows.push_back({name, "", "all", mean_defined(per_lead)});
  };

  emit_thresholded("csi", [&](std::size_t k, std::size_t t) {
    return categorical_scores(counts_[k][t]).csi;
  });
  emit_thresholded("fbi", [&](std::size_t k, std::size_t t) {
    return categorical_scores(counts_[k][t]).fbi;
  });
  emit_thresholded("hss", [&](std::size_t k, std::size_t t) {
    return categorical_scores(counts_[k][t]).hss;
  });
  for (std::size_t wi = 0; wi < cfg_.windows.size(); ++wi)
    emit_thresholded("fss_w" + std::to_string(cfg_.windows[wi]),
                     [&](std::size_t k, std::size_t t) -> std::optional<double> {
                       const auto r = fss_from_sums(fss_[k][wi][t]);
                       if (r.vacuous) return std::nullopt;
                       return r.value;
                     });
  for (std::size_t pi = 0; pi < cfg_.pools.size(); ++pi)
    emit_thresholded("csi_pool" + std::to_string(cfg_.pools[pi]),
                     [&](std::size_t k, std::size_t t) {
                       return categorical_scores(pooled_[k][pi][t]).csi;
                     });
  emit_plain("mae", [&](std::size_t t) { return error_scores(errors_[t]).mae; });
  emit_plain("mse", [&](std::size_t t) { return error_scores(errors_[t]).mse; });
  if (std::any_of(crps_n_.begin(), crps_n_.end(), [](std::size_t n) { return n > 0; }))
    emit_plain("crps", [&](std::size_t t) -> std::optional<double> {
      if (!crps_n_[t]) return std::nullopt;
      return crps_sum_[t] / static_cast<double>(crps_n_[t]);
    });
  if (cfg_.with_ssim)
    emit_plain("ssim", [&](std::size_t t) -> std::optional<double> {
      if (!ssim_n_[t]) return std::nullopt;
      return ssim_sum_[t] / static_cast<double>(ssim_n_[t]);
    });
  return rep;
}

SkillReport build_report(const std::vector<EvalSample>& samples, const ReportConfig& config,
                         std::optional<BinSet> bins) {
  if (samples.empty()) throw PreconditionError("build_report: empty sample stream");
  ReportBuilder b(config, std::move(bins));
  for (const auto& s : samples) b.add(s);
  return b.finish();
}

}  // namespace ordcast
