#include "ordcast/probcast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ordcast/error.hpp"

namespace ordcast {

namespace {

void require_cube(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw DimensionError(std::string(what) + ": expected T x K x H x W");
}

void require_targets(const Tensor& cube, std::size_t classes, const ClassMasks& m,
                     const LeadWeights& lw, const char* what) {
  if (m.masks.rank() != 4 || cube.dim(0) != m.t() || classes != m.k() || cube.dim(2) != m.h() ||
      cube.dim(3) != m.w())
    throw DimensionError(std::string(what) + ": cube " + cube.shape_str() +
                         " does not match targets " + m.masks.shape_str());
  if (lw.w.size() != m.t())
    throw DimensionError(std::string(what) + ": lead weights length does not match T");
}

}  // namespace

Tensor reconstruct(const Tensor& cond) {
  require_cube(cond, "reconstruct");
  const std::size_t T = cond.dim(0), K = cond.dim(1), HW = cond.dim(2) * cond.dim(3);
  Tensor p(cond.shape());
  for (std::size_t t = 0; t < T; ++t) {
    const double* q = cond.data().data() + t * K * HW;
    double* out = p.data().data() + t * K * HW;
    std::copy_n(q, HW, out);
    for (std::size_t c = 1; c < K; ++c)
      for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] = out[(c - 1) * HW + i] * q[c * HW + i];
  }
  return p;
}

LeadWeights lead_time_weights(double alpha, std::size_t t_out, WeightForm form) {
  if (!(alpha >= 1.0) && form == WeightForm::Ratio)
    throw DomainError("lead_time_weights: alpha must be >= 1");
  if (!(alpha >= 0.0)) throw DomainError("lead_time_weights: alpha must be >= 0");
  if (t_out < 1) throw DomainError("lead_time_weights: T must be >= 1");
  LeadWeights lw{std::vector<double>(t_out, 1.0), alpha, form};
  if (t_out == 1) return lw;
  std::vector<double> raw(t_out);
  for (std::size_t t = 0; t < t_out; ++t) {
    const double td = static_cast<double>(t);
    raw[t] = form == WeightForm::Ratio
                 ? std::pow(alpha, -td / static_cast<double>(t_out - 1))
                 : std::exp(-alpha * td);
  }
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  std::vector<double> norm(t_out);
  for (std::size_t t = 0; t < t_out; ++t) norm[t] = raw[t] / total;
  const double mean = std::accumulate(norm.begin(), norm.end(), 0.0) / static_cast<double>(t_out);
  for (std::size_t t = 0; t < t_out; ++t) lw.w[t] = norm[t] / mean;
  return lw;
}

LeadWeights uniform_weights(std::size_t t_out) { return LeadWeights{std::vector<double>(t_out, 1.0)}; }

LossResult ordinal_loss(const Tensor& cond, const ClassMasks& targets, const LeadWeights& lw,
                        bool want_grad) {
  require_cube(cond, "ordinal_loss");
  require_targets(cond, cond.dim(1), targets, lw, "ordinal_loss");
  const std::size_t T = cond.dim(0), K = cond.dim(1), HW = cond.dim(2) * cond.dim(3);
  LossResult res;
  if (want_grad) res.grad = Tensor(cond.shape());
  const double* q = cond.data().data();
  const double* y = targets.masks.data().data();
  const double* valid = targets.valid.data().data();

  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const double wt = lw.w[t];
    for (std::size_t c = 0; c < K; ++c) {
      const std::size_t base = (t * K + c) * HW;
      const std::size_t prev = (t * K + (c ? c - 1 : 0)) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (valid[t * HW + i] == 0.0) continue;
        if (c > 0 && y[prev + i] == 0.0) continue;
        const double qi = std::clamp(q[base + i], kProbEps, 1.0 - kProbEps);
        const double yi = y[base + i];
        sum += -wt * (yi * std::log(qi) + (1.0 - yi) * std::log(1.0 - qi));
        ++n;
        if (want_grad && q[base + i] > kProbEps && q[base + i] < 1.0 - kProbEps)
          res.grad[base + i] = -wt * (yi / qi - (1.0 - yi) / (1.0 - qi));
      }
    }
  }
  res.count = n;
  if (n == 0) {
    res.empty = true;
    return res;
  }
  res.value = sum / static_cast<double>(n);
  if (want_grad)
    for (double& g : res.grad.data()) g /= static_cast<double>(n);
  return res;
}

LossResult ce_loss(const Tensor& logits, const ClassMasks& targets, const LeadWeights& lw,
                   bool want_grad) {
  require_cube(logits, "ce_loss");
  if (logits.dim(1) < 2) throw DimensionError("ce_loss: need at least two buckets");
  require_targets(logits, logits.dim(1) - 1, targets, lw, "ce_loss");
  const std::size_t T = logits.dim(0), B = logits.dim(1), K = B - 1,
                    HW = logits.dim(2) * logits.dim(3);
  LossResult res;
  if (want_grad) res.grad = Tensor(logits.shape());
  std::vector<double> z(B);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const double wt = lw.w[t];
    for (std::size_t i = 0; i < HW; ++i) {
      if (targets.valid[t * HW + i] == 0.0) continue;
      std::size_t bucket = 0;
      for (std::size_t c = 0; c < K; ++c) bucket += targets.masks[(t * K + c) * HW + i] != 0.0;
      double zmax = -INFINITY;
      for (std::size_t b = 0; b < B; ++b) {
        z[b] = logits[(t * B + b) * HW + i];
        zmax = std::max(zmax, z[b]);
      }
      double se = 0.0;
      for (std::size_t b = 0; b < B; ++b) se += std::exp(z[b] - zmax);
      const double lse = zmax + std::log(se);
      sum += wt * (lse - z[bucket]);
      ++n;
      if (want_grad)
        for (std::size_t b = 0; b < B; ++b)
          res.grad[(t * B + b) * HW + i] =
              wt * (std::exp(z[b] - lse) - (b == bucket ? 1.0 : 0.0));
    }
  }
  res.count = n;
  if (n == 0) {
    res.empty = true;
    return res;
  }
  res.value = sum / static_cast<double>(n);
  if (want_grad)
    for (double& g : res.grad.data()) g /= static_cast<double>(n);
  return res;
}

Tensor bucket_softmax(const Tensor& logits) {
  require_cube(logits, "bucket_softmax");
  const std::size_t T = logits.dim(0), B = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  Tensor p(logits.shape());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < HW; ++i) {
      double zmax = -INFINITY;
      for (std::size_t b = 0; b < B; ++b) zmax = std::max(zmax, logits[(t * B + b) * HW + i]);
      double se = 0.0;
      for (std::size_t b = 0; b < B; ++b) se += std::exp(logits[(t * B + b) * HW + i] - zmax);
      for (std::size_t b = 0; b < B; ++b)
        p[(t * B + b) * HW + i] = std::exp(logits[(t * B + b) * HW + i] - zmax) / se;
    }
  return p;
}

Tensor bucket_probs_to_exceedance(const Tensor& probs) {
  require_cube(probs, "bucket_probs_to_exceedance");
  const std::size_t T = probs.dim(0), B = probs.dim(1), K = B - 1,
                    HW = probs.dim(2) * probs.dim(3);
  Tensor p({T, K, probs.dim(2), probs.dim(3)});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < HW; ++i) {
      // Summed from the top so each partial sum only grows toward c = 0.
      double tail = 0.0;
      for (std::size_t b = B - 1; b >= 1; --b) {
        tail += probs[(t * B + b) * HW + i];
        p[(t * K + (b - 1)) * HW + i] = std::min(tail, 1.0);
      }
    }
  return p;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 49; ++k) g.push_back(k / 50.0);
  return g;
}

nlohmann::json ThresholdTable::to_json() const {
  nlohmann::json j;
  j["edges"] = edges;
  j["lead_min"] = lead_min;
  std::vector<std::vector<double>> rows(k(), std::vector<double>(t()));
  std::vector<std::vector<int>> fb(k(), std::vector<int>(t()));
  for (std::size_t c = 0; c < k(); ++c)
    for (std::size_t ti = 0; ti < t(); ++ti) {
      rows[c][ti] = thr.at(c, ti);
      fb[c][ti] = fallback[c * t() + ti];
    }
  j["thresholds"] = rows;
  j["fallback"] = fb;
  return j;
}

ThresholdTable ThresholdTable::from_json(const nlohmann::json& j) {
  try {
    ThresholdTable tt;
    tt.edges = j.at("edges").get<std::vector<double>>();
    tt.lead_min = j.at("lead_min").get<std::vector<double>>();
    const auto rows = j.at("thresholds").get<std::vector<std::vector<double>>>();
    if (rows.size() != tt.edges.size()) throw FormatError("threshold rows do not match edges");
    const std::size_t T = tt.lead_min.size();
    tt.thr = Tensor({rows.size(), T});
    tt.fallback.assign(rows.size() * T, 0);
    for (std::size_t c = 0; c < rows.size(); ++c) {
      if (rows[c].size() != T) throw FormatError("threshold columns do not match lead times");
      for (std::size_t t = 0; t < T; ++t) {
        if (!(rows[c][t] > 0.0 && rows[c][t] < 1.0))
          throw FormatError("threshold outside (0, 1)");
        tt.thr.at(c, t) = rows[c][t];
      }
    }
    if (j.contains("fallback")) {
      const auto fb = j["fallback"].get<std::vector<std::vector<int>>>();
      for (std::size_t c = 0; c < fb.size() && c < rows.size(); ++c)
        for (std::size_t t = 0; t < fb[c].size() && t < T; ++t)
          tt.fallback[c * T + t] = static_cast<std::uint8_t>(fb[c][t] != 0);
    }
    return tt;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("threshold table: ") + e.what());
  }
}

void ThresholdTable::check_compatible(const BinSet& bins,
                                      const std::vector<double>& leads) const {
  if (edges != bins.edges()) throw FormatError("threshold table was calibrated for other bins");
  if (!leads.empty() && leads != lead_min)
    throw FormatError("threshold table was calibrated for other lead times");
}

ThresholdTable calibrate_thresholds(const std::vector<Tensor>& prob_cubes,
                                    const std::vector<ClassMasks>& targets, const BinSet& bins,
                                    std::vector<double> lead_min, const std::vector<double>& grid) {
  if (prob_cubes.empty()) throw PreconditionError("calibrate_thresholds: empty validation set");
  if (prob_cubes.size() != targets.size())
    throw DimensionError("calibrate_thresholds: cube/target count mismatch");
  if (grid.empty() || !std::is_sorted(grid.begin(), grid.end()) || grid.front() <= 0.0 ||
      grid.back() >= 1.0)
    throw PreconditionError("calibrate_thresholds: grid must be sorted inside (0, 1)");
  const std::size_t T = prob_cubes.front().dim(0), K = prob_cubes.front().dim(1);
  if (K != bins.k()) throw DimensionError("calibrate_thresholds: class count != bins");
  for (std::size_t s = 0; s < prob_cubes.size(); ++s) {
    require_cube(prob_cubes[s], "calibrate_thresholds");
    if (prob_cubes[s].dim(0) != T || prob_cubes[s].dim(1) != K)
      throw DimensionError("calibrate_thresholds: cubes disagree in T or K");
    require_targets(prob_cubes[s], K, targets[s], uniform_weights(T), "calibrate_thresholds");
  }
  if (lead_min.empty())
    for (std::size_t t = 0; t < T; ++t) lead_min.push_back(static_cast<double>(t));
  if (lead_min.size() != T) throw DimensionError("calibrate_thresholds: lead_min length != T");

  ThresholdTable tt{Tensor({K, T}, 0.5), bins.edges(), lead_min,
                    std::vector<std::uint8_t>(K * T, 0)};
  const std::size_t G = grid.size();
  const long cells = static_cast<long>(K * T);

#pragma omp parallel for schedule(dynamic)
  for (long cell = 0; cell < cells; ++cell) {
    const std::size_t c = static_cast<std::size_t>(cell) / T;
    const std::size_t t = static_cast<std::size_t>(cell) % T;
    // pos/neg[g]: events/non-events whose prob activates exactly candidates 0..g-1.
    std::vector<std::uint64_t> pos(G + 1, 0), neg(G + 1, 0);
    std::uint64_t events = 0;
    for (std::size_t s = 0; s < prob_cubes.size(); ++s) {
      const Tensor& p = prob_cubes[s];
      const ClassMasks& m = targets[s];
      const std::size_t HW = p.dim(2) * p.dim(3);
      const double* pp = p.data().data() + (t * K + c) * HW;
      const double* yy = m.masks.data().data() + (t * K + c) * HW;
      const double* vv = m.valid.data().data() + t * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (vv[i] == 0.0) continue;
        const auto g = static_cast<std::size_t>(
            std::upper_bound(grid.begin(), grid.end(), pp[i]) - grid.begin());
        if (yy[i] != 0.0) {
          ++pos[g];
          ++events;
        } else {
          ++neg[g];
        }
      }
    }
    if (events == 0) {
      tt.fallback[c * T + t] = 1;
      continue;
    }
    // Candidate g activates every pixel whose bin index exceeds g.
    std::uint64_t tp = 0, fp = 0;
    std::vector<std::uint64_t> tp_at(G), fp_at(G);
    for (std::size_t g = G; g-- > 0;) {
      tp += pos[g + 1];
      fp += neg[g + 1];
      tp_at[g] = tp;
      fp_at[g] = fp;
    }
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < G; ++g) {
      const std::uint64_t fn = events - tp_at[g];
      const double csi = static_cast<double>(tp_at[g]) /
                         static_cast<double>(tp_at[g] + fp_at[g] + fn);
      if (csi > best) {
        best = csi;
        best_g = g;
      }
    }
    tt.thr.at(c, t) = grid[best_g];
  }
  return tt;
}

Tensor extract_intensity(const Tensor& prob, const ThresholdTable& thr, const BinSet& bins) {
  require_cube(prob, "extract_intensity");
  const std::size_t T = prob.dim(0), K = prob.dim(1), H = prob.dim(2), W = prob.dim(3);
  if (K != bins.k() || thr.k() != K || thr.t() != T)
    throw DimensionError("extract_intensity: cube, thresholds and bins disagree");
  const std::size_t HW = H * W;
  Tensor out({T, H, W});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < HW; ++i) {
      std::size_t top = 0;
      for (std::size_t c = K; c-- > 0;)
        if (prob[(t * K + c) * HW + i] >= thr.at(c, t)) {
          top = c + 1;
          break;
        }
      out[t * HW + i] = bins.representative(top);
    }
  return out;
}

CrpsResult crps_sum(const Tensor& prob, const Tensor& rates, const BinSet& bins, std::size_t t) {
  const std::size_t K = prob.dim(1), HW = prob.dim(2) * prob.dim(3);
  const auto widths = bins.widths();
  CrpsResult r;
  for (std::size_t i = 0; i < HW; ++i) {
    const double obs = rates[t * HW + i];
    if (is_missing(obs)) continue;
    double s = 0.0;
    // Bucket 0 starts at 0 where both the forecast and observed CDF vanish.
    for (std::size_t b = 1; b <= K; ++b) {
      const double fc = 1.0 - prob[(t * K + (b - 1)) * HW + i];
      const double ob = obs < bins.edge(b) ? 1.0 : 0.0;
      s += (fc - ob) * (fc - ob) * widths[b];
    }
    r.value += s;
    ++r.count;
  }
  return r;
}

CrpsResult crps(const Tensor& prob, const Tensor& rates, const BinSet& bins) {
  require_cube(prob, "crps");
  if (prob.dim(1) != bins.k()) throw DimensionError("crps: class count != bins");
  Tensor r = rates;
  if (r.rank() == 4 && r.dim(1) == 1) r = r.reshaped({r.dim(0), r.dim(2), r.dim(3)});
  if (r.rank() != 3 || r.dim(0) != prob.dim(0) || r.dim(1) != prob.dim(2) ||
      r.dim(2) != prob.dim(3))
    throw DimensionError("crps: rates " + r.shape_str() + " do not match " + prob.shape_str());
  CrpsResult total;
  for (std::size_t t = 0; t < prob.dim(0); ++t) {
    const auto part = crps_sum(prob, r, bins, t);
    total.value += part.value;
    total.count += part.count;
  }
  if (total.count == 0) {
    total.undefined = true;
    total.value = 0.0;
    return total;
  }
  total.value /= static_cast<double>(total.count);
  return total;
}

}  // namespace ordcast
