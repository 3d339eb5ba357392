#include "ordcast/intensity.hpp"

#include <algorithm>
#include <cmath>

#include "ordcast/error.hpp"

namespace ordcast {

double clip_dbz(double dbz) { return std::clamp(dbz, kDbzMin, kDbzMax); }

double dbz_to_rate(double dbz, bool missing) {
  if (missing) return kMissing;
  const double z = std::pow(10.0, clip_dbz(dbz) / 10.0);
  return std::pow(z / kMarshallPalmerA, 1.0 / kMarshallPalmerB);
}

double rate_to_dbz(double rate) {
  if (!(rate > 0)) throw DomainError("rate_to_dbz needs a positive rate");
  return 10.0 * std::log10(kMarshallPalmerA * std::pow(rate, kMarshallPalmerB));
}

Raster clip_dbz(const Raster& dbz) {
  Raster out = dbz;
  for (double& v : out.values)
    if (!is_missing(v)) v = clip_dbz(v);
  return out;
}

Raster dbz_to_rate(const Raster& dbz) {
  if (dbz.kind != RasterKind::Dbz) throw PreconditionError("dbz_to_rate: raster is not dBZ");
  Raster out = dbz;
  out.kind = RasterKind::Rate;
  for (double& v : out.values) v = dbz_to_rate(v, is_missing(v));
  return out;
}

BinSet::BinSet(std::vector<double> edges, double top_width, TopRepresentative top)
    : edges_(std::move(edges)), top_width_(top_width), top_(top) {
  if (edges_.empty()) throw PreconditionError("BinSet needs at least one edge");
  if (!(edges_.front() > 0)) throw PreconditionError("BinSet edges must be positive");
  for (std::size_t i = 1; i < edges_.size(); ++i)
    if (!(edges_[i] > edges_[i - 1]))
      throw PreconditionError("BinSet edges must be strictly increasing");
  if (!(top_width_ > 0)) throw PreconditionError("BinSet top_width must be positive");
}

BinSet BinSet::paper_europe() {
  return BinSet({0.1, 0.2, 0.4, 0.6, 0.8, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25}, 5.0);
}

BinSet BinSet::sevir() {
  // VIL pixel units; top width follows the widest finite bucket [181, 219).
  return BinSet({16, 31, 59, 74, 100, 133, 160, 181, 219, 255}, 38.0);
}

BinSet BinSet::preset(const std::string& name) {
  if (name == "paper-europe") return paper_europe();
  if (name == "sevir") return sevir();
  throw FormatError("unknown bin preset '" + name + "'");
}

double BinSet::width(std::size_t b) const {
  if (b == 0) return edges_.front();
  if (b < edges_.size()) return edges_[b] - edges_[b - 1];
  if (b == edges_.size()) return top_width_;
  throw DomainError("bucket index out of range");
}

std::vector<double> BinSet::widths() const {
  std::vector<double> w(k() + 1);
  for (std::size_t b = 0; b <= k(); ++b) w[b] = width(b);
  return w;
}

std::size_t BinSet::classify(double rate) const {
  if (rate < 0 || std::isnan(rate)) throw DomainError("classify: negative rate");
  return static_cast<std::size_t>(std::upper_bound(edges_.begin(), edges_.end(), rate) -
                                  edges_.begin());
}

double BinSet::representative(std::size_t b) const {
  if (b == 0) return 0.0;
  if (b < edges_.size()) return 0.5 * (edges_[b - 1] + edges_[b]);
  if (b == edges_.size())
    return top_ == TopRepresentative::LowerEdge ? edges_.back() : edges_.back() + 0.5 * top_width_;
  throw DomainError("bucket index out of range");
}

nlohmann::json BinSet::to_json() const {
  nlohmann::json j;
  j["edges"] = edges_;
  j["top_width"] = top_width_;
  j["top_representative"] = top_ == TopRepresentative::LowerEdge ? "lower_edge" : "midpoint";
  return j;
}

BinSet BinSet::from_json(const nlohmann::json& j) {
  try {
    if (j.is_string()) return preset(j.get<std::string>());
    if (j.is_array()) return BinSet(j.get<std::vector<double>>(), 5.0);
    for (const auto& [key, _] : j.items())
      if (key != "edges" && key != "top_width" && key != "top_representative")
        throw FormatError("unknown BinSet key '" + key + "'");
    auto top = TopRepresentative::LowerEdge;
    if (j.contains("top_representative")) {
      const auto s = j["top_representative"].get<std::string>();
      if (s == "midpoint")
        top = TopRepresentative::Midpoint;
      else if (s != "lower_edge")
        throw FormatError("unknown top_representative '" + s + "'");
    }
    return BinSet(j.at("edges").get<std::vector<double>>(), j.value("top_width", 5.0), top);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("BinSet: ") + e.what());
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("BinSet: ") + e.what());
  }
}

ClassMasks exceedance_masks(const Tensor& rates, const BinSet& bins) {
  Tensor r = rates;
  if (r.rank() == 4) {
    if (r.dim(1) != 1) throw DimensionError("exceedance_masks expects a single channel");
    r = r.reshaped({r.dim(0), r.dim(2), r.dim(3)});
  }
  if (r.rank() != 3) throw DimensionError("exceedance_masks expects T x H x W rates");
  const std::size_t T = r.dim(0), H = r.dim(1), W = r.dim(2), K = bins.k();
  ClassMasks m{Tensor({T, K, H, W}), Tensor({T, H, W})};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double v = r.at(t, y, x);
        if (is_missing(v)) continue;
        m.valid.at(t, y, x) = 1.0;
        for (std::size_t c = 0; c < K; ++c) m.masks.at(t, c, y, x) = v >= bins.edges()[c] ? 1.0 : 0.0;
      }
  return m;
}

ClassMasks exceedance_masks(const SourceStack& target, const BinSet& bins) {
  if (target.kind != RasterKind::Rate)
    throw PreconditionError("exceedance_masks: target must be in rate mode");
  return exceedance_masks(target.data, bins);
}

}  // namespace ordcast
