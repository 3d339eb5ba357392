#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordcast/raster.hpp"
#include "ordcast/tensor.hpp"

namespace ordcast {

// Marshall-Palmer Z = a R^b.
inline constexpr double kMarshallPalmerA = 200.0;
inline constexpr double kMarshallPalmerB = 1.6;
inline constexpr double kDbzMin = -1.0;
inline constexpr double kDbzMax = 64.0;

double clip_dbz(double dbz);
// Rate in mm/h for a reflectivity; the input is clipped first. Pass
// missing=true to propagate the sentinel.
double dbz_to_rate(double dbz, bool missing = false);
double rate_to_dbz(double rate);

// Raster versions: pixels equal to kMissing stay missing.
Raster clip_dbz(const Raster& dbz);
Raster dbz_to_rate(const Raster& dbz);

enum class TopRepresentative { LowerEdge, Midpoint };

/// Ordered exceedance edges e_1 < ... < e_K (mm/h). Bucket 0 is [0, e_1),
/// bucket c is [e_c, e_{c+1}), bucket K is the open top [e_K, inf).
class BinSet {
 public:
  BinSet(std::vector<double> edges, double top_width,
         TopRepresentative top = TopRepresentative::LowerEdge);

  static BinSet paper_europe();
  static BinSet sevir();
  static BinSet preset(const std::string& name);

  std::size_t k() const { return edges_.size(); }
  const std::vector<double>& edges() const { return edges_; }
  double edge(std::size_t c) const { return edges_[c - 1]; }  // 1-based class index
  double top_width() const { return top_width_; }
  TopRepresentative top_representative() const { return top_; }

  // Width of bucket b in 0..K (bucket 0 is [0, e_1)).
  double width(std::size_t bucket) const;
  std::vector<double> widths() const;

  // Bucket index in 0..K; throws DomainError for negative rates.
  std::size_t classify(double rate) const;
  double representative(std::size_t bucket) const;

  nlohmann::json to_json() const;
  static BinSet from_json(const nlohmann::json& j);

  friend bool operator==(const BinSet&, const BinSet&) = default;

 private:
  std::vector<double> edges_;
  double top_width_;
  TopRepresentative top_;
};

/// Exceedance targets masks[t][c][h][w] = 1(R_t >= e_{c+1}) with a
/// validity map; masks are meaningless where valid is 0.
struct ClassMasks {
  Tensor masks;  // T x K x H x W, 0/1
  Tensor valid;  // T x H x W, 0/1

  std::size_t t() const { return masks.dim(0); }
  std::size_t k() const { return masks.dim(1); }
  std::size_t h() const { return masks.dim(2); }
  std::size_t w() const { return masks.dim(3); }
};

// `rates` is T x H x W (or T x 1 x H x W) in mm/h with kMissing for gaps.
ClassMasks exceedance_masks(const Tensor& rates, const BinSet& bins);
ClassMasks exceedance_masks(const SourceStack& target, const BinSet& bins);

inline std::size_t classify(double rate, const BinSet& bins) { return bins.classify(rate); }
inline double bucket_representative(const BinSet& bins, std::size_t bucket) {
  return bins.representative(bucket);
}

}  // namespace ordcast
