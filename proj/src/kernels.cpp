#include "ordcast/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ordcast/error.hpp"

namespace ordcast::kernels {

namespace {

struct ConvDims {
  std::size_t cin, cout, h, w, k, pad;
};

ConvDims conv_dims(const Tensor& in, const Tensor& weight) {
  if (in.rank() != 3 || weight.rank() != 4 || weight.dim(1) != in.dim(0) ||
      weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0)
    throw DimensionError("conv2d: input " + in.shape_str() + " incompatible with kernel " +
                         weight.shape_str());
  return {in.dim(0), weight.dim(0), in.dim(1), in.dim(2), weight.dim(2), weight.dim(2) / 2};
}

// Valid x range [x0, x1) for kernel column kx so that x + kx - pad is inside.
inline void span_for(std::size_t kk, std::size_t pad, std::size_t n, std::size_t& lo,
                     std::size_t& hi) {
  lo = kk < pad ? pad - kk : 0;
  hi = std::min(n, n + pad - kk);
}

// One output channel of the forward pass.
inline void conv_forward_channel(const ConvDims& d, const double* in, const double* wgt,
                                 double bias, double* out) {
  const std::size_t hw = d.h * d.w;
  std::fill(out, out + hw, bias);
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const double* src = in + ci * hw;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      std::size_t y0, y1;
      span_for(ky, d.pad, d.h, y0, y1);
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const double wv = wgt[(ci * d.k + ky) * d.k + kx];
        std::size_t x0, x1;
        span_for(kx, d.pad, d.w, x0, x1);
        for (std::size_t y = y0; y < y1; ++y) {
          double* o = out + y * d.w;
          const double* s = src + (y + ky - d.pad) * d.w - d.pad + kx;
          for (std::size_t x = x0; x < x1; ++x) o[x] += wv * s[x];
        }
      }
    }
  }
}

inline void conv_grad_weight_channel(const ConvDims& d, const double* in, const double* gout,
                                     double* gw, double& gb) {
  const std::size_t hw = d.h * d.w;
  double sb = 0.0;
  for (std::size_t i = 0; i < hw; ++i) sb += gout[i];
  gb += sb;
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const double* src = in + ci * hw;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      std::size_t y0, y1;
      span_for(ky, d.pad, d.h, y0, y1);
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        std::size_t x0, x1;
        span_for(kx, d.pad, d.w, x0, x1);
        double acc = 0.0;
        for (std::size_t y = y0; y < y1; ++y) {
          const double* g = gout + y * d.w;
          const double* s = src + (y + ky - d.pad) * d.w - d.pad + kx;
          for (std::size_t x = x0; x < x1; ++x) acc += g[x] * s[x];
        }
        gw[(ci * d.k + ky) * d.k + kx] += acc;
      }
    }
  }
}

// Gradient wrt one input channel: transposed correlation over all outputs.
inline void conv_grad_input_channel(const ConvDims& d, std::size_t ci, const double* wgt,
                                    const double* gout, double* gin) {
  const std::size_t hw = d.h * d.w;
  std::fill(gin, gin + hw, 0.0);
  for (std::size_t co = 0; co < d.cout; ++co) {
    const double* g = gout + co * hw;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      std::size_t y0, y1;
      span_for(ky, d.pad, d.h, y0, y1);
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const double wv = wgt[((co * d.cin + ci) * d.k + ky) * d.k + kx];
        std::size_t x0, x1;
        span_for(kx, d.pad, d.w, x0, x1);
        for (std::size_t y = y0; y < y1; ++y) {
          const double* gr = g + y * d.w;
          double* dst = gin + (y + ky - d.pad) * d.w - d.pad + kx;
          for (std::size_t x = x0; x < x1; ++x) dst[x] += wv * gr[x];
        }
      }
    }
  }
}

void check_backward(const ConvDims& d, const Tensor& grad_out, const Tensor& gw, const Tensor& gb) {
  if (grad_out.rank() != 3 || grad_out.dim(0) != d.cout || grad_out.dim(1) != d.h ||
      grad_out.dim(2) != d.w || gw.size() != d.cout * d.cin * d.k * d.k || gb.size() != d.cout)
    throw DimensionError("conv2d_backward: gradient shapes do not match");
}

inline Counts count_range(const double* pred, const double* obs, const double* valid,
                          std::size_t lo, std::size_t hi, double thr) {
  Counts c;
  for (std::size_t i = lo; i < hi; ++i) {
    if (valid && valid[i] == 0.0) continue;
    const bool p = pred[i] >= thr, o = obs[i] >= thr;
    c.tp += p && o;
    c.fp += p && !o;
    c.fn += !p && o;
    c.tn += !p && !o;
  }
  return c;
}

inline double sample_bilinear(const double* src, std::size_t h, std::size_t w, double sy,
                              double sx, double missing) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const double ay = sy - fy, ax = sx - fx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    const double wy = dy ? ay : 1.0 - ay;
    if (wy == 0.0) continue;
    const long y = y0 + dy;
    if (y < 0 || y >= static_cast<long>(h)) return missing;
    for (int dx = 0; dx < 2; ++dx) {
      const double wx = dx ? ax : 1.0 - ax;
      if (wx == 0.0) continue;
      const long x = x0 + dx;
      if (x < 0 || x >= static_cast<long>(w)) return missing;
      const double v = src[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
      if (v == missing) return missing;
      acc += wy * wx * v;
    }
  }
  return acc;
}

}  // namespace

void conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Tensor& out) {
  const ConvDims d = conv_dims(in, weight);
  if (bias.size() != d.cout) throw DimensionError("conv2d: bias size != output channels");
  if (out.shape() != std::vector<std::size_t>{d.cout, d.h, d.w}) out = Tensor({d.cout, d.h, d.w});
  const long cout = static_cast<long>(d.cout);
#pragma omp parallel for schedule(static)
  for (long co = 0; co < cout; ++co) {
    const auto c = static_cast<std::size_t>(co);
    conv_forward_channel(d, in.data().data(), weight.data().data() + c * d.cin * d.k * d.k,
                         bias[c], out.data().data() + c * d.h * d.w);
  }
}

void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out,
                     Tensor* grad_in, Tensor& grad_weight, Tensor& grad_bias) {
  const ConvDims d = conv_dims(in, weight);
  check_backward(d, grad_out, grad_weight, grad_bias);
  const long cout = static_cast<long>(d.cout);
#pragma omp parallel for schedule(static)
  for (long co = 0; co < cout; ++co) {
    const auto c = static_cast<std::size_t>(co);
    conv_grad_weight_channel(d, in.data().data(), grad_out.data().data() + c * d.h * d.w,
                             grad_weight.data().data() + c * d.cin * d.k * d.k, grad_bias[c]);
  }
  if (!grad_in) return;
  if (!grad_in->same_shape(in)) *grad_in = Tensor(in.shape());
  const long cin = static_cast<long>(d.cin);
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < cin; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    conv_grad_input_channel(d, c, weight.data().data(), grad_out.data().data(),
                            grad_in->data().data() + c * d.h * d.w);
  }
}

Tensor box_mean(const Tensor& field, std::size_t window) {
  if (field.rank() != 2) throw DimensionError("box_mean expects H x W");
  if (window < 1 || window % 2 == 0) throw PreconditionError("box_mean window must be odd");
  const std::size_t H = field.dim(0), W = field.dim(1), r = window / 2;
  // Summed-area table with a zero guard row/column.
  std::vector<double> sat((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < W; ++x) {
      row += field.at(y, x);
      sat[(y + 1) * (W + 1) + x + 1] = sat[y * (W + 1) + x + 1] + row;
    }
  }
  Tensor out({H, W});
  const long Hl = static_cast<long>(H);
#pragma omp parallel for schedule(static)
  for (long yl = 0; yl < Hl; ++yl) {
    const auto y = static_cast<std::size_t>(yl);
    const std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(H, y + r + 1);
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(W, x + r + 1);
      const double s = sat[y1 * (W + 1) + x1] - sat[y0 * (W + 1) + x1] -
                       sat[y1 * (W + 1) + x0] + sat[y0 * (W + 1) + x0];
      out.at(y, x) = s / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

Counts confusion(const double* pred, const double* obs, const double* valid, std::size_t n,
                 double threshold) {
  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<Counts> part(chunks);
  const long nc = static_cast<long>(chunks);
#pragma omp parallel for schedule(static)
  for (long ch = 0; ch < nc; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    part[c] = count_range(pred, obs, valid, c * kChunk, std::min(n, (c + 1) * kChunk), threshold);
  }
  Counts total;
  for (const auto& p : part) {
    total.tp += p.tp;
    total.fp += p.fp;
    total.fn += p.fn;
    total.tn += p.tn;
  }
  return total;
}

void shift_bilinear(const double* src, double* out, std::size_t h, std::size_t w, double dy,
                    double dx, double missing) {
  const long hl = static_cast<long>(h);
#pragma omp parallel for schedule(static)
  for (long yl = 0; yl < hl; ++yl) {
    const auto y = static_cast<std::size_t>(yl);
    for (std::size_t x = 0; x < w; ++x)
      out[y * w + x] = sample_bilinear(src, h, w, static_cast<double>(y) - dy,
                                       static_cast<double>(x) - dx, missing);
  }
}

namespace serial {

void conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Tensor& out) {
  const ConvDims d = conv_dims(in, weight);
  out = Tensor({d.cout, d.h, d.w});
  const long pad = static_cast<long>(d.pad);
  for (std::size_t co = 0; co < d.cout; ++co)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        double acc = bias[co];
        for (std::size_t ci = 0; ci < d.cin; ++ci)
          for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
              const long sy = static_cast<long>(y + ky) - pad;
              const long sx = static_cast<long>(x + kx) - pad;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(d.h) || sx >= static_cast<long>(d.w))
                continue;
              acc += weight.at(co, ci, ky, kx) * in.at(ci, sy, sx);
            }
        out.at(co, y, x) = acc;
      }
}

void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out,
                     Tensor* grad_in, Tensor& grad_weight, Tensor& grad_bias) {
  const ConvDims d = conv_dims(in, weight);
  check_backward(d, grad_out, grad_weight, grad_bias);
  if (grad_in) *grad_in = Tensor(in.shape());
  const long pad = static_cast<long>(d.pad);
  for (std::size_t co = 0; co < d.cout; ++co)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const double g = grad_out.at(co, y, x);
        grad_bias[co] += g;
        for (std::size_t ci = 0; ci < d.cin; ++ci)
          for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
              const long sy = static_cast<long>(y + ky) - pad;
              const long sx = static_cast<long>(x + kx) - pad;
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(d.h) || sx >= static_cast<long>(d.w))
                continue;
              grad_weight.at(co, ci, ky, kx) += g * in.at(ci, sy, sx);
              if (grad_in) grad_in->at(ci, sy, sx) += g * weight.at(co, ci, ky, kx);
            }
      }
}

Tensor box_mean(const Tensor& field, std::size_t window) {
  if (field.rank() != 2) throw DimensionError("box_mean expects H x W");
  if (window < 1 || window % 2 == 0) throw PreconditionError("box_mean window must be odd");
  const long H = static_cast<long>(field.dim(0)), W = static_cast<long>(field.dim(1));
  const long r = static_cast<long>(window / 2);
  Tensor out(field.shape());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      long n = 0;
      for (long yy = y - r; yy <= y + r; ++yy)
        for (long xx = x - r; xx <= x + r; ++xx) {
          if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
          s += field.at(yy, xx);
          ++n;
        }
      out.at(y, x) = s / static_cast<double>(n);
    }
  return out;
}

Counts confusion(const double* pred, const double* obs, const double* valid, std::size_t n,
                 double threshold) {
  return count_range(pred, obs, valid, 0, n, threshold);
}

void shift_bilinear(const double* src, double* out, std::size_t h, std::size_t w, double dy,
                    double dx, double missing) {
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out[y * w + x] = sample_bilinear(src, h, w, static_cast<double>(y) - dy,
                                       static_cast<double>(x) - dx, missing);
}

}  // namespace serial

}  // namespace ordcast::kernels
