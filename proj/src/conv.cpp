#include "tdv/conv.hpp"

#include <algorithm>
#include <cmath>

namespace tdv {

namespace {

std::size_t pad_of(std::size_t k) { return (k - 1) / 2; }

void check_kernel(const Tensor& w, const char* context) {
  if (w.rank() != 4) throw Error(ErrorKind::shape, std::string(context) + ": kernel must be rank 4, got " + to_string(w.shape()));
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw Error(ErrorKind::shape, std::string(context) + ": kernel extents must be odd, got " + to_string(w.shape()));
  }
}

void check_image(const Tensor& x, const char* context) {
  if (x.rank() != 3) throw Error(ErrorKind::shape, std::string(context) + ": expected (C, H, W) image, got " + to_string(x.shape()));
}

// Materializes the padded input (C, H + 2ph, W + 2pw).
std::vector<double> pad_input(const Tensor& x, std::size_t ph, std::size_t pw, Padding mode) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t Hp = H + 2 * ph, Wp = W + 2 * pw;
  std::vector<double> xp(C * Hp * Wp, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < Hp; ++r) {
      const long ri = static_cast<long>(r) - static_cast<long>(ph);
      double* dst = xp.data() + (c * Hp + r) * Wp;
      if (mode == Padding::zero) {
        if (ri < 0 || ri >= static_cast<long>(H)) continue;
        const double* src = x.ptr() + (c * H + ri) * W;
        std::copy(src, src + W, dst + pw);
      } else {
        const std::size_t rc = static_cast<std::size_t>(std::clamp<long>(ri, 0, static_cast<long>(H) - 1));
        const double* src = x.ptr() + (c * H + rc) * W;
        std::fill(dst, dst + pw, src[0]);
        std::copy(src, src + W, dst + pw);
        std::fill(dst + pw + W, dst + Wp, src[W - 1]);
      }
    }
  }
  return xp;
}

// Adjoint of pad_input: folds a padded buffer back onto (C, H, W).
Tensor unpad_adjoint(const std::vector<double>& gp, std::size_t C, std::size_t H, std::size_t W, std::size_t ph,
                     std::size_t pw, Padding mode) {
  const std::size_t Hp = H + 2 * ph, Wp = W + 2 * pw;
  Tensor g(Shape{C, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < Hp; ++r) {
      const long ri = static_cast<long>(r) - static_cast<long>(ph);
      const double* src = gp.data() + (c * Hp + r) * Wp;
      if (mode == Padding::zero) {
        if (ri < 0 || ri >= static_cast<long>(H)) continue;
        double* dst = g.ptr() + (c * H + ri) * W;
        for (std::size_t q = 0; q < W; ++q) dst[q] += src[q + pw];
      } else {
        const std::size_t rc = static_cast<std::size_t>(std::clamp<long>(ri, 0, static_cast<long>(H) - 1));
        double* dst = g.ptr() + (c * H + rc) * W;
        for (std::size_t q = 0; q < pw; ++q) dst[0] += src[q];
        for (std::size_t q = 0; q < W; ++q) dst[q] += src[q + pw];
        for (std::size_t q = pw + W; q < Wp; ++q) dst[W - 1] += src[q];
      }
    }
  }
  return g;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride) {
  return (in + 2 * pad_of(kernel) - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, ConvGeometry g) {
  check_image(x, "conv2d");
  check_kernel(w, "conv2d");
  if (x.dim(0) != w.dim(1)) {
    throw Error(ErrorKind::shape, "conv2d: input " + to_string(x.shape()) + " incompatible with kernel " + to_string(w.shape()));
  }
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3), s = g.stride;
  const std::size_t ph = pad_of(kh), pw = pad_of(kw);
  const std::size_t Hp = H + 2 * ph, Wp = W + 2 * pw;
  const std::size_t Ho = conv_output_extent(H, kh, s), Wo = conv_output_extent(W, kw, s);
  const auto xp = pad_input(x, ph, pw, g.padding);
  Tensor y(Shape{O, Ho, Wo});
  const double* wp = w.ptr();
  for (std::size_t o = 0; o < O; ++o) {
    double* yo = y.ptr() + o * Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = xp.data() + c * Hp * Wp;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const double wv = wp[((o * C + c) * kh + u) * kw + v];
          if (wv == 0.0) continue;
          for (std::size_t i = 0; i < Ho; ++i) {
            const double* src = xc + (s * i + u) * Wp + v;
            double* dst = yo + i * Wo;
            if (s == 1) {
              for (std::size_t j = 0; j < Wo; ++j) dst[j] += wv * src[j];
            } else {
              for (std::size_t j = 0; j < Wo; ++j) dst[j] += wv * src[s * j];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor conv2d_adjoint(const Tensor& y, const Tensor& w, ConvGeometry g, std::size_t height, std::size_t width) {
  check_image(y, "conv2d_adjoint");
  check_kernel(w, "conv2d_adjoint");
  const std::size_t O = w.dim(0), C = w.dim(1), kh = w.dim(2), kw = w.dim(3), s = g.stride;
  const std::size_t Ho = conv_output_extent(height, kh, s), Wo = conv_output_extent(width, kw, s);
  if (y.dim(0) != O || y.dim(1) != Ho || y.dim(2) != Wo) {
    throw Error(ErrorKind::shape, "conv2d_adjoint: input " + to_string(y.shape()) + " incompatible with kernel " +
                                      to_string(w.shape()) + " and target " + std::to_string(height) + "x" +
                                      std::to_string(width));
  }
  const std::size_t ph = pad_of(kh), pw = pad_of(kw);
  const std::size_t Hp = height + 2 * ph, Wp = width + 2 * pw;
  std::vector<double> gp(C * Hp * Wp, 0.0);
  const double* wp = w.ptr();
  for (std::size_t o = 0; o < O; ++o) {
    const double* yo = y.ptr() + o * Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
      double* gc = gp.data() + c * Hp * Wp;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const double wv = wp[((o * C + c) * kh + u) * kw + v];
          if (wv == 0.0) continue;
          for (std::size_t i = 0; i < Ho; ++i) {
            double* dst = gc + (s * i + u) * Wp + v;
            const double* src = yo + i * Wo;
            if (s == 1) {
              for (std::size_t j = 0; j < Wo; ++j) dst[j] += wv * src[j];
            } else {
              for (std::size_t j = 0; j < Wo; ++j) dst[s * j] += wv * src[j];
            }
          }
        }
      }
    }
  }
  return unpad_adjoint(gp, C, height, width, ph, pw, g.padding);
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, ConvGeometry g, std::size_t kh, std::size_t kw) {
  check_image(x, "conv2d_weight_grad");
  check_image(gy, "conv2d_weight_grad");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = gy.dim(0), s = g.stride;
  const std::size_t ph = pad_of(kh), pw = pad_of(kw);
  const std::size_t Hp = H + 2 * ph, Wp = W + 2 * pw;
  const std::size_t Ho = conv_output_extent(H, kh, s), Wo = conv_output_extent(W, kw, s);
  if (gy.dim(1) != Ho || gy.dim(2) != Wo) {
    throw Error(ErrorKind::shape, "conv2d_weight_grad: cotangent " + to_string(gy.shape()) + " incompatible with input " +
                                      to_string(x.shape()));
  }
  const auto xp = pad_input(x, ph, pw, g.padding);
  Tensor gw(Shape{O, C, kh, kw});
  for (std::size_t o = 0; o < O; ++o) {
    const double* go = gy.ptr() + o * Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = xp.data() + c * Hp * Wp;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          double acc = 0.0;
          for (std::size_t i = 0; i < Ho; ++i) {
            const double* src = xc + (s * i + u) * Wp + v;
            const double* gr = go + i * Wo;
            if (s == 1) {
              for (std::size_t j = 0; j < Wo; ++j) acc += gr[j] * src[j];
            } else {
              for (std::size_t j = 0; j < Wo; ++j) acc += gr[j] * src[s * j];
            }
          }
          gw[((o * C + c) * kh + u) * kw + v] = acc;
        }
      }
    }
  }
  return gw;
}

Tensor conv2d(const Tensor& input, const ConvKernel& k) {
  if (!k.transposed) return conv2d_forward(input, k.weights, k.geometry());
  check_image(input, "conv2d");
  return conv2d(input, k, input.dim(1) * k.stride, input.dim(2) * k.stride);
}

Tensor conv2d(const Tensor& input, const ConvKernel& k, std::size_t height, std::size_t width) {
  if (!k.transposed) {
    Tensor y = conv2d_forward(input, k.weights, k.geometry());
    if (y.dim(1) != height || y.dim(2) != width) {
      throw Error(ErrorKind::shape, "conv2d: output " + to_string(y.shape()) + " does not match requested extent");
    }
    return y;
  }
  return conv2d_adjoint(input, k.weights, k.geometry(), height, width);
}

void project_zero_mean(Tensor& w) {
  const std::size_t O = w.dim(0);
  const std::size_t per = w.size() / O;
  for (std::size_t o = 0; o < O; ++o) {
    double* p = w.ptr() + o * per;
    double mean = 0.0;
    for (std::size_t i = 0; i < per; ++i) mean += p[i];
    mean /= static_cast<double>(per);
    for (std::size_t i = 0; i < per; ++i) p[i] -= mean;
  }
}

double zero_mean_defect(const Tensor& w) {
  const std::size_t O = w.dim(0);
  const std::size_t per = w.size() / O;
  double worst = 0.0;
  for (std::size_t o = 0; o < O; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += w[o * per + i];
    worst = std::max(worst, std::abs(s));
  }
  return worst;
}

namespace {
constexpr double kBinomial[3] = {0.25, 0.5, 0.25};
}

Tensor compose_blur(const Tensor& w3) {
  check_kernel(w3, "compose_blur");
  if (w3.dim(2) != 3 || w3.dim(3) != 3) throw Error(ErrorKind::shape, "compose_blur: expected 3x3 slices, got " + to_string(w3.shape()));
  const std::size_t slices = w3.dim(0) * w3.dim(1);
  Tensor w5(Shape{w3.dim(0), w3.dim(1), 5, 5});
  for (std::size_t n = 0; n < slices; ++n) {
    const double* src = w3.ptr() + n * 9;
    double* dst = w5.ptr() + n * 25;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t p = 0; p < 3; ++p)
          for (std::size_t q = 0; q < 3; ++q) dst[(a + p) * 5 + (b + q)] += src[a * 3 + b] * kBinomial[p] * kBinomial[q];
  }
  return w5;
}

Tensor compose_blur_adjoint(const Tensor& g5) {
  check_kernel(g5, "compose_blur_adjoint");
  const std::size_t slices = g5.dim(0) * g5.dim(1);
  Tensor g3(Shape{g5.dim(0), g5.dim(1), 3, 3});
  for (std::size_t n = 0; n < slices; ++n) {
    const double* src = g5.ptr() + n * 25;
    double* dst = g3.ptr() + n * 9;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t p = 0; p < 3; ++p)
          for (std::size_t q = 0; q < 3; ++q) dst[a * 3 + b] += src[(a + p) * 5 + (b + q)] * kBinomial[p] * kBinomial[q];
  }
  return g3;
}

double conv_opnorm_bound(const Tensor& w, ConvGeometry g) {
  check_kernel(w, "conv_opnorm_bound");
  const std::size_t O = w.dim(0), C = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  double max_row = 0.0;
  for (std::size_t o = 0; o < O; ++o) {
    double r = 0.0;
    for (std::size_t i = 0; i < C * kh * kw; ++i) r += std::abs(w[o * C * kh * kw + i]);
    max_row = std::max(max_row, r);
  }
  double max_col = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    double col = 0.0;
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t t = 0; t < kh * kw; ++t) col += std::abs(w[(o * C + c) * kh * kw + t]);
    max_col = std::max(max_col, col);
  }
  // Replicate padding maps up to floor(p/s)+1 taps per axis onto one border pixel.
  double mult = 1.0;
  if (g.padding == Padding::replicate) {
    mult = static_cast<double>((pad_of(kh) / g.stride + 1) * (pad_of(kw) / g.stride + 1));
  }
  return std::sqrt(max_row * max_col * mult);
}

}  // namespace tdv
