#pragma once

#include "tdv/tensor.hpp"

namespace tdv {

enum class Padding { zero, replicate };

/// Stride and boundary handling of a 2-D cross-correlation. Kernels have odd
/// extents and are padded by (k - 1) / 2 on every side.
struct ConvGeometry {
  std::size_t stride = 1;
  Padding padding = Padding::replicate;
};

/// Output extent of a padded, strided correlation along one axis.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride);

// Raw primitives. x is (C_in, H, W), w is (C_out, C_in, kh, kw), y is (C_out, Ho, Wo).

Tensor conv2d_forward(const Tensor& x, const Tensor& w, ConvGeometry g);
/// Exact adjoint of conv2d_forward w.r.t. x, producing a (C_in, height, width) tensor.
Tensor conv2d_adjoint(const Tensor& y, const Tensor& w, ConvGeometry g, std::size_t height, std::size_t width);
/// Gradient of <conv2d_forward(x, w), gy> w.r.t. w.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, ConvGeometry g, std::size_t kh, std::size_t kw);

/// Learned convolution operator. No bias anywhere.
struct ConvKernel {
  Tensor weights;  // (out_channels, in_channels, kh, kw)
  std::size_t stride = 1;
  bool transposed = false;
  bool zero_mean = false;
  Padding padding = Padding::replicate;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kh() const { return weights.dim(2); }
  std::size_t kw() const { return weights.dim(3); }
  ConvGeometry geometry() const { return {stride, padding}; }
};

/// Correlation with k, or its exact adjoint when k.transposed. A transposed
/// kernel maps (out_channels, h, w) to (in_channels, stride*h, stride*w).
Tensor conv2d(const Tensor& input, const ConvKernel& k);
/// Transposed application with an explicit target extent.
Tensor conv2d(const Tensor& input, const ConvKernel& k, std::size_t height, std::size_t width);

/// Subtracts, per output channel, the mean over all taps and input channels.
void project_zero_mean(Tensor& w);
/// Largest |sum over taps and input channels| across output channels.
double zero_mean_defect(const Tensor& w);

/// Full 2-D convolution of each 3x3 slice with the separable binomial blur
/// [1,2,1]^T [1,2,1] / 16, giving 5x5 slices. Linear in w.
Tensor compose_blur(const Tensor& w3);
/// Adjoint of compose_blur.
Tensor compose_blur_adjoint(const Tensor& g5);

/// Certified upper bound on the operator 2-norm of conv2d_forward(., w) via the
/// Schur test; valid for every image extent.
double conv_opnorm_bound(const Tensor& w, ConvGeometry g);

}  // namespace tdv
