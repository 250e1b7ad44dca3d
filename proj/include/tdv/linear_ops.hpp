#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "tdv/tensor.hpp"

namespace tdv {

enum class OpKind { identity, downsample, masked_fourier, radon };
enum class ProxStrategy { scalar_closed_form, fourier_diagonal, conjugate_gradient };
enum class Boundary { replicate, periodic };

std::string to_string(OpKind k);
std::string to_string(ProxStrategy s);

using TensorMap = std::function<Tensor(const Tensor&)>;

struct CgConfig {
  double tol = 1e-10;  // relative residual
  int max_iter = 500;
};

struct CgResult {
  Tensor x;
  int iterations = 0;
  double residual = 0.0;  // relative
  bool converged = false;
};

/// Conjugate gradients for a symmetric positive (semi)definite map.
CgResult conjugate_gradient(const TensorMap& apply, const Tensor& rhs, Tensor x0, const CgConfig& cfg);

/// Largest singular value estimate of a linear map via power iteration on its normal map.
double power_norm(const TensorMap& normal, const Shape& domain, int iterations, std::uint64_t seed = 0x5eed);

/// Task operator A with adjoint, init map and solver for (Id + tau A^T A) v = r.
class LinearOp {
 public:
  virtual ~LinearOp() = default;

  virtual OpKind kind() const = 0;
  virtual ProxStrategy prox_strategy() const = 0;
  virtual std::string describe() const = 0;

  const Shape& domain() const { return domain_; }
  const Shape& range() const { return range_; }

  virtual Tensor forward(const Tensor& x) const = 0;
  virtual Tensor adjoint(const Tensor& y) const = 0;
  /// x_0 = A_init z.
  virtual Tensor init_map(const Tensor& z) const = 0;
  /// Transpose of init_map; only for linear init maps.
  virtual Tensor init_adjoint(const Tensor& x) const;
  Tensor normal(const Tensor& x) const { return adjoint(forward(x)); }

  /// Solves (Id + tau A^T A) v = r with the operator's strategy.
  Tensor prox(const Tensor& r, double tau) const;
  /// Same system by conjugate gradients, regardless of strategy.
  CgResult prox_cg(const Tensor& r, double tau) const;

  /// Cached upper estimate of ||A||_2.
  double opnorm() const;
  /// ||A_init||_2 (power iteration unless known in closed form).
  virtual double init_norm() const;
  /// ||(Id + tau A^T A)^{-1}||_2.
  virtual double prox_norm(double tau) const;

  CgConfig cg;

 protected:
  LinearOp(Shape domain, Shape range) : domain_(std::move(domain)), range_(std::move(range)) {}
  virtual Tensor prox_impl(const Tensor& r, double tau) const;
  virtual double opnorm_impl() const;
  void check_domain(const Tensor& x, const char* context) const;
  void check_range(const Tensor& y, const char* context) const;

 private:
  Shape domain_, range_;
  mutable std::once_flag norm_once_;
  mutable double norm_ = 0.0;
};

using LinearOpPtr = std::shared_ptr<const LinearOp>;

LinearOpPtr make_identity(std::size_t C, std::size_t H, std::size_t W);
/// Bicubic (Keys, a = -0.5) anti-aliased reduction by gamma in {2, 3, 4}.
LinearOpPtr make_downsample(std::size_t gamma, std::size_t C, std::size_t H, std::size_t W,
                            Boundary boundary = Boundary::replicate);
/// Masked unitary 2-D DFT; observations are (2C, H, W) real/imaginary pairs.
LinearOpPtr make_masked_fourier(const Tensor& mask, std::size_t C = 1);
/// Parallel-beam line integrals with linear interpolation, angles k*pi/n_angles.
LinearOpPtr make_radon(std::size_t n_angles, std::size_t n_detectors, std::size_t H, std::size_t W);

/// Bicubic reduction taps for one output sample, offsets relative to its first input.
std::vector<double> bicubic_taps(std::size_t gamma);
double keys_cubic(double t);

/// Every R-th k-space row plus all rows within center/2 of DC.
Tensor cartesian_mask(std::size_t H, std::size_t W, std::size_t R, std::size_t center);
/// Uniform disk of the given radius centred on an n x n grid, as (1, n, n).
Tensor disk_phantom(std::size_t n, double radius);

// Unnormalized complex 2-D DFT (FFTW, plans cached and shared).
std::vector<std::complex<double>> fft2(const std::vector<std::complex<double>>& in, std::size_t h, std::size_t w,
                                       bool inverse);

}  // namespace tdv
