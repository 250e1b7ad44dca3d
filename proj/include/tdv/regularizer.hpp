#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdv/conv.hpp"
#include "tdv/pointwise.hpp"
#include "tdv/tape.hpp"
#include "tdv/tensor.hpp"

namespace tdv {

struct TdvArch {
  std::size_t a = 3;  // scales
  std::size_t b = 3;  // macro blocks
  std::size_t m = 32;
  std::size_t C = 1;
  Potential potential = Potential::identity;
  Padding padding = Padding::replicate;

  bool operator==(const TdvArch&) const = default;
};

void validate(const TdvArch& arch);
/// Smallest admissible spatial extent: the coarsest scale keeps at least 2 pixels.
std::size_t min_extent(const TdvArch& arch);
/// Throws a shape error unless x is (C, H, W) with H, W >= min_extent.
void check_admissible(const TdvArch& arch, const Shape& x);

/// Learnable parameters, stored as a flat list of kernels:
///   0: K (m, C, 3, 3), zero mean
///   1: w (1, m, 1, 1)
///   then per macro block: residual pairs (k1, k2) for each (scale, slot),
///   followed by the a-1 down and a-1 up resampling kernels, all (m, m, 3, 3).
/// Scales j < a-1 carry two residual blocks (slot 0 before, slot 1 after the
/// coarser scales), the coarsest scale carries one.
class TdvParams {
 public:
  TdvParams() = default;
  explicit TdvParams(const TdvArch& arch);

  const TdvArch& arch() const { return arch_; }

  Tensor& K() { return t_[0]; }
  const Tensor& K() const { return t_[0]; }
  Tensor& w() { return t_[1]; }
  const Tensor& w() const { return t_[1]; }

  std::size_t k1_index(std::size_t block, std::size_t scale, std::size_t slot) const;
  std::size_t k2_index(std::size_t block, std::size_t scale, std::size_t slot) const { return k1_index(block, scale, slot) + 1; }
  std::size_t down_index(std::size_t block, std::size_t scale) const;
  std::size_t up_index(std::size_t block, std::size_t scale) const;

  std::vector<Tensor>& tensors() { return t_; }
  const std::vector<Tensor>& tensors() const { return t_; }
  std::string name(std::size_t index) const;

  /// Residual blocks per macro block, in evaluation order (2a - 1 entries).
  std::vector<std::string> residual_blocks(std::size_t block) const;

  void project();  // zero-mean projection of K
  bool operator==(const TdvParams&) const = default;

 private:
  std::size_t block_base(std::size_t block) const;

  TdvArch arch_;
  std::vector<Tensor> t_;
};

std::size_t parameter_count(const TdvArch& arch);
std::size_t parameter_count(const TdvParams& p);

/// Gaussian kernels with std 1/sqrt(fan_in); K projected to zero mean.
TdvParams init_params(const TdvArch& arch, std::uint64_t seed);

// Flat vector views used by optimizers and the parameter-stability analysis.
double dot(const TdvParams& a, const TdvParams& b);
double norm2(const TdvParams& p);
TdvParams zeros_like(const TdvParams& p);
/// y += alpha * x
void axpy(double alpha, const TdvParams& x, TdvParams& y);

/// Recorded evaluation of R(x, theta). After backward on energy, mixed_hvp
/// reuses the recording for second-order products.
struct EnergyGraph {
  Tape tape;
  Var x;
  std::vector<Var> params;
  Var energy;
};

EnergyGraph record_energy(const Tensor& x, const TdvParams& theta, bool param_grad = false);

double tdv_energy(const Tensor& x, const TdvParams& theta);
Tensor tdv_grad(const Tensor& x, const TdvParams& theta);
Tensor tdv_hvp(const Tensor& x, const TdvParams& theta, const Tensor& p);
/// Gradient of R with respect to every parameter tensor.
TdvParams tdv_param_grad(const Tensor& x, const TdvParams& theta);

/// Gradient of R w.r.t. x on a recorded graph (runs the reverse sweep).
Tensor energy_grad(EnergyGraph& g);

struct MixedHvp {
  Tensor hx;         // D_1^2 R u
  TdvParams htheta;  // d/dtheta <D_1 R, u>, only when requested
};
/// Second-order products along u; energy_grad must have been called on g.
MixedHvp mixed_hvp(EnergyGraph& g, const TdvParams& theta, const Tensor& u, bool with_theta);

/// Lipschitz factor of x -> x + K2 phi(K1 x) given bounds on |K1| and |K2|.
double residual_block_factor(double k1_norm, double k2_norm);
/// Certified bound on ||D N|| for the block network, from per-kernel Schur bounds.
double bound_CN(const TdvParams& theta);
/// Certified bound on sup_x ||D_1 R(x, theta)||_2 for H x W images.
/// ||psi'(r)||_2 grows like sqrt(H W), so the image size enters.
double bound_CR(const TdvParams& theta, std::size_t height, std::size_t width);

struct Checkpoint {
  TdvParams theta;
  double T = 0.0;
};
void save_checkpoint(const std::filesystem::path& path, const TdvParams& theta, double T);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tdv
