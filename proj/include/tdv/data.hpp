#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "tdv/tensor.hpp"

namespace tdv {

/// 8-bit binary PGM (P5) or PPM (P6); values scaled to [0, 1], shape (C, H, W).
Tensor load_image(const std::filesystem::path& path);
/// C = 1 writes P5, C = 3 writes P6. Values are clamped to [0, 1] and rounded.
void save_image(const Tensor& t, const std::filesystem::path& path);

struct Psnr {
  double db = 0.0;
  bool capped = false;  // identical inputs; db holds the cap
};

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for unit-range data.
Psnr psnr(const Tensor& x, const Tensor& y);
/// BT.601 luma of a (3, H, W) image as (1, H, W).
Tensor luminance(const Tensor& rgb);
/// PSNR on the luminance channel (plain PSNR for gray images).
Psnr psnr_y(const Tensor& x, const Tensor& y);

/// Procedural cartoon/texture images in [0, 1], fixed by the seed.
std::vector<Tensor> synthetic_images(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed);
/// Every PGM/PPM in a directory, sorted by file name.
std::vector<Tensor> load_image_dir(const std::filesystem::path& dir);

/// Element of the dihedral group of the square: bit 0 flips columns, bit 1
/// flips rows, bit 2 transposes (only for square inputs).
Tensor augment(const Tensor& t, unsigned code);

struct PatchSampler {
  std::vector<Tensor> images;
  std::size_t size = 33;
  bool flips = true;
  bool rotations = true;

  /// Uniform image, uniform offset, uniform group element.
  Tensor draw(std::mt19937_64& rng) const;
};

/// Fixed set of patches drawn from the sampler.
std::vector<Tensor> draw_patches(const PatchSampler& s, std::size_t n, std::uint64_t seed);

}  // namespace tdv
