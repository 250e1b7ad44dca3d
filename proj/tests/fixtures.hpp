#pragma once

#include <random>

#include "tdv/regularizer.hpp"

namespace fixtures {

inline tdv::Tensor uniform(tdv::Shape s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  tdv::Tensor t(std::move(s));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline tdv::Tensor randn(tdv::Shape s, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  tdv::Tensor t(std::move(s));
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline tdv::TdvArch arch(std::size_t a, std::size_t b, std::size_t m, std::size_t C = 1,
                         tdv::Potential p = tdv::Potential::identity) {
  tdv::TdvArch r;
  r.a = a;
  r.b = b;
  r.m = m;
  r.C = C;
  r.potential = p;
  return r;
}

// Single-scale TDV realizing R(x) = beta * sum phi(s Dx x) + phi(s Dy x), an
// edge-preserving smoothness prior with known behaviour.
inline tdv::TdvParams lorentzian(double s, double beta) {
  tdv::TdvParams th(arch(1, 1, 3));
  auto at = [](tdv::Tensor& k, std::size_t o, std::size_t i, std::size_t r, std::size_t c) -> double& {
    return k[((o * k.dim(1) + i) * 3 + r) * 3 + c];
  };
  tdv::Tensor& K = th.K();
  at(K, 0, 0, 1, 1) = -s;
  at(K, 0, 0, 1, 2) = s;
  at(K, 1, 0, 1, 1) = -s;
  at(K, 1, 0, 2, 1) = s;
  tdv::Tensor& k1 = th.tensors()[th.k1_index(0, 0, 0)];
  tdv::Tensor& k2 = th.tensors()[th.k2_index(0, 0, 0)];
  at(k1, 0, 0, 1, 1) = 1.0;
  at(k1, 1, 1, 1, 1) = 1.0;
  at(k2, 2, 0, 1, 1) = beta;
  at(k2, 2, 1, 1, 1) = beta;
  th.w()[2] = 1.0;
  return th;
}

}  // namespace fixtures
