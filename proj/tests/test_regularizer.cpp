#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "reference_tdv.hpp"
#include "tdv/regularizer.hpp"

using namespace tdv;

namespace {

Tensor uniform(Shape s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = u(rng);
  return t;
}

double max_rel(const Tensor& a, const Tensor& b) { return norm_inf(a - b) / std::max(norm_inf(b), 1e-300); }

TdvArch arch(std::size_t a, std::size_t b, std::size_t m, std::size_t C = 1, Potential p = Potential::identity) {
  TdvArch r;
  r.a = a;
  r.b = b;
  r.m = m;
  r.C = C;
  r.potential = p;
  return r;
}

Tensor fd_grad(const Tensor& x, const TdvParams& th, double h) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor p = x, m = x;
    p[i] += h;
    m[i] -= h;
    g[i] = (tdv_energy(p, th) - tdv_energy(m, th)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("parameter enumeration") {
  CHECK(parameter_count(arch(3, 3, 32, 3)) - parameter_count(arch(3, 3, 32, 1)) == 576);
  CHECK(parameter_count(arch(3, 3, 32, 1)) == 387392);
  CHECK(parameter_count(arch(3, 3, 32, 3)) == 387968);
  TdvParams p(arch(3, 3, 32, 1));
  CHECK(p.K().size() == 288);
  CHECK(parameter_count(p) == parameter_count(p.arch()));
  CHECK(parameter_count(TdvParams(arch(2, 1, 4))) == parameter_count(arch(2, 1, 4)));
}

TEST_CASE("architecture audit: 2a-1 residual blocks per macro block") {
  for (std::size_t a : {1u, 2u, 3u, 4u}) {
    TdvParams p(arch(a, 2, 2));
    for (std::size_t i = 0; i < 2; ++i) CHECK(p.residual_blocks(i).size() == 2 * a - 1);
  }
  TdvParams p(arch(3, 1, 2));
  auto names = p.residual_blocks(0);
  CHECK(names.front() == "block0.scale0.slot0");
  CHECK(names[2] == "block0.scale2.slot0");
  CHECK(names.back() == "block0.scale0.slot1");
  // every tensor has a unique name
  std::set<std::string> seen;
  for (std::size_t i = 0; i < p.tensors().size(); ++i) seen.insert(p.name(i));
  CHECK(seen.size() == p.tensors().size());
}

TEST_CASE("inadmissible extents are rejected with the requirement") {
  TdvParams th = init_params(arch(3, 1, 4), 1);
  try {
    tdv_energy(Tensor(Shape{1, 6, 16}), th);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
    CHECK(std::string(e.what()).find(">= 8") != std::string::npos);
  }
  CHECK_THROWS_AS(tdv_energy(Tensor(Shape{3, 16, 16}), th), Error);
}

TEST_CASE("w = 0 gives zero energy and gradient") {
  std::mt19937_64 rng(2);
  TdvParams th = init_params(arch(2, 2, 4), 3);
  th.w().fill(0.0);
  Tensor x = uniform({1, 8, 8}, rng);
  CHECK(tdv_energy(x, th) == 0.0);
  CHECK(norm_inf(tdv_grad(x, th)) == 0.0);
}

TEST_CASE("energy matches the straight-line reference") {
  std::mt19937_64 rng(4);
  struct Case {
    TdvArch a;
    std::size_t H, W;
  };
  TdvArch zero_pad = arch(2, 2, 4);
  zero_pad.padding = Padding::zero;
  for (const Case& c : {Case{arch(3, 2, 4), 16, 16}, Case{arch(2, 1, 3, 3, Potential::log_student_t), 16, 16},
                        Case{arch(3, 1, 2, 1, Potential::ln_cosh), 13, 16}, Case{zero_pad, 16, 16}}) {
    TdvParams th = init_params(c.a, 5);
    Tensor x = uniform({c.a.C, c.H, c.W}, rng);
    const double e = tdv_energy(x, th);
    const double r = ref::energy(x, th);
    CHECK(std::abs(e - r) <= 1e-10 * std::max(1.0, std::abs(r)));
  }
}

TEST_CASE("radiometric shift invariance") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> cd(-10.0, 10.0);
  for (Potential p : {Potential::identity, Potential::log_student_t, Potential::ln_cosh}) {
    TdvParams th = init_params(arch(3, 2, 4, 1, p), 7);
    Tensor x = uniform({1, 16, 16}, rng);
    const double e = tdv_energy(x, th);
    for (int k = 0; k < 5; ++k) {
      const double c = cd(rng);
      Tensor xs = x;
      for (double& v : xs.data()) v += c;
      CHECK(std::abs(tdv_energy(xs, th) - e) <= 1e-10 * std::max(1.0, std::abs(e)));
    }
    CHECK(std::abs(sum(tdv_grad(x, th))) < 1e-10);
  }
}

TEST_CASE("gradient against finite differences and the dual-number reference") {
  std::mt19937_64 rng(8);
  for (TdvArch a : {arch(2, 1, 4), arch(3, 3, 8), arch(2, 1, 3, 3, Potential::ln_cosh)}) {
    TdvParams th = init_params(a, 9);
    Tensor x = uniform({a.C, 8, 8}, rng);
    Tensor g = tdv_grad(x, th);
    CHECK(max_rel(g, fd_grad(x, th, 1e-5)) < 1e-4);
    CHECK(max_rel(g, ref::gradient(x, th)) < 1e-10);
  }
}

TEST_CASE("Hessian-vector products") {
  std::mt19937_64 rng(10);
  for (TdvArch a : {arch(2, 1, 4), arch(3, 2, 4, 1, Potential::log_student_t)}) {
    TdvParams th = init_params(a, 11);
    Tensor x = uniform({1, 8, 8}, rng);
    Tensor p = uniform({1, 8, 8}, rng, -1, 1), q = uniform({1, 8, 8}, rng, -1, 1);
    CHECK(norm_inf(tdv_hvp(x, th, Tensor(x.shape()))) == 0.0);
    Tensor hp = tdv_hvp(x, th, p);
    const double l = dot(hp, q), r = dot(p, tdv_hvp(x, th, q));
    CHECK(std::abs(l - r) <= 1e-9 * std::max(1.0, std::abs(l)));
    const double h = 1e-4;
    Tensor fd = (tdv_grad(x + p * h, th) - tdv_grad(x - p * h, th)) * (1.0 / (2 * h));
    CHECK(max_rel(hp, fd) < 1e-4);
    CHECK(max_rel(hp, ref::hessian_vector(x, th, p)) < 1e-10);
  }
}

TEST_CASE("mixed second derivative in the parameters") {
  std::mt19937_64 rng(12);
  TdvParams th = init_params(arch(2, 1, 3), 13);
  Tensor x = uniform({1, 8, 8}, rng);
  Tensor u = uniform({1, 8, 8}, rng, -1, 1);
  auto g = record_energy(x, th);
  Tensor gx = energy_grad(g);
  CHECK(max_rel(gx, tdv_grad(x, th)) == 0.0);
  MixedHvp m = mixed_hvp(g, th, u, true);
  CHECK(max_rel(m.hx, tdv_hvp(x, th, u)) < 1e-13);
  // d/dtheta <grad_x R, u> == d/dx <grad_theta R, .> along u
  const double h = 1e-4;
  TdvParams gp = tdv_param_grad(x + u * h, th);
  TdvParams gm = tdv_param_grad(x - u * h, th);
  for (std::size_t i = 0; i < gp.tensors().size(); ++i) {
    Tensor fd = (gp.tensors()[i] - gm.tensors()[i]) * (1.0 / (2 * h));
    CHECK(max_rel(m.htheta.tensors()[i], fd) < 1e-4);
  }
}

TEST_CASE("parameter gradient against finite differences") {
  std::mt19937_64 rng(14);
  TdvParams th = init_params(arch(2, 1, 3, 1, Potential::log_student_t), 15);
  Tensor x = uniform({1, 8, 8}, rng);
  TdvParams g = tdv_param_grad(x, th);
  std::uniform_int_distribution<std::size_t> pick_t(0, th.tensors().size() - 1);
  for (int k = 0; k < 20; ++k) {
    const std::size_t ti = pick_t(rng);
    std::uniform_int_distribution<std::size_t> pick(0, th.tensors()[ti].size() - 1);
    const std::size_t i = pick(rng);
    const double h = 1e-5;
    TdvParams p = th, m = th;
    p.tensors()[ti][i] += h;
    m.tensors()[ti][i] -= h;
    const double fd = (tdv_energy(x, p) - tdv_energy(x, m)) / (2 * h);
    CHECK(std::abs(g.tensors()[ti][i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("gradient bound") {
  CHECK(residual_block_factor(2.0, 2.0) == 3.0);
  TdvParams zero(arch(2, 1, 4));
  CHECK(bound_CR(zero, 8, 8) == 0.0);

  std::mt19937_64 rng(16);
  TdvParams th = init_params(arch(2, 1, 4), 17);
  const double bound = bound_CR(th, 8, 8);
  CHECK(std::isfinite(bound));
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    Tensor x = uniform({1, 8, 8}, rng, -3, 3);
    worst = std::max(worst, norm2(tdv_grad(x, th)));
  }
  CHECK(worst <= bound);
}

TEST_CASE("checkpoint round trip") {
  TdvArch a = arch(2, 2, 3, 3, Potential::ln_cosh);
  TdvParams th = init_params(a, 18);
  auto path = std::filesystem::temp_directory_path() / "tdv_ckpt_test.tdv";
  save_checkpoint(path, th, 0.0123456789012345678);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.theta == th);
  CHECK(ck.T == 0.0123456789012345678);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
}

TEST_CASE("initialization is seeded and zero-mean") {
  TdvParams a = init_params(arch(2, 1, 4), 21), b = init_params(arch(2, 1, 4), 21);
  CHECK(a == b);
  CHECK(zero_mean_defect(a.K()) < 1e-14);
  CHECK(!(a == init_params(arch(2, 1, 4), 22)));
}
