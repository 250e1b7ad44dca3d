#include "tdv/regularizer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace tdv {

void validate(const TdvArch& arch) {
  if (arch.a < 1 || arch.b < 1 || arch.m < 1) throw Error(ErrorKind::config, "architecture needs a, b, m >= 1");
  if (arch.C != 1 && arch.C != 3) throw Error(ErrorKind::config, "architecture channels must be 1 or 3");
  if (arch.a > 12) throw Error(ErrorKind::config, "too many scales");
}

std::size_t min_extent(const TdvArch& arch) { return std::size_t{1} << arch.a; }

void check_admissible(const TdvArch& arch, const Shape& x) {
  if (x.size() != 3 || x[0] != arch.C) {
    throw Error(ErrorKind::shape, "regularizer expects (" + std::to_string(arch.C) + ", H, W) input, got " + to_string(x));
  }
  const std::size_t need = min_extent(arch);
  if (x[1] < need || x[2] < need) {
    throw Error(ErrorKind::shape, "input " + to_string(x) + " too small for " + std::to_string(arch.a) +
                                      " scales: need H, W >= " + std::to_string(need));
  }
}

TdvParams::TdvParams(const TdvArch& arch) : arch_(arch) {
  validate(arch);
  const std::size_t m = arch.m, a = arch.a;
  t_.emplace_back(Shape{m, arch.C, 3, 3});
  t_.emplace_back(Shape{1, m, 1, 1});
  for (std::size_t i = 0; i < arch.b; ++i) {
    for (std::size_t n = 0; n < 2 * (2 * a - 1); ++n) t_.emplace_back(Shape{m, m, 3, 3});
    for (std::size_t n = 0; n < 2 * (a - 1); ++n) t_.emplace_back(Shape{m, m, 3, 3});
  }
}

std::size_t TdvParams::block_base(std::size_t block) const {
  if (block >= arch_.b) throw Error(ErrorKind::shape, "block index out of range");
  return 2 + block * (6 * arch_.a - 4);
}

std::size_t TdvParams::k1_index(std::size_t block, std::size_t scale, std::size_t slot) const {
  const std::size_t a = arch_.a;
  if (scale >= a || slot > 1 || (scale == a - 1 && slot != 0)) throw Error(ErrorKind::shape, "no residual block at this slot");
  const std::size_t micro = scale + 1 < a ? 2 * scale + slot : 2 * (a - 1);
  return block_base(block) + 2 * micro;
}

std::size_t TdvParams::down_index(std::size_t block, std::size_t scale) const {
  if (scale + 1 >= arch_.a) throw Error(ErrorKind::shape, "no resampling kernel at the coarsest scale");
  return block_base(block) + 2 * (2 * arch_.a - 1) + scale;
}

std::size_t TdvParams::up_index(std::size_t block, std::size_t scale) const {
  return down_index(block, scale) + (arch_.a - 1);
}

std::string TdvParams::name(std::size_t index) const {
  if (index == 0) return "K";
  if (index == 1) return "w";
  const std::size_t per = 6 * arch_.a - 4;
  const std::size_t block = (index - 2) / per;
  std::size_t r = (index - 2) % per;
  const std::string prefix = "block" + std::to_string(block) + ".";
  if (r < 2 * (2 * arch_.a - 1)) {
    const std::size_t micro = r / 2;
    const std::size_t scale = micro / 2 < arch_.a - 1 ? micro / 2 : arch_.a - 1;
    const std::size_t slot = scale + 1 < arch_.a ? micro % 2 : 0;
    return prefix + "scale" + std::to_string(scale) + ".slot" + std::to_string(slot) + (r % 2 ? ".k2" : ".k1");
  }
  r -= 2 * (2 * arch_.a - 1);
  if (r < arch_.a - 1) return prefix + "down" + std::to_string(r);
  return prefix + "up" + std::to_string(r - (arch_.a - 1));
}

std::vector<std::string> TdvParams::residual_blocks(std::size_t block) const {
  std::vector<std::string> out;
  for (std::size_t j = 0; j + 1 < arch_.a; ++j) out.push_back(name(k1_index(block, j, 0)));
  out.push_back(name(k1_index(block, arch_.a - 1, 0)));
  for (std::size_t j = arch_.a - 1; j-- > 0;) out.push_back(name(k1_index(block, j, 1)));
  for (auto& s : out) s = s.substr(0, s.size() - 3);
  return out;
}

void TdvParams::project() { project_zero_mean(t_[0]); }

std::size_t parameter_count(const TdvArch& arch) {
  validate(arch);
  const std::size_t m = arch.m, a = arch.a;
  const std::size_t per_block = (2 * (2 * a - 1) + 2 * (a - 1)) * m * m * 9;
  return 9 * arch.C * m + m + arch.b * per_block;
}

std::size_t parameter_count(const TdvParams& p) {
  std::size_t n = 0;
  for (const auto& t : p.tensors()) n += t.size();
  return n;
}

TdvParams init_params(const TdvArch& arch, std::uint64_t seed) {
  TdvParams p(arch);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& t : p.tensors()) {
    const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
    const double s = 1.0 / std::sqrt(fan_in);
    for (double& v : t.data()) v = s * normal(rng);
  }
  p.project();
  return p;
}

namespace {
void require_same_arch(const TdvParams& a, const TdvParams& b, const char* context) {
  if (!(a.arch() == b.arch())) throw Error(ErrorKind::shape, std::string(context) + ": parameter architectures differ");
}
}  // namespace

double dot(const TdvParams& a, const TdvParams& b) {
  require_same_arch(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.tensors().size(); ++i) s += dot(a.tensors()[i], b.tensors()[i]);
  return s;
}

double norm2(const TdvParams& p) { return std::sqrt(dot(p, p)); }

TdvParams zeros_like(const TdvParams& p) { return TdvParams(p.arch()); }

void axpy(double alpha, const TdvParams& x, TdvParams& y) {
  require_same_arch(x, y, "axpy");
  for (std::size_t i = 0; i < x.tensors().size(); ++i) axpy(alpha, x.tensors()[i], y.tensors()[i]);
}

namespace {

Var residual(Tape& t, Var x, Var k1, Var k2, ConvGeometry g) {
  return t.add(x, t.conv(t.map(t.conv(x, k1, g), kPhi), k2, g));
}

}  // namespace

EnergyGraph record_energy(const Tensor& x, const TdvParams& theta, bool param_grad) {
  const TdvArch& arch = theta.arch();
  check_admissible(arch, x.shape());
  EnergyGraph g;
  Tape& t = g.tape;
  g.x = t.leaf(x, true);
  for (const auto& p : theta.tensors()) g.params.push_back(t.leaf(p, param_grad));
  const ConvGeometry same{1, arch.padding};
  const ConvGeometry down{2, arch.padding};
  const std::size_t a = arch.a;

  std::vector<std::size_t> hs{x.dim(1)}, ws{x.dim(2)};
  for (std::size_t j = 1; j < a; ++j) {
    hs.push_back((hs.back() + 1) / 2);
    ws.push_back((ws.back() + 1) / 2);
  }

  std::vector<Var> xs(a);
  xs[0] = t.conv(g.x, g.params[0], same);
  for (std::size_t i = 0; i < arch.b; ++i) {
    auto rb = [&](std::size_t j, std::size_t slot) {
      const std::size_t k = theta.k1_index(i, j, slot);
      xs[j] = residual(t, xs[j], g.params[k], g.params[k + 1], same);
    };
    for (std::size_t j = 0; j + 1 < a; ++j) {
      rb(j, 0);
      Var d = t.conv(xs[j], t.blur(g.params[theta.down_index(i, j)]), down);
      xs[j + 1] = xs[j + 1].valid() ? t.add(xs[j + 1], d) : d;
    }
    rb(a - 1, 0);
    for (std::size_t j = a - 1; j-- > 0;) {
      Var u = t.conv_adjoint(xs[j + 1], t.blur(g.params[theta.up_index(i, j)]), down, hs[j], ws[j]);
      xs[j] = t.add(xs[j], u);
      rb(j, 1);
    }
  }
  Var r = t.conv(xs[0], g.params[1], same);
  if (arch.potential != Potential::identity) r = t.map(r, potential_fn(arch.potential));
  g.energy = t.sum(r);
  return g;
}

double tdv_energy(const Tensor& x, const TdvParams& theta) {
  auto g = record_energy(x, theta);
  return g.tape.value(g.energy)[0];
}

Tensor energy_grad(EnergyGraph& g) {
  g.tape.backward(g.energy);
  return g.tape.grad(g.x);
}

Tensor tdv_grad(const Tensor& x, const TdvParams& theta) {
  auto g = record_energy(x, theta);
  return energy_grad(g);
}

Tensor tdv_hvp(const Tensor& x, const TdvParams& theta, const Tensor& p) {
  require_same_shape(x, p, "tdv_hvp");
  auto g = record_energy(x, theta);
  return g.tape.hvp(g.energy, g.x, p);
}

TdvParams tdv_param_grad(const Tensor& x, const TdvParams& theta) {
  auto g = record_energy(x, theta, true);
  g.tape.backward(g.energy);
  TdvParams out(theta.arch());
  for (std::size_t i = 0; i < g.params.size(); ++i) out.tensors()[i] = g.tape.grad(g.params[i]);
  return out;
}

MixedHvp mixed_hvp(EnergyGraph& g, const TdvParams& theta, const Tensor& u, bool with_theta) {
  for (Var p : g.params) g.tape.set_requires_grad(p, with_theta);
  g.tape.clear_tangents();
  g.tape.set_tangent(g.x, u);
  g.tape.propagate_tangents();
  g.tape.backward_tangent(g.energy);
  MixedHvp out;
  out.hx = g.tape.grad_tangent(g.x);
  if (with_theta) {
    out.htheta = TdvParams(theta.arch());
    for (std::size_t i = 0; i < g.params.size(); ++i) out.htheta.tensors()[i] = g.tape.grad_tangent(g.params[i]);
  }
  return out;
}

double residual_block_factor(double k1_norm, double k2_norm) { return 1.0 + 0.5 * k1_norm * k2_norm; }

double bound_CN(const TdvParams& theta) {
  const TdvArch& arch = theta.arch();
  const ConvGeometry same{1, arch.padding};
  const ConvGeometry down{2, arch.padding};
  const auto& t = theta.tensors();
  const std::size_t a = arch.a;
  auto rb = [&](std::size_t i, std::size_t j, std::size_t slot) {
    const std::size_t k = theta.k1_index(i, j, slot);
    return residual_block_factor(conv_opnorm_bound(t[k], same), conv_opnorm_bound(t[k + 1], same));
  };
  auto resample = [&](std::size_t k) { return conv_opnorm_bound(compose_blur(t[k]), down); };

  // L[j] bounds the Lipschitz constant of the map from the first feature map to scale j.
  std::vector<double> L(a, 0.0);
  std::vector<bool> live(a, false);
  L[0] = 1.0;
  live[0] = true;
  for (std::size_t i = 0; i < arch.b; ++i) {
    for (std::size_t j = 0; j + 1 < a; ++j) {
      L[j] *= rb(i, j, 0);
      const double d = resample(theta.down_index(i, j)) * L[j];
      L[j + 1] = live[j + 1] ? L[j + 1] + d : d;
      live[j + 1] = true;
    }
    L[a - 1] *= rb(i, a - 1, 0);
    for (std::size_t j = a - 1; j-- > 0;) {
      L[j] = (L[j] + resample(theta.up_index(i, j)) * L[j + 1]) * rb(i, j, 1);
    }
  }
  return L[0];
}

double bound_CR(const TdvParams& theta, std::size_t height, std::size_t width) {
  const TdvArch& arch = theta.arch();
  const double k_norm = conv_opnorm_bound(theta.K(), ConvGeometry{1, arch.padding});
  const double w_norm = norm2(theta.w());
  const double psi = std::sqrt(static_cast<double>(height * width)) * potential_lipschitz(arch.potential);
  return k_norm * bound_CN(theta) * w_norm * psi;
}

namespace {
constexpr const char* kCheckpointMagic = "TDVCKPT";
constexpr int kCheckpointVersion = 1;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TdvParams& theta, double T) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  const TdvArch& a = theta.arch();
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n'
     << "a " << a.a << '\n'
     << "b " << a.b << '\n'
     << "m " << a.m << '\n'
     << "C " << a.C << '\n'
     << "potential " << to_string(a.potential) << '\n'
     << "padding " << (a.padding == Padding::zero ? "zero" : "replicate") << '\n'
     << "T " << fmt17(T) << '\n'
     << "tensors " << theta.tensors().size() << '\n'
     << "end\n";
  for (const auto& t : theta.tensors()) write_tensor(os, t);
  if (!os) throw Error(ErrorKind::io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
  std::string line;
  std::getline(is, line);
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kCheckpointMagic || version != kCheckpointVersion) {
      throw Error(ErrorKind::io, path.string() + ": not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
    }
  }
  TdvArch arch;
  double T = 0.0;
  std::size_t count = 0;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    try {
      if (key == "a") arch.a = std::stoul(value);
      else if (key == "b") arch.b = std::stoul(value);
      else if (key == "m") arch.m = std::stoul(value);
      else if (key == "C") arch.C = std::stoul(value);
      else if (key == "potential") arch.potential = parse_potential(value);
      else if (key == "padding") arch.padding = value == "zero" ? Padding::zero : Padding::replicate;
      else if (key == "T") T = std::stod(value);
      else if (key == "tensors") count = std::stoul(value);
      else throw Error(ErrorKind::io, path.string() + ": unknown header key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::io, path.string() + ": bad header line '" + line + "'");
    }
  }
  if (line != "end") throw Error(ErrorKind::io, path.string() + ": truncated header");
  Checkpoint ck{TdvParams(arch), T};
  if (count != ck.theta.tensors().size()) throw Error(ErrorKind::io, path.string() + ": tensor count does not match architecture");
  for (auto& t : ck.theta.tensors()) {
    Tensor r = read_tensor(is);
    if (r.shape() != t.shape()) {
      throw Error(ErrorKind::io, path.string() + ": tensor " + to_string(r.shape()) + " where " + to_string(t.shape()) + " expected");
    }
    t = std::move(r);
  }
  return ck;
}

}  // namespace tdv
