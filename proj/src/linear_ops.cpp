#include "tdv/linear_ops.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <tuple>

namespace tdv {

std::string to_string(OpKind k) {
  switch (k) {
    case OpKind::identity: return "identity";
    case OpKind::downsample: return "downsample";
    case OpKind::masked_fourier: return "masked_fourier";
    case OpKind::radon: return "radon";
  }
  return "?";
}

std::string to_string(ProxStrategy s) {
  switch (s) {
    case ProxStrategy::scalar_closed_form: return "scalar_closed_form";
    case ProxStrategy::fourier_diagonal: return "fourier_diagonal";
    case ProxStrategy::conjugate_gradient: return "conjugate_gradient";
  }
  return "?";
}

CgResult conjugate_gradient(const TensorMap& apply, const Tensor& rhs, Tensor x0, const CgConfig& cfg) {
  require_same_shape(rhs, x0, "conjugate_gradient");
  CgResult res;
  const double bnorm = norm2(rhs);
  if (bnorm == 0.0) {
    res.x = Tensor::zeros_like(rhs);
    res.converged = true;
    return res;
  }
  Tensor x = std::move(x0);
  Tensor r = rhs - apply(x);
  Tensor p = r;
  double rr = dot(r, r);
  int it = 0;
  while (std::sqrt(rr) > cfg.tol * bnorm && it < cfg.max_iter) {
    Tensor ap = apply(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;
    const double alpha = rr / pap;
    axpy(alpha, p, x);
    axpy(-alpha, ap, r);
    const double rr_new = dot(r, r);
    p *= rr_new / rr;
    p += r;
    rr = rr_new;
    ++it;
  }
  res.x = std::move(x);
  res.iterations = it;
  res.residual = std::sqrt(rr) / bnorm;
  res.converged = res.residual <= cfg.tol;
  return res;
}

double power_norm(const TensorMap& normal, const Shape& domain, int iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x(domain);
  for (double& v : x.data()) v = n(rng);
  x *= 1.0 / norm2(x);
  double lambda = 0.0;
  for (int i = 0; i < iterations; ++i) {
    Tensor y = normal(x);
    lambda = dot(x, y);
    const double ny = norm2(y);
    if (ny == 0.0) return 0.0;
    x = y * (1.0 / ny);
  }
  return std::sqrt(std::max(lambda, 0.0));
}

void LinearOp::check_domain(const Tensor& x, const char* context) const {
  if (x.shape() != domain_) {
    throw Error(ErrorKind::shape, std::string(context) + ": expected " + to_string(domain_) + ", got " + to_string(x.shape()));
  }
}

void LinearOp::check_range(const Tensor& y, const char* context) const {
  if (y.shape() != range_) {
    throw Error(ErrorKind::shape, std::string(context) + ": expected " + to_string(range_) + ", got " + to_string(y.shape()));
  }
}

Tensor LinearOp::init_adjoint(const Tensor&) const {
  throw Error(ErrorKind::config, describe() + ": init map is not linear");
}

Tensor LinearOp::prox(const Tensor& r, double tau) const {
  check_domain(r, "prox");
  if (tau == 0.0) return r;
  return prox_impl(r, tau);
}

CgResult LinearOp::prox_cg(const Tensor& r, double tau) const {
  check_domain(r, "prox");
  auto apply = [&](const Tensor& v) {
    Tensor out = normal(v);
    out *= tau;
    out += v;
    return out;
  };
  return conjugate_gradient(apply, r, r, cg);
}

Tensor LinearOp::prox_impl(const Tensor& r, double tau) const {
  CgResult res = prox_cg(r, tau);
  if (!res.converged) {
    std::ostringstream os;
    os << describe() << ": prox CG did not converge in " << res.iterations << " iterations, relative residual "
       << res.residual;
    throw Error(ErrorKind::numeric, os.str());
  }
  return std::move(res.x);
}

double LinearOp::opnorm_impl() const {
  return power_norm([this](const Tensor& x) { return normal(x); }, domain_, 200) * (1.0 + 1e-6);
}

double LinearOp::opnorm() const {
  std::call_once(norm_once_, [this] { norm_ = opnorm_impl(); });
  return norm_;
}

double LinearOp::init_norm() const {
  return power_norm([this](const Tensor& x) { return init_adjoint(init_map(x)); }, range_, 200);
}

double LinearOp::prox_norm(double tau) const {
  // The prox map is symmetric positive definite, so the Rayleigh quotient converges to its norm.
  std::mt19937_64 rng(0xb0b);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor x(domain());
  for (double& v : x.data()) v = n(rng);
  x *= 1.0 / norm2(x);
  double prev = 0.0, lambda = 0.0;
  for (int i = 0; i < 20; ++i) {
    Tensor y = prox(x, tau);
    lambda = dot(x, y);
    x = y * (1.0 / norm2(y));
    if (i > 0 && std::abs(lambda - prev) <= 1e-8 * lambda) break;
    prev = lambda;
  }
  return lambda;
}

// ---------------------------------------------------------------------------
// FFT

namespace {

struct PlanCache {
  std::mutex mu;
  std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan> plans;
  ~PlanCache() {
    for (auto& kv : plans) fftw_destroy_plan(kv.second);
  }
};

fftw_plan get_plan(std::size_t h, std::size_t w, bool inverse) {
  static PlanCache cache;
  std::lock_guard<std::mutex> lock(cache.mu);
  auto key = std::make_tuple(h, w, inverse);
  auto it = cache.plans.find(key);
  if (it != cache.plans.end()) return it->second;
  std::vector<std::complex<double>> a(h * w), b(h * w);
  fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), reinterpret_cast<fftw_complex*>(a.data()),
                                 reinterpret_cast<fftw_complex*>(b.data()), inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p) throw Error(ErrorKind::numeric, "fftw plan creation failed");
  cache.plans.emplace(key, p);
  return p;
}

}  // namespace

std::vector<std::complex<double>> fft2(const std::vector<std::complex<double>>& in, std::size_t h, std::size_t w,
                                       bool inverse) {
  if (in.size() != h * w) throw Error(ErrorKind::shape, "fft2: size mismatch");
  std::vector<std::complex<double>> src = in, out(h * w);
  fftw_execute_dft(get_plan(h, w, inverse), reinterpret_cast<fftw_complex*>(src.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

namespace {

std::vector<std::complex<double>> channel_spectrum(const Tensor& x, std::size_t c) {
  const std::size_t H = x.dim(1), W = x.dim(2);
  std::vector<std::complex<double>> v(H * W);
  for (std::size_t i = 0; i < H * W; ++i) v[i] = x[c * H * W + i];
  return fft2(v, H, W, false);
}

// ---------------------------------------------------------------------------

class IdentityOp final : public LinearOp {
 public:
  IdentityOp(std::size_t C, std::size_t H, std::size_t W) : LinearOp(Shape{C, H, W}, Shape{C, H, W}) {}
  OpKind kind() const override { return OpKind::identity; }
  ProxStrategy prox_strategy() const override { return ProxStrategy::scalar_closed_form; }
  std::string describe() const override { return "identity" + to_string(domain()); }
  Tensor forward(const Tensor& x) const override {
    check_domain(x, "identity");
    return x;
  }
  Tensor adjoint(const Tensor& y) const override {
    check_range(y, "identity adjoint");
    return y;
  }
  Tensor init_map(const Tensor& z) const override { return adjoint(z); }
  Tensor init_adjoint(const Tensor& x) const override { return forward(x); }
  double init_norm() const override { return 1.0; }
  double prox_norm(double tau) const override { return 1.0 / (1.0 + tau); }

 protected:
  Tensor prox_impl(const Tensor& r, double tau) const override { return r * (1.0 / (1.0 + tau)); }
  double opnorm_impl() const override { return 1.0; }
};

// ---------------------------------------------------------------------------

struct Sparse1D {
  std::size_t rows = 0, cols = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> entries;
};

class DownsampleOp final : public LinearOp {
 public:
  DownsampleOp(std::size_t gamma, std::size_t C, std::size_t H, std::size_t W, Boundary boundary)
      : LinearOp(Shape{C, H, W}, Shape{C, H / gamma, W / gamma}), gamma_(gamma), boundary_(boundary) {
    mh_ = build(H);
    mw_ = build(W);
    if (boundary_ == Boundary::periodic) {
      // A A^T is circulant on the coarse grid; its eigenvalues are the DFT of one column.
      const std::size_t h = H / gamma, w = W / gamma;
      Tensor e(Shape{1, h, w});
      e[0] = 1.0;
      Tensor col = apply(apply_t(e, mh_, mw_), mh_, mw_);
      std::vector<std::complex<double>> v(h * w);
      for (std::size_t i = 0; i < h * w; ++i) v[i] = col[i];
      auto spec = fft2(v, h, w, false);
      eig_.resize(h * w);
      for (std::size_t i = 0; i < h * w; ++i) eig_[i] = spec[i].real();
    }
  }

  OpKind kind() const override { return OpKind::downsample; }
  ProxStrategy prox_strategy() const override {
    return boundary_ == Boundary::periodic ? ProxStrategy::fourier_diagonal : ProxStrategy::conjugate_gradient;
  }
  std::string describe() const override {
    return "downsample(gamma=" + std::to_string(gamma_) + (boundary_ == Boundary::periodic ? ", periodic)" : ", replicate)");
  }

  Tensor forward(const Tensor& x) const override {
    check_domain(x, "downsample");
    return apply(x, mh_, mw_);
  }
  Tensor adjoint(const Tensor& y) const override {
    check_range(y, "downsample adjoint");
    return apply_t(y, mh_, mw_);
  }
  Tensor init_map(const Tensor& z) const override { return adjoint(z) * static_cast<double>(gamma_); }
  Tensor init_adjoint(const Tensor& x) const override { return forward(x) * static_cast<double>(gamma_); }
  double init_norm() const override { return static_cast<double>(gamma_) * opnorm(); }

 protected:
  Tensor prox_impl(const Tensor& r, double tau) const override {
    if (boundary_ != Boundary::periodic) return LinearOp::prox_impl(r, tau);
    // (Id + tau A^T A)^{-1} = Id - tau A^T (Id + tau A A^T)^{-1} A
    Tensor q = forward(r);
    const std::size_t h = range()[1], w = range()[2];
    for (std::size_t c = 0; c < range()[0]; ++c) {
      auto spec = channel_spectrum(q, c);
      for (std::size_t i = 0; i < h * w; ++i) spec[i] /= 1.0 + tau * eig_[i];
      auto back = fft2(spec, h, w, true);
      for (std::size_t i = 0; i < h * w; ++i) q[c * h * w + i] = back[i].real() / static_cast<double>(h * w);
    }
    Tensor v = r;
    axpy(-tau, adjoint(q), v);
    return v;
  }
  double opnorm_impl() const override {
    if (boundary_ == Boundary::periodic) {
      double mx = 0.0;
      for (double e : eig_) mx = std::max(mx, e);
      return std::sqrt(mx) * (1.0 + 1e-12);
    }
    // separable: ||Mh (x) Mw|| = ||Mh|| ||Mw||
    return norm1d(mh_) * norm1d(mw_) * (1.0 + 1e-9);
  }

 private:
  Sparse1D build(std::size_t n) const {
    Sparse1D m;
    m.rows = n / gamma_;
    m.cols = n;
    m.entries.resize(m.rows);
    const auto taps = bicubic_taps(gamma_);
    const long first = first_offset();
    for (std::size_t j = 0; j < m.rows; ++j) {
      std::map<std::size_t, double> row;
      for (std::size_t k = 0; k < taps.size(); ++k) {
        long i = static_cast<long>(j * gamma_) + first + static_cast<long>(k);
        const long nn = static_cast<long>(n);
        if (boundary_ == Boundary::periodic) {
          i = ((i % nn) + nn) % nn;
        } else {
          i = std::clamp(i, 0L, nn - 1);
        }
        row[static_cast<std::size_t>(i)] += taps[k];
      }
      m.entries[j].assign(row.begin(), row.end());
    }
    return m;
  }

  // Largest singular value from the dense Gram matrix M M^T, iterated to convergence.
  static double norm1d(const Sparse1D& m) {
    const std::size_t r = m.rows;
    std::vector<double> g(r * r, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        auto a = m.entries[i].begin(), b = m.entries[j].begin();
        while (a != m.entries[i].end() && b != m.entries[j].end()) {
          if (a->first < b->first) {
            ++a;
          } else if (b->first < a->first) {
            ++b;
          } else {
            s += a->second * (b++)->second;
            ++a;
          }
        }
        g[i * r + j] = s;
      }
    std::vector<double> x(r, 1.0), y(r);
    double lambda = 0.0;
    for (int it = 0; it < 100000; ++it) {
      double nx = 0.0;
      for (double v : x) nx += v * v;
      nx = std::sqrt(nx);
      for (double& v : x) v /= nx;
      double next = 0.0;
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < r; ++j) s += g[i * r + j] * x[j];
        y[i] = s;
        next += x[i] * s;
      }
      x.swap(y);
      if (std::abs(next - lambda) <= 1e-15 * next) return std::sqrt(next);
      lambda = next;
    }
    return std::sqrt(lambda);
  }

  long first_offset() const {
    const double u = (static_cast<double>(gamma_) - 1.0) / 2.0;
    return static_cast<long>(std::floor(u - 2.0 * static_cast<double>(gamma_))) + 1;
  }

  // y[c] = Mh x[c] Mw^T
  static Tensor apply(const Tensor& x, const Sparse1D& mh, const Sparse1D& mw) {
    const std::size_t C = x.dim(0), H = mh.cols, W = mw.cols, h = mh.rows, w = mw.rows;
    Tensor y(Shape{C, h, w});
    std::vector<double> tmp(H * w);
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = x.ptr() + c * H * W;
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t j = 0; j < w; ++j) {
          double s = 0.0;
          for (const auto& [col, v] : mw.entries[j]) s += v * xc[r * W + col];
          tmp[r * w + j] = s;
        }
      double* yc = y.ptr() + c * h * w;
      for (std::size_t i = 0; i < h; ++i)
        for (const auto& [row, v] : mh.entries[i])
          for (std::size_t j = 0; j < w; ++j) yc[i * w + j] += v * tmp[row * w + j];
    }
    return y;
  }

  // x[c] = Mh^T y[c] Mw
  static Tensor apply_t(const Tensor& y, const Sparse1D& mh, const Sparse1D& mw) {
    const std::size_t C = y.dim(0), H = mh.cols, W = mw.cols, h = mh.rows, w = mw.rows;
    Tensor x(Shape{C, H, W});
    std::vector<double> tmp(H * w);
    for (std::size_t c = 0; c < C; ++c) {
      std::fill(tmp.begin(), tmp.end(), 0.0);
      const double* yc = y.ptr() + c * h * w;
      for (std::size_t i = 0; i < h; ++i)
        for (const auto& [row, v] : mh.entries[i])
          for (std::size_t j = 0; j < w; ++j) tmp[row * w + j] += v * yc[i * w + j];
      double* xc = x.ptr() + c * H * W;
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t j = 0; j < w; ++j) {
          const double t = tmp[r * w + j];
          for (const auto& [col, v] : mw.entries[j]) xc[r * W + col] += v * t;
        }
    }
    return x;
  }

  std::size_t gamma_;
  Boundary boundary_;
  Sparse1D mh_, mw_;
  std::vector<double> eig_;
};

// ---------------------------------------------------------------------------

class MaskedFourierOp final : public LinearOp {
 public:
  MaskedFourierOp(const Tensor& mask, std::size_t C)
      : LinearOp(Shape{C, mask.dim(0), mask.dim(1)}, Shape{2 * C, mask.dim(0), mask.dim(1)}), mask_(mask) {
    const std::size_t H = mask.dim(0), W = mask.dim(1);
    sym_.resize(H * W);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t ni = (H - i) % H, nj = (W - j) % W;
        sym_[i * W + j] = 0.5 * (mask_[i * W + j] + mask_[ni * W + nj]);
      }
  }

  OpKind kind() const override { return OpKind::masked_fourier; }
  ProxStrategy prox_strategy() const override { return ProxStrategy::fourier_diagonal; }
  std::string describe() const override { return "masked_fourier" + to_string(mask_.shape()); }

  Tensor forward(const Tensor& x) const override {
    check_domain(x, "masked_fourier");
    const std::size_t C = domain()[0], H = domain()[1], W = domain()[2];
    const double s = 1.0 / std::sqrt(static_cast<double>(H * W));
    Tensor y(range());
    for (std::size_t c = 0; c < C; ++c) {
      auto spec = channel_spectrum(x, c);
      for (std::size_t i = 0; i < H * W; ++i) {
        y[(2 * c) * H * W + i] = mask_[i] * spec[i].real() * s;
        y[(2 * c + 1) * H * W + i] = mask_[i] * spec[i].imag() * s;
      }
    }
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    check_range(y, "masked_fourier adjoint");
    const std::size_t C = domain()[0], H = domain()[1], W = domain()[2];
    const double s = 1.0 / std::sqrt(static_cast<double>(H * W));
    Tensor x(domain());
    std::vector<std::complex<double>> z(H * W);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < H * W; ++i)
        z[i] = mask_[i] * std::complex<double>(y[(2 * c) * H * W + i], y[(2 * c + 1) * H * W + i]);
      auto back = fft2(z, H, W, true);
      for (std::size_t i = 0; i < H * W; ++i) x[c * H * W + i] = back[i].real() * s;
    }
    return x;
  }

  Tensor init_map(const Tensor& z) const override { return adjoint(z); }
  Tensor init_adjoint(const Tensor& x) const override { return forward(x); }
  double init_norm() const override { return opnorm(); }
  double prox_norm(double tau) const override {
    double mn = 1.0;
    for (double m : sym_) mn = std::min(mn, m);
    return 1.0 / (1.0 + tau * mn);
  }

 protected:
  // Re F^{-1}(M F x) = F^{-1}(M_sym F x) for real x, so the normal map is diagonal.
  Tensor prox_impl(const Tensor& r, double tau) const override {
    const std::size_t C = domain()[0], H = domain()[1], W = domain()[2];
    Tensor v(domain());
    for (std::size_t c = 0; c < C; ++c) {
      auto spec = channel_spectrum(r, c);
      for (std::size_t i = 0; i < H * W; ++i) spec[i] /= 1.0 + tau * sym_[i];
      auto back = fft2(spec, H, W, true);
      for (std::size_t i = 0; i < H * W; ++i) v[c * H * W + i] = back[i].real() / static_cast<double>(H * W);
    }
    return v;
  }
  double opnorm_impl() const override {
    for (double m : mask_.data())
      if (m != 0.0) return 1.0;
    return 0.0;
  }

 private:
  Tensor mask_;
  std::vector<double> sym_;
};

// ---------------------------------------------------------------------------

struct Csr {
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> start;
  std::vector<std::size_t> col;
  std::vector<double> val;
};

class RadonOp final : public LinearOp {
 public:
  RadonOp(std::size_t n_angles, std::size_t n_det, std::size_t n)
      : LinearOp(Shape{1, n, n}, Shape{1, n_angles, n_det}), n_angles_(n_angles), n_det_(n_det) {
    build(n);
  }

  OpKind kind() const override { return OpKind::radon; }
  ProxStrategy prox_strategy() const override { return ProxStrategy::conjugate_gradient; }
  std::string describe() const override {
    return "radon(angles=" + std::to_string(n_angles_) + ", detectors=" + std::to_string(n_det_) + ")";
  }

  Tensor forward(const Tensor& x) const override {
    check_domain(x, "radon");
    Tensor y(range());
    for (std::size_t r = 0; r < a_.rows; ++r) {
      double s = 0.0;
      for (std::size_t k = a_.start[r]; k < a_.start[r + 1]; ++k) s += a_.val[k] * x[a_.col[k]];
      y[r] = s;
    }
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    check_range(y, "radon adjoint");
    Tensor x(domain());
    for (std::size_t r = 0; r < a_.rows; ++r) {
      const double v = y[r];
      if (v == 0.0) continue;
      for (std::size_t k = a_.start[r]; k < a_.start[r + 1]; ++k) x[a_.col[k]] += a_.val[k] * v;
    }
    return x;
  }

  // 50 conjugate-gradient steps on the normal equations from zero.
  Tensor init_map(const Tensor& z) const override {
    check_range(z, "radon init");
    CgConfig cfg{0.0, 50};
    return conjugate_gradient([this](const Tensor& v) { return normal(v); }, adjoint(z), Tensor(domain()), cfg).x;
  }

 private:
  void build(std::size_t n) {
    a_.rows = n_angles_ * n_det_;
    a_.cols = n * n;
    a_.start.push_back(0);
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    const double dc = (static_cast<double>(n_det_) - 1.0) / 2.0;
    std::map<std::size_t, double> row;
    for (std::size_t k = 0; k < n_angles_; ++k) {
      const double th = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_angles_);
      const double ct = std::cos(th), st = std::sin(th);
      for (std::size_t d = 0; d < n_det_; ++d) {
        const double t = static_cast<double>(d) - dc;
        row.clear();
        // ray: x cos + y sin = t, with x = j - c, y = c - i
        if (std::abs(st) >= std::abs(ct)) {
          const double wgt = 1.0 / std::abs(st);
          for (std::size_t j = 0; j < n; ++j) {
            const double x = static_cast<double>(j) - c;
            const double y = (t - x * ct) / st;
            add_interp(row, c - y, j, n, wgt, true);
          }
        } else {
          const double wgt = 1.0 / std::abs(ct);
          for (std::size_t i = 0; i < n; ++i) {
            const double y = c - static_cast<double>(i);
            const double x = (t - y * st) / ct;
            add_interp(row, x + c, i, n, wgt, false);
          }
        }
        for (const auto& [col, v] : row) {
          a_.col.push_back(col);
          a_.val.push_back(v);
        }
        a_.start.push_back(a_.col.size());
      }
    }
  }

  // Linear interpolation at fractional position pos along the free axis.
  static void add_interp(std::map<std::size_t, double>& row, double pos, std::size_t fixed, std::size_t n, double wgt,
                         bool pos_is_row) {
    const double f0 = std::floor(pos);
    const double frac = pos - f0;
    const long i0 = static_cast<long>(f0);
    for (int k = 0; k < 2; ++k) {
      const long i = i0 + k;
      const double w = k == 0 ? 1.0 - frac : frac;
      if (i < 0 || i >= static_cast<long>(n) || w == 0.0) continue;
      const std::size_t idx = pos_is_row ? static_cast<std::size_t>(i) * n + fixed : fixed * n + static_cast<std::size_t>(i);
      row[idx] += wgt * w;
    }
  }

  std::size_t n_angles_, n_det_;
  Csr a_;
};

}  // namespace

LinearOpPtr make_identity(std::size_t C, std::size_t H, std::size_t W) { return std::make_shared<IdentityOp>(C, H, W); }

LinearOpPtr make_downsample(std::size_t gamma, std::size_t C, std::size_t H, std::size_t W, Boundary boundary) {
  if (gamma < 2 || gamma > 4) throw Error(ErrorKind::config, "downsample factor must be 2, 3 or 4");
  if (H % gamma || W % gamma) {
    throw Error(ErrorKind::shape, "downsample: extents " + std::to_string(H) + "x" + std::to_string(W) +
                                      " not divisible by " + std::to_string(gamma));
  }
  return std::make_shared<DownsampleOp>(gamma, C, H, W, boundary);
}

LinearOpPtr make_masked_fourier(const Tensor& mask, std::size_t C) {
  if (mask.rank() != 2) throw Error(ErrorKind::shape, "mask must be (H, W), got " + to_string(mask.shape()));
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw Error(ErrorKind::config, "mask entries must be 0 or 1");
  }
  return std::make_shared<MaskedFourierOp>(mask, C);
}

LinearOpPtr make_radon(std::size_t n_angles, std::size_t n_detectors, std::size_t H, std::size_t W) {
  if (H != W) throw Error(ErrorKind::shape, "radon needs a square image");
  if (n_angles == 0 || n_detectors == 0) throw Error(ErrorKind::config, "radon needs angles and detectors");
  return std::make_shared<RadonOp>(n_angles, n_detectors, H);
}

double keys_cubic(double t) {
  constexpr double a = -0.5;
  const double x = std::abs(t);
  if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
  if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
  return 0.0;
}

std::vector<double> bicubic_taps(std::size_t gamma) {
  const double g = static_cast<double>(gamma);
  const double u = (g - 1.0) / 2.0;
  const long first = static_cast<long>(std::floor(u - 2.0 * g)) + 1;
  const long last = static_cast<long>(std::ceil(u + 2.0 * g)) - 1;
  std::vector<double> taps;
  double total = 0.0;
  for (long i = first; i <= last; ++i) {
    const double w = keys_cubic((static_cast<double>(i) - u) / g);
    taps.push_back(w);
    total += w;
  }
  for (double& w : taps) w /= total;
  return taps;
}

Tensor cartesian_mask(std::size_t H, std::size_t W, std::size_t R, std::size_t center) {
  if (R == 0) throw Error(ErrorKind::config, "acceleration must be >= 1");
  Tensor m(Shape{H, W});
  for (std::size_t i = 0; i < H; ++i) {
    // distance of row i from DC in the wrapped frequency layout
    const std::size_t f = std::min(i, H - i);
    if (i % R != 0 && 2 * f > center) continue;
    for (std::size_t j = 0; j < W; ++j) m[i * W + j] = 1.0;
  }
  return m;
}

Tensor disk_phantom(std::size_t n, double radius) {
  Tensor x(Shape{1, n, n});
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      if (di * di + dj * dj <= radius * radius) x.at(0, i, j) = 1.0;
    }
  return x;
}

}  // namespace tdv
