#pragma once

// Straight-line re-implementation of the regularizer, templated on the scalar
// so that dual and hyper-dual numbers give exact first and second derivatives.
// Shares nothing with the library beyond the parameter container.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "tdv/regularizer.hpp"

namespace ref {

struct Dual {
  double v = 0, d = 0;
  Dual() = default;
  Dual(double x) : v(x) {}
  Dual(double x, double dx) : v(x), d(dx) {}
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
inline Dual& operator+=(Dual& a, Dual b) { return a = a + b; }
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual exp(Dual a) { return {std::exp(a.v), std::exp(a.v) * a.d}; }
inline double value(Dual a) { return a.v; }

// f(x + e1 + e2) with e1^2 = e2^2 = 0; the e12 part carries the mixed second derivative.
struct Hyper {
  double v = 0, e1 = 0, e2 = 0, e12 = 0;
  Hyper() = default;
  Hyper(double x) : v(x) {}
  Hyper(double x, double a, double b, double c) : v(x), e1(a), e2(b), e12(c) {}
};
inline Hyper operator+(Hyper a, Hyper b) { return {a.v + b.v, a.e1 + b.e1, a.e2 + b.e2, a.e12 + b.e12}; }
inline Hyper operator-(Hyper a, Hyper b) { return {a.v - b.v, a.e1 - b.e1, a.e2 - b.e2, a.e12 - b.e12}; }
inline Hyper operator*(Hyper a, Hyper b) {
  return {a.v * b.v, a.e1 * b.v + a.v * b.e1, a.e2 * b.v + a.v * b.e2, a.e12 * b.v + a.e1 * b.e2 + a.e2 * b.e1 + a.v * b.e12};
}
inline Hyper& operator+=(Hyper& a, Hyper b) { return a = a + b; }
// g(a) for scalar g with derivatives g0, g1, g2 at a.v
inline Hyper chain(Hyper a, double g0, double g1, double g2) {
  return {g0, g1 * a.e1, g1 * a.e2, g1 * a.e12 + g2 * a.e1 * a.e2};
}
inline Hyper log(Hyper a) { return chain(a, std::log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v)); }
inline Hyper exp(Hyper a) {
  const double e = std::exp(a.v);
  return chain(a, e, e, e);
}
inline Hyper operator/(Hyper a, Hyper b) { return a * chain(b, 1.0 / b.v, -1.0 / (b.v * b.v), 2.0 / (b.v * b.v * b.v)); }
inline double value(Hyper a) { return a.v; }
inline double value(double a) { return a; }
inline double log(double v) { return std::log(v); }
inline double exp(double v) { return std::exp(v); }

template <class S>
struct Img {
  std::size_t C = 0, H = 0, W = 0;
  std::vector<S> v;
  Img() = default;
  Img(std::size_t c, std::size_t h, std::size_t w) : C(c), H(h), W(w), v(c * h * w, S(0.0)) {}
  S& at(std::size_t c, std::size_t i, std::size_t j) { return v[(c * H + i) * W + j]; }
  const S& at(std::size_t c, std::size_t i, std::size_t j) const { return v[(c * H + i) * W + j]; }
};

template <class S>
Img<S> operator+(const Img<S>& a, const Img<S>& b) {
  Img<S> r = a;
  for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = a.v[i] + b.v[i];
  return r;
}

// Index of the tap u (0..k-1) at output position i, or -1 when it falls in zero padding.
inline long tap(long i, long stride, long u, long pad, long n, bool replicate) {
  long r = stride * i + u - pad;
  if (r < 0 || r >= n) {
    if (!replicate) return -1;
    r = std::clamp(r, 0L, n - 1);
  }
  return r;
}

template <class S>
Img<S> conv(const Img<S>& x, const tdv::Tensor& w, std::size_t stride, bool replicate) {
  const long O = w.dim(0), C = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const long ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  const long Ho = (static_cast<long>(x.H) + 2 * ph - kh) / static_cast<long>(stride) + 1;
  const long Wo = (static_cast<long>(x.W) + 2 * pw - kw) / static_cast<long>(stride) + 1;
  Img<S> y(O, Ho, Wo);
  for (long o = 0; o < O; ++o)
    for (long i = 0; i < Ho; ++i)
      for (long j = 0; j < Wo; ++j) {
        S acc(0.0);
        for (long c = 0; c < C; ++c)
          for (long u = 0; u < kh; ++u) {
            const long r = tap(i, stride, u, ph, x.H, replicate);
            if (r < 0) continue;
            for (long v = 0; v < kw; ++v) {
              const long q = tap(j, stride, v, pw, x.W, replicate);
              if (q < 0) continue;
              acc += S(w[((o * C + c) * kh + u) * kw + v]) * x.at(c, r, q);
            }
          }
        y.at(o, i, j) = acc;
      }
  return y;
}

// Scatter form of the transpose of conv onto an H x W image.
template <class S>
Img<S> conv_t(const Img<S>& y, const tdv::Tensor& w, std::size_t stride, std::size_t H, std::size_t W, bool replicate) {
  const long O = w.dim(0), C = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const long ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  Img<S> x(C, H, W);
  for (long o = 0; o < O; ++o)
    for (long i = 0; i < static_cast<long>(y.H); ++i)
      for (long j = 0; j < static_cast<long>(y.W); ++j)
        for (long c = 0; c < C; ++c)
          for (long u = 0; u < kh; ++u) {
            const long r = tap(i, stride, u, ph, H, replicate);
            if (r < 0) continue;
            for (long v = 0; v < kw; ++v) {
              const long q = tap(j, stride, v, pw, W, replicate);
              if (q < 0) continue;
              x.at(c, r, q) += S(w[((o * C + c) * kh + u) * kw + v]) * y.at(o, i, j);
            }
          }
  return x;
}

// 3x3 kernel convolved (full) with the 5x5 binomial table.
inline tdv::Tensor blur5(const tdv::Tensor& w3) {
  static const double b[3] = {1, 2, 1};
  tdv::Tensor w5({w3.dim(0), w3.dim(1), 5, 5});
  for (std::size_t o = 0; o < w3.dim(0); ++o)
    for (std::size_t c = 0; c < w3.dim(1); ++c)
      for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 5; ++q) {
          double s = 0;
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              const int p1 = r - u, p2 = q - v;
              if (p1 < 0 || p1 > 2 || p2 < 0 || p2 > 2) continue;
              s += w3[((o * w3.dim(1) + c) * 3 + u) * 3 + v] * b[p1] * b[p2] / 16.0;
            }
          w5[((o * w3.dim(1) + c) * 5 + r) * 5 + q] = s;
        }
  return w5;
}

template <class S>
S phi(S v) {
  return S(0.5) * log(S(1.0) + v * v);
}
inline double phi(double v) { return 0.5 * std::log(1.0 + v * v); }

template <class S>
S potential(S v, tdv::Potential p) {
  switch (p) {
    case tdv::Potential::identity: return v;
    case tdv::Potential::log_student_t: return phi(v);
    case tdv::Potential::ln_cosh: return log((exp(v) + exp(S(0.0) - v)) * S(0.5));
  }
  return v;
}

template <class S>
Img<S> residual(const Img<S>& x, const tdv::Tensor& k1, const tdv::Tensor& k2, bool rep) {
  Img<S> h = conv(x, k1, 1, rep);
  for (auto& e : h.v) e = phi(e);
  return x + conv(h, k2, 1, rep);
}

template <class S>
S energy(const Img<S>& x, const tdv::TdvParams& th) {
  const auto& A = th.arch();
  const bool rep = A.padding == tdv::Padding::replicate;
  const auto& t = th.tensors();
  std::vector<std::optional<Img<S>>> xs(A.a);
  xs[0] = conv(x, th.K(), 1, rep);
  for (std::size_t i = 0; i < A.b; ++i) {
    for (std::size_t j = 0; j + 1 < A.a; ++j) {
      std::size_t k = th.k1_index(i, j, 0);
      xs[j] = residual(*xs[j], t[k], t[k + 1], rep);
      Img<S> d = conv(*xs[j], blur5(t[th.down_index(i, j)]), 2, rep);
      xs[j + 1] = xs[j + 1] ? *xs[j + 1] + d : d;
    }
    std::size_t k = th.k1_index(i, A.a - 1, 0);
    xs[A.a - 1] = residual(*xs[A.a - 1], t[k], t[k + 1], rep);
    for (std::size_t j = A.a - 1; j-- > 0;) {
      xs[j] = *xs[j] + conv_t(*xs[j + 1], blur5(t[th.up_index(i, j)]), 2, xs[j]->H, xs[j]->W, rep);
      k = th.k1_index(i, j, 1);
      xs[j] = residual(*xs[j], t[k], t[k + 1], rep);
    }
  }
  Img<S> r = conv(*xs[0], th.w(), 1, rep);
  S e(0.0);
  for (const auto& v : r.v) e += potential(v, A.potential);
  return e;
}

inline double energy(const tdv::Tensor& x, const tdv::TdvParams& th) {
  Img<double> im(x.dim(0), x.dim(1), x.dim(2));
  for (std::size_t i = 0; i < x.size(); ++i) im.v[i] = x[i];
  return energy(im, th);
}

inline tdv::Tensor gradient(const tdv::Tensor& x, const tdv::TdvParams& th) {
  tdv::Tensor g(x.shape());
  Img<Dual> im(x.dim(0), x.dim(1), x.dim(2));
  for (std::size_t i = 0; i < x.size(); ++i) im.v[i] = Dual(x[i]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    im.v[i].d = 1.0;
    g[i] = energy(im, th).d;
    im.v[i].d = 0.0;
  }
  return g;
}

inline tdv::Tensor hessian_vector(const tdv::Tensor& x, const tdv::TdvParams& th, const tdv::Tensor& p) {
  tdv::Tensor out(x.shape());
  Img<Hyper> im(x.dim(0), x.dim(1), x.dim(2));
  for (std::size_t i = 0; i < x.size(); ++i) im.v[i] = Hyper(x[i], 0.0, p[i], 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    im.v[i].e1 = 1.0;
    out[i] = energy(im, th).e12;
    im.v[i].e1 = 0.0;
  }
  return out;
}

// Dense Hessian, row-major n x n; one hyper-dual evaluation per upper-triangle entry.
inline std::vector<double> hessian(const tdv::Tensor& x, const tdv::TdvParams& th) {
  const std::size_t n = x.size();
  std::vector<double> h(n * n);
  Img<Hyper> im(x.dim(0), x.dim(1), x.dim(2));
  for (std::size_t i = 0; i < n; ++i) im.v[i] = Hyper(x[i]);
  for (std::size_t i = 0; i < n; ++i) {
    im.v[i].e1 = 1.0;
    for (std::size_t j = i; j < n; ++j) {
      im.v[j].e2 = 1.0;
      h[i * n + j] = h[j * n + i] = energy(im, th).e12;
      im.v[j].e2 = 0.0;
    }
    im.v[i].e1 = 0.0;
  }
  return h;
}

}  // namespace ref
