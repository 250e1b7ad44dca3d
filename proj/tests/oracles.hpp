#pragma once

#include <algorithm>
#include <vector>

#include "dense.hpp"
#include "reference_tdv.hpp"
#include "tdv/training.hpp"

namespace oracle {

using namespace tdv;

inline std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline void assign(Tensor& t, const std::vector<double>& v) { std::copy(v.begin(), v.end(), t.data().begin()); }

// d loss(x_S - y) / d x_0 by propagating the full Jacobian forward through the
// unrolled scheme, using dense B, the dual-number gradient and the hyper-dual
// Hessian of the straight-line reference.
inline Tensor unrolled_input_gradient(const LinearOp& op, const Tensor& x0, const Tensor& z, const Tensor& y, double T,
                               std::size_t S, const TdvParams& th, const LossFn& loss) {
  const std::size_t n = x0.size();
  const double tau = T / static_cast<double>(S);
  dense::Mat A = dense::assemble(op);
  dense::Mat B = dense::Mat::eye(n);
  dense::Mat AtA = dense::transpose(A) * A;
  for (std::size_t i = 0; i < n * n; ++i) B.a[i] += tau * AtA.a[i];
  std::vector<double> Atz = dense::apply(dense::transpose(A), vec(z));

  Tensor x = x0;
  dense::Mat J = dense::Mat::eye(n);
  for (std::size_t s = 0; s < S; ++s) {
    Tensor g = ref::gradient(x, th);
    dense::Mat step = dense::Mat::eye(n);
    std::vector<double> H = ref::hessian(x, th);
    for (std::size_t i = 0; i < n * n; ++i) step.a[i] -= tau * H[i];
    J = dense::solve(B, step * J);
    std::vector<double> rhs(n);
    for (std::size_t i = 0; i < n; ++i) rhs[i] = x[i] + tau * (Atz[i] - g[i]);
    assign(x, dense::solve(B, rhs));
  }
  std::vector<double> dl = vec(loss.grad(x - y));
  Tensor out(x0.shape());
  assign(out, dense::apply(dense::transpose(J), dl));
  return out;
}

}  // namespace oracle
