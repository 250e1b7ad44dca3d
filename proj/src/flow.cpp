#include "tdv/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tdv {

namespace {

void check_time(double T, std::size_t S, double T_max) {
  if (S == 0) throw Error(ErrorKind::config, "flow needs S >= 1");
  if (!(T >= 0.0 && T <= T_max)) {
    std::ostringstream os;
    os << "stopping time " << T << " outside [0, " << T_max << "]";
    throw Error(ErrorKind::config, os.str());
  }
}

void check_finite(const Tensor& x, std::size_t s) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "flow state " + std::to_string(s) + " is not finite");
  }
}

void project(Tensor& x, const std::optional<Box>& box) {
  if (!box) return;
  for (double& v : x.data()) v = std::clamp(v, box->lo, box->hi);
}

}  // namespace

Tensor semi_implicit_step(const Tensor& x, const Tensor& Atz, const Tensor& grad, double T, const LinearOp& op,
                          std::size_t S) {
  const double tau = T / static_cast<double>(S);
  if (tau == 0.0) return x;
  Tensor r = x;
  axpy(tau, Atz, r);
  axpy(-tau, grad, r);
  return op.prox(r, tau);
}

Tensor semi_implicit_step(const Tensor& x, const Tensor& z, double T, const TdvParams& theta, const LinearOp& op,
                          std::size_t S) {
  check_time(T, S, std::numeric_limits<double>::infinity());
  if (T == 0.0) return x;
  return semi_implicit_step(x, op.adjoint(z), tdv_grad(x, theta), T, op, S);
}

FlowState run_flow(const Tensor& z, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S, double T_max) {
  check_time(T, S, T_max);
  FlowState f;
  f.T = T;
  f.S = S;
  f.z = z;
  f.op = op;
  f.states.reserve(S + 1);
  f.states.push_back(op->init_map(z));
  check_finite(f.states[0], 0);
  const Tensor Atz = op->adjoint(z);
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor& x = f.states.back();
    Tensor next = T == 0.0 ? x : semi_implicit_step(x, Atz, tdv_grad(x, theta), T, *op, S);
    check_finite(next, s + 1);
    f.states.push_back(std::move(next));
  }
  return f;
}

RecordedFlow run_flow_recorded(const Tensor& z, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S,
                               double T_max) {
  check_time(T, S, T_max);
  RecordedFlow r;
  FlowState& f = r.flow;
  f.T = T;
  f.S = S;
  f.z = z;
  f.op = op;
  f.states.push_back(op->init_map(z));
  check_finite(f.states[0], 0);
  const Tensor Atz = op->adjoint(z);
  r.graphs.reserve(S);
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor& x = f.states.back();
    r.graphs.push_back(record_energy(x, theta));
    Tensor grad = energy_grad(r.graphs.back());
    Tensor next = semi_implicit_step(x, Atz, grad, T, *op, S);
    check_finite(next, s + 1);
    f.states.push_back(std::move(next));
  }
  return r;
}

void save_trajectory(const std::filesystem::path& path, const FlowState& flow) { save_tensors(path, flow.states); }

NagResult nag_minimize(const Objective& f, const Tensor& x0, const NagConfig& cfg) {
  if (cfg.max_steps < 1) throw Error(ErrorKind::config, "nag: max_steps must be >= 1");
  if (!(cfg.backtrack > 1.0)) throw Error(ErrorKind::config, "nag: backtracking factor must exceed 1");
  if (!(cfg.lipschitz > 0.0)) throw Error(ErrorKind::config, "nag: initial Lipschitz estimate must be positive");

  auto eval = [&](const Tensor& x, Tensor* g, int k) {
    const double v = f(x, g);
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::numeric, "nag: objective is not finite at iterate " + std::to_string(k));
    }
    return v;
  };

  NagResult res;
  res.x = x0;
  project(res.x, cfg.box);
  double fx = eval(res.x, nullptr, 0);
  res.history.push_back(fx);
  double L = cfg.lipschitz;
  Tensor y = res.x;
  double t = 1.0;
  Tensor gy;

  for (int k = 1; k <= cfg.max_steps; ++k) {
    res.steps = k;
    const double fy = eval(y, &gy, k);
    Tensor xn;
    double fxn = 0.0;
    for (;;) {
      xn = y;
      axpy(-1.0 / L, gy, xn);
      project(xn, cfg.box);
      fxn = eval(xn, nullptr, k);
      const Tensor d = xn - y;
      if (fxn <= fy + dot(gy, d) + 0.5 * L * dot(d, d)) break;
      L *= cfg.backtrack;
      if (!std::isfinite(L)) throw Error(ErrorKind::numeric, "nag: Lipschitz estimate overflowed at iterate " + std::to_string(k));
    }
    if (fxn > fx) {
      // momentum overshot: restart from the last accepted point
      y = res.x;
      t = 1.0;
      continue;
    }
    const double step = norm2(xn - res.x);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = xn + (xn - res.x) * ((t - 1.0) / tn);
    project(y, cfg.box);
    t = tn;
    res.x = std::move(xn);
    fx = fxn;
    res.history.push_back(fx);
    if (step <= cfg.step_tol * std::max(1.0, norm2(res.x))) break;
  }
  res.lipschitz = L;
  return res;
}

NagResult variational_reconstruct(const Tensor& z, const LinearOp& op, const TdvParams& theta, double lambda,
                                  const NagConfig& cfg) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::config, "variational_reconstruct: lambda must be positive");
  Objective f = [&](const Tensor& x, Tensor* g) {
    Tensor r = op.forward(x) - z;
    double v = 0.5 * lambda * dot(r, r);
    if (g) {
      EnergyGraph eg = record_energy(x, theta);
      v += eg.tape.value(eg.energy)[0];
      *g = energy_grad(eg);
      axpy(lambda, op.adjoint(r), *g);
    } else {
      v += tdv_energy(x, theta);
    }
    return v;
  };
  return nag_minimize(f, op.init_map(z), cfg);
}

}  // namespace tdv
