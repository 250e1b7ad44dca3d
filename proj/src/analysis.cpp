#include "tdv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tdv {

EmpiricalCdf::EmpiricalCdf(std::vector<double> samples) : s_(std::move(samples)) {
  if (s_.empty()) throw Error(ErrorKind::config, "empirical CDF needs at least one sample");
  std::sort(s_.begin(), s_.end());
}

double EmpiricalCdf::cdf(double v) const {
  const auto it = std::upper_bound(s_.begin(), s_.end(), v);
  return static_cast<double>(it - s_.begin()) / static_cast<double>(s_.size());
}

double EmpiricalCdf::quantile(double q) const {
  if (s_.empty()) throw Error(ErrorKind::config, "quantile of an empty CDF");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::config, "quantile level must lie in [0, 1]");
  const std::size_t n = s_.size();
  // smallest k with k / n >= q, evaluated in the same rounding as cdf()
  std::size_t k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  k = std::clamp<std::size_t>(k, 1, n);
  while (k > 1 && static_cast<double>(k - 1) / static_cast<double>(n) >= q) --k;
  while (k < n && static_cast<double>(k) / static_cast<double>(n) < q) ++k;
  return s_[k - 1];
}

double local_lipschitz_x(const Tensor& x, const Tensor& xt, double T, const TdvParams& theta, std::size_t S) {
  const double den = norm2(x - xt);
  if (den == 0.0) return 0.0;
  const double tau = T / static_cast<double>(S);
  Tensor d = x - xt;
  axpy(-tau, tdv_grad(x, theta) - tdv_grad(xt, theta), d);
  return norm2(d) / den;
}

double local_lipschitz_theta(const Tensor& x, const TdvParams& theta, const TdvParams& theta_t) {
  if (!(theta.arch() == theta_t.arch())) throw Error(ErrorKind::config, "local_lipschitz_theta: architectures differ");
  TdvParams diff = theta;
  axpy(-1.0, theta_t, diff);
  const double den = norm2(diff);
  if (den == 0.0) return 0.0;
  return norm2(tdv_grad(x, theta) - tdv_grad(x, theta_t)) / den;
}

double geometric_sum(double alpha, std::size_t k) {
  if (alpha == 1.0) return static_cast<double>(k);
  return (1.0 - std::pow(alpha, static_cast<double>(k))) / (1.0 - alpha);
}

namespace {

double prox_norm_of(const LinearOp& op, double tau) { return tau == 0.0 ? 1.0 : op.prox_norm(tau); }

double elements(const LinearOp& op) { return static_cast<double>(numel(op.domain())); }

}  // namespace

BoundCurve stability_bound_input(double delta, const EmpiricalCdf& cdf, double T, std::size_t S, const LinearOp& op,
                                 double init_norm, double z_gap) {
  if (!(delta >= 0.0 && delta < 1.0)) throw Error(ErrorKind::config, "delta must lie in [0, 1)");
  const double tau = T / static_cast<double>(S);
  const double binv = prox_norm_of(op, tau);
  BoundCurve c;
  c.delta = delta;
  c.alpha = binv * cdf.quantile(1.0 - delta);
  c.beta = binv * tau * op.opnorm();
  const double nc = elements(op);
  for (std::size_t k = 0; k <= S; ++k) {
    const double ak = std::pow(c.alpha, static_cast<double>(k));
    c.values.push_back((ak * init_norm + geometric_sum(c.alpha, k) * c.beta) * z_gap / nc);
  }
  return c;
}

BoundCurve stability_bound_params(double delta, const EmpiricalCdf& cdf_x, const EmpiricalCdf& cdf_theta, double T,
                                  std::size_t S, const LinearOp& op, double theta_gap) {
  if (!(delta >= 0.0 && delta < 1.0)) throw Error(ErrorKind::config, "delta must lie in [0, 1)");
  const double tau = T / static_cast<double>(S);
  const double binv = prox_norm_of(op, tau);
  BoundCurve c;
  c.delta = delta;
  c.alpha = binv * cdf_x.quantile(1.0 - delta / 2.0);
  c.beta = binv * tau * cdf_theta.quantile(1.0 - delta / 2.0);
  const double nc = elements(op);
  for (std::size_t k = 0; k <= S; ++k) c.values.push_back(geometric_sum(c.alpha, k) * c.beta * theta_gap / nc);
  return c;
}

PairRun input_pair_run(const InputPair& p, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S) {
  const Tensor z = observe(*op, {p.y, p.xi});
  const Tensor zt = observe(*op, {p.y, p.xi_t});
  FlowState a = run_flow(z, T, theta, op, S), b = run_flow(zt, T, theta, op, S);
  PairRun r;
  r.input_gap = norm2(z - zt);
  const double nc = elements(*op);
  for (std::size_t k = 0; k <= S; ++k) {
    r.gap.push_back(norm2(a.states[k] - b.states[k]) / nc);
    r.lipschitz_x = std::max(r.lipschitz_x, local_lipschitz_x(a.states[k], b.states[k], T, theta, S));
  }
  return r;
}

PairRun param_pair_run(const Sample& s, double T, const TdvParams& theta, const TdvParams& theta_t, LinearOpPtr op,
                       std::size_t S) {
  const Tensor z = observe(*op, s);
  FlowState a = run_flow(z, T, theta, op, S), b = run_flow(z, T, theta_t, op, S);
  TdvParams diff = theta;
  axpy(-1.0, theta_t, diff);
  PairRun r;
  r.input_gap = norm2(diff);
  const double nc = elements(*op);
  for (std::size_t k = 0; k <= S; ++k) {
    r.gap.push_back(norm2(a.states[k] - b.states[k]) / nc);
    r.lipschitz_x = std::max(r.lipschitz_x, local_lipschitz_x(a.states[k], b.states[k], T, theta, S));
    r.lipschitz_theta = std::max(r.lipschitz_theta, local_lipschitz_theta(b.states[k], theta, theta_t));
  }
  return r;
}

TdvParams sample_eps_ball(const TdvParams& theta, double eps, std::mt19937_64& rng, std::optional<double> box) {
  if (eps == 0.0 && !box) return theta;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TdvParams out = theta;
  for (Tensor& t : out.tensors()) {
    const double r = eps * norm_inf(t);
    for (double& v : t.data()) v += r * u(rng);
    if (box)
      for (double& v : t.data()) v = std::clamp(v, -*box, *box);
  }
  out.project();
  return out;
}

InputCdfs estimate_input_cdf(const InputPairSampler& sampler, double T, const TdvParams& theta, LinearOpPtr op,
                             std::size_t S, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw Error(ErrorKind::config, "estimate_input_cdf: n_samples must be >= 1");
  std::mt19937_64 rng(seed);
  InputCdfs out;
  std::vector<double> l;
  for (std::size_t i = 0; i < n_samples; ++i) {
    out.runs.push_back(input_pair_run(sampler(rng), T, theta, op, S));
    l.push_back(out.runs.back().lipschitz_x);
  }
  out.lx = EmpiricalCdf(std::move(l));
  return out;
}

ParamCdfs estimate_param_cdfs(const SampleSampler& sampler, double T, const TdvParams& theta, LinearOpPtr op,
                              std::size_t S, double eps, std::size_t n_samples, std::uint64_t seed,
                              std::optional<double> box) {
  if (n_samples == 0) throw Error(ErrorKind::config, "estimate_param_cdfs: n_samples must be >= 1");
  std::mt19937_64 rng(seed);
  ParamCdfs out;
  std::vector<double> lx, lt;
  for (std::size_t i = 0; i < n_samples; ++i) {
    Sample s = sampler(rng);
    TdvParams tt = sample_eps_ball(theta, eps, rng, box);
    out.runs.push_back(param_pair_run(s, T, theta, tt, op, S));
    lx.push_back(out.runs.back().lipschitz_x);
    lt.push_back(out.runs.back().lipschitz_theta);
  }
  out.lx = EmpiricalCdf(std::move(lx));
  out.ltheta = EmpiricalCdf(std::move(lt));
  return out;
}

bool violates(const PairRun& run, const BoundCurve& curve) {
  for (std::size_t k = 0; k < run.gap.size() && k < curve.values.size(); ++k) {
    if (run.gap[k] > curve.values[k]) return true;
  }
  return false;
}

double violation_tolerance(double delta, std::size_t n) {
  return delta + 3.0 * std::sqrt(delta * (1.0 - delta) / static_cast<double>(n));
}

double eigen_objective(const Tensor& x, const TdvParams& theta, Tensor* grad) {
  const double xx = dot(x, x);
  if (!(xx > 1e-300)) throw Error(ErrorKind::numeric, "eigen: ||x|| underflow, Rayleigh quotient undefined");
  EnergyGraph g = record_energy(x, theta);
  const Tensor d = energy_grad(g);
  const double lambda = dot(d, x) / xx;
  Tensor r = d;
  axpy(-lambda, x, r);
  if (grad) {
    // <r, x> = 0 by the choice of Lambda, so the derivative of Lambda drops out
    Tensor hr = mixed_hvp(g, theta, r, false).hx;
    axpy(-lambda, r, hr);
    *grad = std::move(hr);
  }
  return 0.5 * dot(r, r);
}

EigenResult eigen_extract(const Tensor& x_init, const TdvParams& theta, NagConfig cfg) {
  if (!cfg.box) cfg.box = Box{0.0, 1.0};
  for (double v : x_init.data()) {
    if (v < cfg.box->lo || v > cfg.box->hi) throw Error(ErrorKind::config, "eigen: initialization outside the box");
  }
  NagResult r = nag_minimize([&](const Tensor& x, Tensor* g) { return eigen_objective(x, theta, g); }, x_init, cfg);
  EigenResult e;
  e.x = std::move(r.x);
  e.history = std::move(r.history);
  const Tensor d = tdv_grad(e.x, theta);
  e.lambda = dot(d, e.x) / dot(e.x, e.x);
  Tensor res = d;
  axpy(-e.lambda, e.x, res);
  e.residual = 0.5 * dot(res, res);
  const double nd = norm2(d);
  e.relative_residual = nd > 0.0 ? norm2(res) / nd : 0.0;
  return e;
}

void project_ball(Tensor& v, double eps) {
  double n = norm2(v);
  if (n <= eps) return;
  if (eps == 0.0) {
    v.fill(0.0);
    return;
  }
  double s = eps / n;
  for (;;) {
    Tensor w = v * s;
    if (norm2(w) <= eps) {
      v = std::move(w);
      return;
    }
    s = std::nextafter(s, 0.0);
  }
}

AttackResult adversarial_attack(const Tensor& y, const Tensor& xi, double eps, double T, const TdvParams& theta,
                                LinearOpPtr op, std::size_t S, const AttackConfig& cfg, const Tensor* warm_start) {
  if (!(eps >= 0.0)) throw Error(ErrorKind::config, "attack radius must be non-negative");
  const LossFn l2;
  const Tensor z0 = observe(*op, {y, xi});
  auto evaluate = [&](const Tensor& p, Tensor* grad, Tensor* out) {
    FlowState f = run_flow(z0 + p, T, theta, op, S);
    if (out) *out = f.output();
    if (!grad) return l2.value(f.output() - y);
    SampleGradients g = backprop_unroll(f, theta, y, l2, {false, true});
    *grad = std::move(g.dz);
    return g.loss;
  };

  AttackResult res;
  res.xi_t = Tensor(op->range());
  res.clean_loss = evaluate(res.xi_t, nullptr, &res.output);
  res.loss = res.clean_loss;
  res.history.push_back(res.loss);
  if (eps == 0.0) return res;

  Tensor cur = res.xi_t;
  double fcur = res.loss;
  if (warm_start) {
    Tensor w = *warm_start;
    project_ball(w, eps);
    Tensor out;
    const double fw = evaluate(w, nullptr, &out);
    if (fw > fcur) {
      cur = w;
      fcur = fw;
      res.xi_t = w;
      res.output = out;
      res.loss = fw;
    }
  }

  double step = cfg.step;
  Tensor grad;
  evaluate(cur, &grad, nullptr);
  for (int k = 0; k < cfg.steps; ++k) {
    const double gn = norm2(grad);
    if (gn == 0.0) break;
    Tensor cand = cur;
    axpy(step * eps / gn, grad, cand);
    project_ball(cand, eps);
    Tensor cgrad, out;
    const double fc = evaluate(cand, &cgrad, &out);
    if (fc < fcur) {
      step *= 0.5;
      if (step < 1e-8) break;
      continue;
    }
    cur = std::move(cand);
    fcur = fc;
    grad = std::move(cgrad);
    step = std::min(step * 1.5, 2.0);
    if (fcur > res.loss) {
      res.loss = fcur;
      res.xi_t = cur;
      res.output = std::move(out);
    }
    res.history.push_back(fcur);
  }
  return res;
}

GenBoundResult generalization_bound(const std::vector<Tensor>& patches, double q, const Tensor& xi, double T,
                                    const TdvParams& theta, std::size_t S, const LossFn& loss,
                                    const GenBoundConfig& cfg) {
  if (patches.empty()) throw Error(ErrorKind::config, "generalization_bound: empty patch set");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorKind::config, "generalization_bound: q must lie in (0, 1]");
  const Shape& shape = patches.front().shape();
  auto op = make_identity(shape[0], shape[1], shape[2]);
  GenBoundResult res;

  auto flow_loss = [&](const Tensor& y) { return loss.value(run_flow(y + xi, T, theta, op, S).output() - y); };
  for (const Tensor& y : patches) {
    res.set_energy.push_back(tdv_energy(y, theta));
    res.set_loss.push_back(flow_loss(y));
  }
  res.threshold = EmpiricalCdf(res.set_energy).quantile(q);
  std::size_t best_member = 0;
  res.max_member_loss = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (res.set_energy[i] > res.threshold) continue;
    ++res.members;
    res.empirical_risk += res.set_loss[i];
    if (res.set_loss[i] > res.max_member_loss) {
      res.max_member_loss = res.set_loss[i];
      best_member = i;
    }
  }
  res.empirical_risk /= static_cast<double>(res.members);

  const double c = res.threshold;
  const double tol = cfg.feas_tol * std::max(std::abs(c), 1e-12);

  // negated penalized loss and its gradient in y
  auto objective = [&](double w) {
    return [&, w](const Tensor& y, Tensor* g) {
      FlowState f = run_flow(y + xi, T, theta, op, S);
      EnergyGraph eg = record_energy(y, theta);
      const double R = eg.tape.value(eg.energy)[0];
      const double viol = std::max(0.0, R - c);
      double v;
      if (g) {
        SampleGradients sg = backprop_unroll(f, theta, y, loss, {false, true});
        // y enters through z = y + xi and through the residual x_S - y
        *g = loss.grad(f.output() - y) - sg.dz;
        if (viol > 0.0) axpy(2.0 * w * viol, energy_grad(eg), *g);
        v = sg.loss;
      } else {
        v = loss.value(f.output() - y);
      }
      return -(v - w * viol * viol);
    };
  };

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor noise(shape);
  for (double& v : noise.data()) v = u(rng);
  // the paper's uniform-noise start, plus the worst member of the sublevel set
  const std::vector<Tensor> starts{noise, patches[best_member]};

  NagConfig nag = cfg.nag;
  nag.box = Box{0.0, 1.0};
  res.worst_loss = -std::numeric_limits<double>::infinity();
  for (const Tensor& start : starts) {
    Tensor y = start;
    double w = cfg.barrier_weight;
    for (int round = 0; round < cfg.rounds; ++round, w *= cfg.growth) y = nag_minimize(objective(w), y, nag).x;
    const double R = tdv_energy(y, theta);
    const bool feasible = R - c <= tol;
    const double l = flow_loss(y);
    // feasible candidates dominate infeasible ones
    const bool better = (feasible && !res.feasible) || (feasible == res.feasible && l > res.worst_loss);
    if (better) {
      res.y_worst = y;
      res.worst_loss = l;
      res.energy = R;
      res.feasible = feasible;
    }
  }
  res.G = res.worst_loss - res.empirical_risk;
  return res;
}

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::config, "linear_fit needs two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = (sxx > 0 && syy > 0) ? sxy * sxy / (sxx * syy) : 0.0;
  return f;
}

}  // namespace tdv
