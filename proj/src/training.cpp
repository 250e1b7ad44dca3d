#include "tdv/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tdv {

double LossFn::value(const Tensor& r) const {
  double s = 0.0;
  if (kind == LossKind::squared_l2) {
    for (double v : r.data()) s += v * v;
  } else {
    for (double v : r.data()) s += std::sqrt(v * v + eps * eps);
  }
  return s;
}

Tensor LossFn::grad(const Tensor& r) const {
  Tensor g(r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) {
    g[i] = kind == LossKind::squared_l2 ? 2.0 * r[i] : r[i] / std::sqrt(r[i] * r[i] + eps * eps);
  }
  return g;
}

std::string to_string(LossKind k) { return k == LossKind::squared_l2 ? "squared_l2" : "charbonnier"; }

LossKind parse_loss(const std::string& s) {
  if (s == "squared_l2") return LossKind::squared_l2;
  if (s == "charbonnier") return LossKind::charbonnier;
  throw Error(ErrorKind::config, "unknown loss '" + s + "' (expected squared_l2 or charbonnier)");
}

Tensor observe(const LinearOp& op, const Sample& s) { return op.forward(s.y) + s.xi; }

double sampled_cost(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S,
                    const LossFn& loss) {
  if (batch.empty()) throw Error(ErrorKind::config, "sampled_cost: empty batch");
  double acc = 0.0;
  for (const Sample& s : batch) {
    FlowState f = run_flow(observe(*op, s), T, theta, op, S, std::max(T, kDefaultTmax));
    acc += loss.value(f.output() - s.y);
  }
  return acc / static_cast<double>(batch.size());
}

AdjointState adjoint_sweep(const FlowState& flow, const TdvParams& theta, const Tensor& y, const LossFn& loss) {
  const std::size_t S = flow.S;
  const double tau = flow.T / static_cast<double>(S);
  AdjointState a;
  a.p.resize(S + 1);
  a.p[S] = loss.grad(flow.output() - y) * -1.0;
  for (std::size_t s = S; s-- > 0;) {
    Tensor u = flow.op->prox(a.p[s + 1], tau);
    if (tau == 0.0) {
      a.p[s] = std::move(u);
      continue;
    }
    Tensor hu = tdv_hvp(flow.states[s], theta, u);
    axpy(-tau, hu, u);
    a.p[s] = std::move(u);
  }
  return a;
}

namespace {

SampleGradients sweep(const FlowState& flow, std::vector<EnergyGraph>* graphs, const TdvParams& theta, const Tensor& y,
                      const LossFn& loss, BackpropOptions opts) {
  const LinearOp& op = *flow.op;
  const std::size_t S = flow.S;
  const double tau = flow.T / static_cast<double>(S);
  const Tensor Atz = op.adjoint(flow.z);

  SampleGradients out;
  const Tensor r = flow.output() - y;
  out.loss = loss.value(r);
  if (opts.theta) out.dtheta = zeros_like(theta);
  if (opts.z) out.dz = Tensor(op.range());

  // lambda_s = d loss / d x_s
  Tensor lambda = loss.grad(r);
  for (std::size_t s = S; s-- > 0;) {
    const Tensor& xs = flow.states[s];
    const Tensor& xn = flow.states[s + 1];
    Tensor u = op.prox(lambda, tau);

    EnergyGraph fresh;
    if (!graphs) fresh = record_energy(xs, theta);
    EnergyGraph& g = graphs ? (*graphs)[s] : fresh;
    Tensor grad = graphs ? g.tape.grad(g.x) : energy_grad(g);
    // x_{s+1} = B^{-1}(x_s + tau (A^T z - D_1R(x_s))), dB/dtau = A^T A
    Tensor dxdtau = Atz - grad - op.normal(xn);
    out.dT += dot(u, dxdtau) / static_cast<double>(S);
    out.stop -= dot(u, xn - xs);
    if (opts.z) axpy(tau, op.forward(u), out.dz);

    if (tau != 0.0) {
      MixedHvp m = mixed_hvp(g, theta, u, opts.theta);
      if (opts.theta) axpy(-tau, m.htheta, out.dtheta);
      axpy(-tau, m.hx, u);
    }
    lambda = std::move(u);
  }
  if (opts.z) out.dz = out.dz + op.init_adjoint(lambda);
  out.dx0 = std::move(lambda);
  return out;
}

}  // namespace

SampleGradients backprop_unroll(const FlowState& flow, const TdvParams& theta, const Tensor& y, const LossFn& loss,
                                BackpropOptions opts) {
  return sweep(flow, nullptr, theta, y, loss, opts);
}

SampleGradients backprop_unroll(RecordedFlow& rec, const TdvParams& theta, const Tensor& y, const LossFn& loss,
                                BackpropOptions opts) {
  if (rec.graphs.size() != rec.flow.S) throw Error(ErrorKind::config, "backprop_unroll: recording does not match the flow");
  return sweep(rec.flow, &rec.graphs, theta, y, loss, opts);
}

ControlGradients control_gradients(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op,
                                   std::size_t S, const LossFn& loss, bool with_theta) {
  if (batch.empty()) throw Error(ErrorKind::config, "control_gradients: empty batch");
  const double n = static_cast<double>(batch.size());
  ControlGradients cg;
  if (with_theta) cg.dtheta = zeros_like(theta);
  for (const Sample& s : batch) {
    RecordedFlow f = run_flow_recorded(observe(*op, s), T, theta, op, S, std::max(T, kDefaultTmax));
    SampleGradients g = backprop_unroll(f, theta, s.y, loss, {with_theta, false});
    cg.cost += g.loss / n;
    cg.dT += g.dT / n;
    cg.stop += g.stop / n;
    cg.stop_terms.push_back(g.stop);
    if (with_theta) axpy(1.0 / n, g.dtheta, cg.dtheta);
  }
  return cg;
}

double stopping_time_condition(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op,
                               std::size_t S, const LossFn& loss) {
  return control_gradients(batch, T, theta, op, S, loss, false).stop;
}

double adam_lr(const AdamConfig& cfg, std::size_t step) {
  const std::size_t halvings = cfg.halving_period ? (step - 1) / cfg.halving_period : 0;
  return std::ldexp(cfg.lr, -static_cast<int>(halvings));
}

void adam_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& st, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw Error(ErrorKind::shape, "adam: parameter and gradient counts differ");
  if (st.m.empty()) {
    for (const Tensor& p : params) {
      st.m.emplace_back(p.shape());
      st.v.emplace_back(p.shape());
    }
  }
  ++st.step;
  const double lr = adam_lr(cfg, st.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k], grads[k], "adam");
    Tensor& m = st.m[k];
    Tensor& v = st.v[k];
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = grads[k][i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      params[k][i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
  os << "iter,cost,stop_cond,lr,T\n" << std::setprecision(17);
  for (const LogRow& r : log) os << r.iter << ',' << r.cost << ',' << r.stop << ',' << r.lr << ',' << r.T << '\n';
  if (!os) throw Error(ErrorKind::io, "write failed: " + path.string());
}

std::vector<Sample> draw_batch(const PatchSource& source, const LinearOp& op, std::size_t n, double sigma,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Sample> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.y = source(rng);
    s.xi = Tensor(op.range());
    for (double& v : s.xi.data()) v = noise(rng);
    batch.push_back(std::move(s));
  }
  return batch;
}

void project_controls(TdvParams& theta, double& T, const TrainConfig& cfg) {
  if (cfg.theta_box) {
    const double b = *cfg.theta_box;
    for (Tensor& t : theta.tensors())
      for (double& v : t.data()) v = std::clamp(v, -b, b);
  }
  theta.project();
  T = std::clamp(T, 0.0, cfg.T_max);
}

TrainResult train(const PatchSource& source, LinearOpPtr op, const TdvParams& theta0, const TrainConfig& cfg,
                  const LossFn& loss) {
  if (cfg.batch_size == 0 || cfg.S == 0) throw Error(ErrorKind::config, "train: batch_size and S must be positive");
  TrainResult res;
  res.theta = theta0;
  res.T = cfg.T_init;
  if (cfg.iterations == 0) return res;
  project_controls(res.theta, res.T, cfg);

  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    auto batch = draw_batch(source, *op, cfg.batch_size, cfg.sigma, rng);
    ControlGradients g = control_gradients(batch, res.T, res.theta, op, cfg.S, loss);
    if (!std::isfinite(g.cost) || !std::isfinite(g.dT)) {
      std::ostringstream os;
      os << "train: non-finite cost at iteration " << it;
      if (!cfg.checkpoint_dir.empty()) {
        const auto dump = cfg.checkpoint_dir / ("diverged_" + std::to_string(it) + ".tdv");
        save_checkpoint(dump, res.theta, res.T);
        os << ", controls dumped to " << dump.string();
      }
      throw Error(ErrorKind::numeric, os.str());
    }
    res.log.push_back({it, g.cost, g.stop, adam_lr(cfg.adam, it), res.T});

    std::vector<Tensor> params = res.theta.tensors();
    params.push_back(Tensor::scalar(res.T));
    std::vector<Tensor> grads = g.dtheta.tensors();
    grads.push_back(Tensor::scalar(g.dT));
    adam_update(params, grads, adam, cfg.adam);
    res.T = params.back()[0];
    params.pop_back();
    res.theta.tensors() = std::move(params);
    project_controls(res.theta, res.T, cfg);

    if (cfg.checkpoint_every && it % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty()) {
      save_checkpoint(cfg.checkpoint_dir / ("ckpt_" + std::to_string(it) + ".tdv"), res.theta, res.T);
    }
  }
  res.T_sgd = res.T;
  if (cfg.polish_batch && res.T > 0.0) {
    // theta fixed: solve dJ/dT = 0 on one large sample, widening once if the root is outside
    auto batch = draw_batch(source, *op, cfg.polish_batch, cfg.sigma, rng);
    double lo = 0.8 * res.T, hi = std::min(1.25 * res.T, cfg.T_max);
    double t = refine_stopping_time(batch, res.T, res.theta, op, cfg.S, loss, lo, hi);
    if (t == lo || t == hi) {
      lo = 0.5 * res.T;
      hi = std::min(2.0 * res.T, cfg.T_max);
      t = refine_stopping_time(batch, t, res.theta, op, cfg.S, loss, lo, hi);
    }
    res.T = t;
  }
  return res;
}

double refine_stopping_time(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op,
                            std::size_t S, const LossFn& loss, double lo, double hi, int max_iter) {
  auto dJ = [&](double t) { return control_gradients(batch, t, theta, op, S, loss, false).dT; };
  double a = lo, b = hi;
  double fa = dJ(a), fb = dJ(b);
  if (fa * fb > 0.0) {
    // monotone cost on the bracket
    return sampled_cost(batch, a, theta, op, S, loss) <= sampled_cost(batch, b, theta, op, S, loss) ? a : b;
  }
  // Illinois variant of regula falsi, seeded by the current T when it lies inside
  double c = std::clamp(T, a, b);
  int side = 0;
  for (int k = 0; k < max_iter; ++k) {
    const double fc = dJ(c);
    if (fc == 0.0) return c;
    if (fc * fa < 0.0) {
      b = c;
      fb = fc;
      if (side == -1) fa *= 0.5;
      side = -1;
    } else {
      a = c;
      fa = fc;
      if (side == 1) fb *= 0.5;
      side = 1;
    }
    if (b - a <= 1e-12 * std::max(1.0, std::abs(b))) break;
    c = (a * fb - b * fa) / (fb - fa);
  }
  return c;
}

}  // namespace tdv
