// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [work_dir] [criterion ...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "tdv/analysis.hpp"
#include "tdv/experiment.hpp"

using namespace tdv;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Tensor uniform(Shape s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = u(rng);
  return t;
}

Tensor randn(Shape s, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = n(rng);
  return t;
}

TdvArch make_arch(std::size_t a, std::size_t b, std::size_t m, std::size_t C = 1,
                  Potential p = Potential::log_student_t) {
  TdvArch r;
  r.a = a;
  r.b = b;
  r.m = m;
  r.C = C;
  r.potential = p;
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

// ---------------------------------------------------------------- shared desk model

struct Desk {
  fs::path work;
  ExperimentConfig cfg;
  fs::path run;
  Model model;
  json summary;
  double seconds = 0.0;
  bool ready = false;
};

Desk& desk() {
  static Desk d;
  return d;
}

Desk& trained() {
  Desk& d = desk();
  if (d.ready) return d;
  d.cfg = desk_preset(TaskKind::denoise_gray);
  d.cfg.out_dir = (d.work / "runs").string();
  fs::remove_all(d.work / "desk_train");
  std::ostringstream log;
  const auto t0 = Clock::now();
  d.run = run_command("train", d.cfg, d.work / "desk_train", log);
  d.seconds = since(t0);
  std::cout << "  [desk model] " << log.str();
  d.cfg.checkpoint = (d.run / "model.tdvt").string();
  d.model = load_model(d.cfg);
  d.summary = read_json(d.run / "summary.json");
  d.ready = true;
  return d;
}

std::vector<Tensor> heldout(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
  PatchSampler s;
  s.images = load_datasets(cfg).test;
  s.size = cfg.train.patch_size;
  return draw_patches(s, n, seed);
}

// ---------------------------------------------------------------- criteria

Outcome c1_gradient() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::mt19937_64 rng(101);
  for (auto [a, b, m] : {std::tuple{2, 1, 4}, std::tuple{3, 3, 8}}) {
    TdvParams th = init_params(make_arch(a, b, m), 7);
    Tensor x = uniform({1, 8, 8}, rng);
    Tensor g = tdv_grad(x, th);
    Tensor fd(x.shape());
    const double h = 1e-5;
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (tdv_energy(xp, th) - tdv_energy(xm, th)) / (2 * h);
    }
    worst = std::max(worst, norm_inf(g - fd) / norm_inf(fd));
  }
  const double secs = since(t0);
  return {worst < 1e-4 && secs < 10.0, fmt("max relative error %.2e, %.2f s", worst, secs)};
}

Outcome c2_adjoint() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  TdvParams th = init_params(make_arch(2, 1, 4), 8);
  LossFn l2;
  std::vector<LinearOpPtr> ops{make_identity(1, 8, 8), make_downsample(2, 1, 8, 8),
                               make_masked_fourier(cartesian_mask(8, 8, 2, 2))};
  double worst = 0.0;
  for (const auto& op : ops) {
    Tensor y = uniform(op->domain(), rng);
    Tensor z = op->forward(y) + randn(op->range(), rng, 0.1);
    FlowState f = run_flow(z, 0.4, th, op, 5);
    AdjointState adj = adjoint_sweep(f, th, y, l2);
    // p_0 = -d loss / d x_0
    Tensor reverse = oracle::unrolled_input_gradient(*op, f.states[0], z, y, 0.4, 5, th, l2);
    worst = std::max(worst, norm2(adj.p[0] + reverse) / norm2(reverse));
  }
  const double secs = since(t0);
  return {worst <= 1e-8 && secs < 30.0, fmt("max relative deviation %.2e over 3 operators, %.2f s", worst, secs)};
}

Outcome c3_stopping_time() {
  // identity on a fixed batch
  std::mt19937_64 rng(303);
  TdvParams th = init_params(make_arch(2, 1, 4), 9);
  double worst = 0.0;
  for (const auto& op : {make_identity(1, 8, 8), make_downsample(2, 1, 8, 8)}) {
    std::vector<Sample> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({uniform(op->domain(), rng), randn(op->range(), rng, 0.1)});
    const double T = 0.3;
    ControlGradients g = control_gradients(batch, T, th, op, 5, LossFn{}, false);
    worst = std::max(worst, std::abs(g.stop + T * g.dT) / std::abs(T * g.dT));
  }

  // stationarity after training: a fresh sample of the training distribution,
  // independent of the batches used by ADAM and by the T polish
  Desk& d = trained();
  PatchSampler ps;
  ps.images = load_datasets(d.cfg).train;
  ps.size = d.cfg.train.patch_size;
  ps.flips = d.cfg.data.flips;
  ps.rotations = d.cfg.data.rotations;
  LinearOpPtr op = make_task_operator(d.cfg, d.cfg.train.patch_size);
  std::mt19937_64 prng(3030);
  std::vector<Sample> batch;
  for (int i = 0; i < 1024; ++i) {
    Tensor y = ps.draw(prng);
    batch.push_back({y, randn(op->range(), prng, d.cfg.train.sigma)});
  }
  ControlGradients g = control_gradients(batch, d.model.T, d.model.theta, op, d.cfg.train.S, LossFn{d.cfg.loss}, false);
  double mean_abs = 0.0;
  for (double s : g.stop_terms) mean_abs += std::abs(s) / static_cast<double>(g.stop_terms.size());
  const double normalized = std::abs(g.stop) / mean_abs;
  return {worst <= 1e-8 && normalized < 0.05,
          fmt("identity deviation %.2e; T = %.5f (%.5f before polish), normalized condition %.4f on %zu fresh samples",
               worst, d.model.T, d.summary["results"]["T_before_polish"].get<double>(), normalized, batch.size())};
}

Outcome c4_hessian() {
  std::mt19937_64 rng(404);
  double sym = 0.0, fd_err = 0.0;
  for (auto [a, b, m] : {std::tuple{2, 1, 4}, std::tuple{3, 2, 6}}) {
    TdvParams th = init_params(make_arch(a, b, m), 10);
    Tensor x = uniform({1, 16, 16}, rng);
    Tensor p = randn(x.shape(), rng), q = randn(x.shape(), rng);
    const double hpq = dot(tdv_hvp(x, th, p), q), phq = dot(p, tdv_hvp(x, th, q));
    sym = std::max(sym, std::abs(hpq - phq) / std::max(std::abs(hpq), 1e-300));
    const double h = 1e-5;
    Tensor fd = (tdv_grad(x + p * h, th) - tdv_grad(x - p * h, th)) * (0.5 / h);
    Tensor hp = tdv_hvp(x, th, p);
    fd_err = std::max(fd_err, norm2(hp - fd) / norm2(hp));
  }
  return {sym <= 1e-9 && fd_err < 1e-4, fmt("symmetry %.2e, HVP vs FD %.2e", sym, fd_err)};
}

Outcome c5_parameters() {
  TdvArch a;  // a = b = 3, m = 32
  const std::size_t gray = parameter_count(a);
  a.C = 3;
  const std::size_t color = parameter_count(a);
  const long d1 = static_cast<long>(gray) - 387394, d3 = static_cast<long>(color) - 387970;
  const bool ok = color - gray == 576 && std::labs(d1) <= 2 && std::labs(d3) <= 2;
  return {ok, fmt("C=1: %zu, C=3: %zu, difference %zu", gray, color, color - gray)};
}

Outcome c6_invariance() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> c(-10.0, 10.0);
  double worst = 0.0;
  for (std::size_t C : {1u, 3u}) {
    TdvParams th = init_params(make_arch(2, 2, 6, C), 11);
    for (int k = 0; k < 10; ++k) {
      Tensor x = uniform({C, 16, 16}, rng);
      const double r = tdv_energy(x, th);
      const double rs = tdv_energy(x + Tensor(x.shape(), c(rng)), th);
      worst = std::max(worst, std::abs(rs - r) / std::max(1.0, std::abs(r)));
    }
  }
  return {worst <= 1e-10, fmt("max |R(x + c) - R(x)| %.2e (relative to max(1, |R|))", worst)};
}

Outcome c7_stability() {
  Desk& d = trained();
  const auto t0 = Clock::now();
  // closed form vs summation
  double geo = 0.0;
  for (double alpha : {0.3, 0.97, 1.0, 1.05, 2.5}) {
    for (std::size_t k = 0; k <= 40; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += std::pow(alpha, static_cast<double>(i));
      geo = std::max(geo, std::abs(geometric_sum(alpha, k) - s) / std::max(1.0, s));
    }
  }

  ExperimentConfig cfg = d.cfg;
  cfg.analysis.n_samples = 200;
  cfg.analysis.deltas = {0.5, 0.05};
  std::ostringstream log;
  const fs::path run = run_command("stability", cfg, d.work / "stability", log);
  const json s = read_json(run / "summary.json")["results"];

  // the emitted curves follow b_{k+1} = alpha b_k + beta gap
  bool shaped = true;
  std::ifstream bc(run / "bounds.csv");
  std::string line;
  std::getline(bc, line);
  std::map<std::pair<std::string, double>, std::vector<double>> curves;
  while (std::getline(bc, line)) {
    std::stringstream ss(line);
    std::string kind, delta, k, v;
    std::getline(ss, kind, ',');
    std::getline(ss, delta, ',');
    std::getline(ss, k, ',');
    std::getline(ss, v, ',');
    curves[{kind, std::stod(delta)}].push_back(std::stod(v));
  }
  for (const json& row : s["deltas"]) {
    for (const char* kind : {"input", "param"}) {
      const auto& c = curves[{kind, row["delta"].get<double>()}];
      const double alpha = row[kind]["alpha"];
      shaped &= c.size() == cfg.train.S + 1;
      for (std::size_t k = 0; k + 1 < c.size(); ++k) {
        shaped &= std::isfinite(c[k + 1]) && c[k + 1] >= 0.0;
        // increment over the homogeneous part is the constant forcing term
        if (k > 0) {
          const double f1 = c[k + 1] - alpha * c[k], f0 = c[1] - alpha * c[0];
          shaped &= std::abs(f1 - f0) <= 1e-9 * std::max(std::abs(c[k + 1]), 1e-300);
        }
      }
    }
  }

  bool ok = geo <= 1e-12 && shaped;
  std::string detail = fmt("geometric sum %.1e, curves %s", geo, shaped ? "ok" : "malformed");
  for (const json& row : s["deltas"]) {
    const double tol = row["tolerance"], fi = row["input"]["violation"], fp = row["param"]["violation"];
    ok &= fi <= tol && fp <= tol;
    detail += fmt("; delta %.2f: input %.3f, param %.3f (<= %.3f)", row["delta"].get<double>(), fi, fp, tol);
  }
  const double secs = since(t0);
  ok &= secs < 600.0;
  return {ok, detail + fmt("; %.0f s", secs)};
}

Outcome c8_operators() {
  std::mt19937_64 rng(808);
  std::vector<LinearOpPtr> ops{make_identity(3, 8, 8),
                               make_downsample(2, 1, 16, 16),
                               make_downsample(3, 3, 18, 18),
                               make_downsample(4, 1, 16, 16, Boundary::periodic),
                               make_masked_fourier(cartesian_mask(16, 16, 4, 4)),
                               make_radon(8, 23, 16, 16)};
  double adj = 0.0, prox = 0.0;
  for (const auto& op : ops) {
    for (int k = 0; k < 3; ++k) {
      Tensor x = randn(op->domain(), rng), y = randn(op->range(), rng);
      const double a = dot(op->forward(x), y), b = dot(x, op->adjoint(y));
      adj = std::max(adj, std::abs(a - b) / std::max(1.0, std::abs(a)));
    }
    if (op->prox_strategy() == ProxStrategy::fourier_diagonal) {
      Tensor r = randn(op->domain(), rng);
      for (double tau : {0.01, 0.5, 10.0}) prox = std::max(prox, norm_inf(op->prox(r, tau) - op->prox_cg(r, tau).x));
    }
  }
  return {adj <= 1e-10 && prox <= 1e-8, fmt("adjoint gap %.2e, Fourier vs CG prox %.2e", adj, prox)};
}

Outcome c9_training() {
  Desk& d = trained();
  const json h = d.summary["results"]["heldout"];
  const double p0 = h["psnr_x0"]["mean"], p1 = h["psnr_xS"]["mean"];
  const double c0 = h["cost_initial"], c1 = h["cost_final"];
  const bool ok = p1 - p0 >= 2.0 && c1 <= 0.5 * c0 && d.seconds < 900.0;
  return {ok, fmt("held-out PSNR %.2f -> %.2f dB, cost %.4g -> %.4g (ratio %.3f), %.0f s", p0, p1, c0, c1, c1 / c0,
                  d.seconds)};
}

Outcome c10_eigen() {
  Desk& d = trained();
  // FD check of the objective gradient
  std::mt19937_64 rng(1010);
  Tensor x = uniform({1, 16, 16}, rng, 0.2, 0.8);
  Tensor g;
  eigen_objective(x, d.model.theta, &g);
  double fd_err = 0.0;
  for (int k = 0; k < 3; ++k) {
    Tensor p = randn(x.shape(), rng);
    const double h = 1e-5;
    const double fd = (eigen_objective(x + p * h, d.model.theta, nullptr) -
                       eigen_objective(x - p * h, d.model.theta, nullptr)) / (2 * h);
    fd_err = std::max(fd_err, std::abs(dot(g, p) - fd) / std::abs(fd));
  }

  std::ostringstream log;
  const fs::path run = run_command("eigen", d.cfg, d.work / "eigen", log);
  const json s = read_json(run / "summary.json")["results"];
  bool monotone = true;
  for (const json& r : s["inits"]) monotone &= r["monotone"].get<bool>();
  const double best = s["best_relative_residual"];
  return {monotone && fd_err < 1e-4 && best < 0.1,
          fmt("monotone %s, gradient FD %.2e, best relative residual %.4f over %zu inits", monotone ? "yes" : "no",
              fd_err, best, s["inits"].size())};
}

Outcome c11_attack() {
  Desk& d = trained();
  LinearOpPtr op = make_task_operator(d.cfg, d.cfg.train.patch_size);
  const auto ys = heldout(d.cfg, 4, 1111);
  std::mt19937_64 rng(1112);
  const double sigma = d.cfg.train.sigma;
  AttackConfig ac;
  ac.steps = static_cast<int>(d.cfg.analysis.attack_steps);
  bool inside = true, nested = true;
  double gain = 0.0;
  for (const Tensor& y : ys) {
    const Tensor xi = randn(op->range(), rng, sigma);
    AttackResult a1 = adversarial_attack(y, xi, sigma, d.model.T, d.model.theta, op, d.cfg.train.S, ac);
    AttackResult a2 = adversarial_attack(y, xi, 2 * sigma, d.model.T, d.model.theta, op, d.cfg.train.S, ac, &a1.xi_t);
    inside &= norm2(a1.xi_t) <= sigma && norm2(a2.xi_t) <= 2 * sigma;
    nested &= a2.loss >= a1.loss && a1.loss >= a1.clean_loss;
    gain = std::max(gain, a2.loss / a1.clean_loss);
  }
  return {inside && nested, fmt("%zu patches: radius %s, nesting %s, largest loss ratio at 2 sigma %.2f", ys.size(),
                                inside ? "ok" : "violated", nested ? "ok" : "violated", gain)};
}

Outcome c12_genbound() {
  Desk& d = trained();
  const auto patches = heldout(d.cfg, d.cfg.analysis.genbound_patches, 1212);
  std::mt19937_64 rng(1213);
  const Tensor xi = randn(patches[0].shape(), rng, d.cfg.train.sigma);
  GenBoundConfig gc;
  gc.barrier_weight = d.cfg.analysis.barrier_weight;
  gc.nag.max_steps = static_cast<int>(d.cfg.analysis.genbound_steps);
  bool ok = true;
  std::string detail;
  for (double q : {0.1, 0.5, 1.0}) {
    GenBoundResult r = generalization_bound(patches, q, xi, d.model.T, d.model.theta, d.cfg.train.S,
                                            LossFn{d.cfg.loss}, gc);
    const auto [lo, hi] = std::minmax_element(r.y_worst.data().begin(), r.y_worst.data().end());
    const bool in_box = *lo >= 0.0 && *hi <= 1.0;
    const bool dominates = r.worst_loss >= r.max_member_loss;
    ok &= in_box && r.feasible && dominates;
    detail += fmt("%sq %.1f: worst %.4g vs max member %.4g, G %.4g%s", detail.empty() ? "" : "; ", q, r.worst_loss,
                  r.max_member_loss, r.G, r.feasible ? "" : " (infeasible)");
  }
  return {ok, detail};
}

// CSV bytes of every file under a run directory
std::map<std::string, std::string> csv_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

Outcome c13_reproducible() {
  Desk& d = desk();
  ExperimentConfig cfg = desk_preset(TaskKind::denoise_gray);
  for (const char* o : {"train.iterations=3", "analysis.heldout=4", "analysis.n_samples=8", "analysis.eigen_steps=15",
                        "analysis.eigen_inits=2", "analysis.eigen_size=16", "analysis.attack_steps=8",
                        "analysis.attack_patches=2", "analysis.genbound_patches=8", "analysis.genbound_steps=8",
                        "analysis.qs=0.5", "analysis.sweep_factors=0.5,1", "train.polish_batch=8"}) {
    apply_override(cfg, o);
  }
  std::size_t files = 0;
  std::vector<std::string> differing;
  std::ostringstream log;
  for (const char* side : {"a", "b"}) fs::remove_all(d.work / "repro" / side);
  std::map<std::string, std::map<std::string, std::string>> seen;
  for (const char* side : {"a", "b"}) {
    ExperimentConfig c = cfg;
    const fs::path root = d.work / "repro" / side;
    c.out_dir = root.string();
    run_command("train", c, root / "train", log);
    c.checkpoint = (root / "train" / "model.tdvt").string();
    for (const std::string& cmd : kCommands) {
      if (cmd != "train") run_command(cmd, c, root / cmd, log);
    }
    for (const std::string& cmd : kCommands) {
      for (auto& [name, bytes] : csv_bytes(root / cmd)) seen[cmd + "/" + name][side] = bytes;
    }
  }
  for (const auto& [name, sides] : seen) {
    ++files;
    if (sides.size() != 2 || sides.at("a") != sides.at("b")) differing.push_back(name);
  }
  std::string detail = fmt("%zu CSV files from %zu subcommands", files, kCommands.size());
  for (const auto& n : differing) detail += ", differs: " + n;
  return {differing.empty() && files >= kCommands.size(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  desk().work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  fs::create_directories(desk().work);
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", c1_gradient},    {"adjoint equivalence", c2_adjoint},
      {"stopping-time identity", c3_stopping_time}, {"Hessian symmetry and HVP", c4_hessian},
      {"architecture arithmetic", c5_parameters}, {"constant-shift invariance", c6_invariance},
      {"stability bounds", c7_stability},       {"operator contracts", c8_operators},
      {"desk-scale training efficacy", c9_training}, {"eigenfunction solver", c10_eigen},
      {"adversarial attack", c11_attack},       {"generalization bound", c12_genbound},
      {"reproducibility", c13_reproducible}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
