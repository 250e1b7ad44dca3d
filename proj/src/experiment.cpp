#include "tdv/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tdv/analysis.hpp"

namespace tdv {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::shape: return 2;
    case ErrorKind::numeric: return 3;
    case ErrorKind::io: return 4;
  }
  return 1;
}

namespace {

// Independent stream per (run seed, purpose, index).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

enum Tag : std::uint64_t { kHeldout = 1, kNoise, kStabFit, kStabCheck, kParamFit, kParamCheck, kEigen, kAttack, kGen };

std::string num(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : os_(path) {
    if (!os_) throw Error(ErrorKind::io, "cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
    if (!os_) throw Error(ErrorKind::io, "write failed");
  }

 private:
  std::ofstream os_;
};

Tensor noise_like(const Shape& s, double sigma, std::mt19937_64& rng) {
  Tensor t(s);
  if (sigma == 0.0) return t;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : t.data()) v = n(rng);
  return t;
}

Tensor center_crop(const Tensor& t, std::size_t side) {
  const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  const std::size_t i0 = (H - side) / 2, j0 = (W - side) / 2;
  Tensor out(Shape{C, side, side});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) out[(c * side + i) * side + j] = t[(c * H + i0 + i) * W + j0 + j];
  return out;
}

// Analyses perturb the observation; super-resolution trains noise-free.
double analysis_sigma(const ExperimentConfig& cfg) { return cfg.train.sigma > 0.0 ? cfg.train.sigma : 0.01; }

PatchSampler sampler(const std::vector<Tensor>& images, const ExperimentConfig& cfg) {
  PatchSampler s;
  s.images = images;
  s.size = cfg.train.patch_size;
  s.flips = cfg.data.flips;
  s.rotations = cfg.data.rotations;
  return s;
}

std::vector<Tensor> heldout_patches(const Datasets& d, const ExperimentConfig& cfg, std::size_t n) {
  auto rng = stream(cfg.seed, kHeldout);
  PatchSampler s = sampler(d.test, cfg);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.draw(rng));
  return out;
}

std::vector<Sample> noisy_batch(const std::vector<Tensor>& ys, const LinearOp& op, double sigma, std::uint64_t seed,
                                std::uint64_t tag) {
  std::vector<Sample> b;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    auto rng = stream(seed, tag, i);
    b.push_back({ys[i], noise_like(op.range(), sigma, rng)});
  }
  return b;
}

// PGM for gray, PPM for colour
void save_img(const Tensor& t, const fs::path& dir, const std::string& stem) {
  save_image(t, dir / (stem + (t.dim(0) == 3 ? ".ppm" : ".pgm")));
}

bool is_image(const Shape& s) { return s.size() == 3 && (s[0] == 1 || s[0] == 3); }

void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  os << j.dump(2) << '\n';
  if (!os) throw Error(ErrorKind::io, "cannot write " + p.string());
}

json stats(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(std::max<std::size_t>(1, v.size()));
  return {{"mean", mean},
          {"min", v.empty() ? 0.0 : *std::min_element(v.begin(), v.end())},
          {"max", v.empty() ? 0.0 : *std::max_element(v.begin(), v.end())}};
}

// ---------------------------------------------------------------- train

json cmd_train(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Datasets data = load_datasets(cfg);
  const PatchSampler ps = sampler(data.train, cfg);
  LinearOpPtr op = make_task_operator(cfg, cfg.train.patch_size);
  const TdvParams theta0 = init_params(cfg.arch, cfg.seed);
  const LossFn loss{cfg.loss};
  json s{{"parameters", parameter_count(cfg.arch)}};

  if (cfg.train.iterations == 0) {
    save_checkpoint(dir / "model.tdvt", theta0, cfg.train.T_init);
    s["T"] = cfg.train.T_init;
    return s;
  }

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  if (tc.checkpoint_every) tc.checkpoint_dir = dir / "checkpoints";
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train([&](std::mt19937_64& g) { return ps.draw(g); }, op, theta0, tc, loss);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_log_csv(dir / "log.csv", r.log);
  save_checkpoint(dir / "model.tdvt", r.theta, r.T);
  log << "trained " << r.log.size() << " iterations in " << secs << " s, T = " << r.T << '\n';

  // fixed held-out batch: sampled cost before and after, PSNR of x_0 and x_S
  const auto ys = heldout_patches(data, cfg, cfg.analysis.heldout);
  const auto batch = noisy_batch(ys, *op, cfg.train.sigma, cfg.seed, kNoise);
  const double cost0 = sampled_cost(batch, cfg.train.T_init, theta0, op, cfg.train.S, loss);
  const double cost1 = sampled_cost(batch, r.T, r.theta, op, cfg.train.S, loss);
  const double stop = stopping_time_condition(batch, r.T, r.theta, op, cfg.train.S, loss);
  Csv csv(dir / "heldout.csv", {"patch", "psnr_x0", "psnr_xS"});
  std::vector<double> p0, p1;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor z = observe(*op, batch[i]);
    FlowState f = run_flow(z, r.T, r.theta, op, cfg.train.S, cfg.train.T_max);
    p0.push_back(task_psnr(f.states.front(), batch[i].y, cfg));
    p1.push_back(task_psnr(f.output(), batch[i].y, cfg));
    csv.row({std::to_string(i), num(p0.back()), num(p1.back())});
  }
  s["T"] = r.T;
  s["T_before_polish"] = r.T_sgd;
  s["heldout"] = {{"cost_initial", cost0}, {"cost_final", cost1}, {"stop_condition", stop},
                  {"psnr_x0", stats(p0)}, {"psnr_xS", stats(p1)}};
  return s;
}

// ---------------------------------------------------------------- reconstruct / sweep-T

json cmd_reconstruct(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Model m = load_model(cfg);
  const auto images = square_crops(load_datasets(cfg).test, cfg);
  const std::size_t S = cfg.train.S;
  const bool variational = cfg.task.kind == TaskKind::ct || cfg.task.kind == TaskKind::mri;
  std::vector<std::string> header{"image", "psnr_x0", "psnr_xS"};
  if (variational) header.push_back("psnr_variational");
  Csv csv(dir / "reconstruct.csv", header);
  std::vector<double> p0, p1, pv;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Reconstruction r = reconstruct_one(images[i], i, cfg, m, m.T, S);
    std::vector<std::string> row{std::to_string(i), num(r.psnr_x0), num(r.psnr_xS)};
    p0.push_back(r.psnr_x0);
    p1.push_back(r.psnr_xS);
    const std::string id = std::to_string(i);
    save_img(r.y, dir, "y_" + id);
    if (is_image(r.z.shape())) save_img(r.z, dir, "z_" + id);
    save_img(r.x0, dir, "x0_" + id);
    save_img(r.xS, dir, "xS_" + id);
    if (variational) {
      LinearOpPtr op = make_task_operator(cfg, r.y.dim(1));
      NagConfig nc;
      nc.max_steps = 300;
      NagResult v = variational_reconstruct(r.z, *op, m.theta, cfg.task.lambda, nc);
      pv.push_back(task_psnr(v.x, r.y, cfg));
      row.push_back(num(pv.back()));
      save_img(v.x, dir, "var_" + id);
    }
    csv.row(row);
  }
  if (!images.empty()) {
    // full trajectory of the first image
    LinearOpPtr op = make_task_operator(cfg, images[0].dim(1));
    Reconstruction r = reconstruct_one(images[0], 0, cfg, m, m.T, S);
    FlowState f = run_flow(r.z, m.T, m.theta, op, S, std::max(cfg.train.T_max, m.T));
    save_trajectory(dir / "trajectory.tdvt", f);
    Csv tr(dir / "trajectory.csv", {"k", "t", "psnr"});
    for (std::size_t k = 0; k <= S; ++k) {
      tr.row({std::to_string(k), num(m.T * static_cast<double>(k) / static_cast<double>(S)),
              num(task_psnr(f.states[k], r.y, cfg))});
    }
  }
  log << "reconstructed " << images.size() << " images\n";
  json s{{"T", m.T}, {"S", S}, {"images", images.size()}, {"psnr_x0", stats(p0)}, {"psnr_xS", stats(p1)}};
  if (variational) s["psnr_variational"] = stats(pv);
  return s;
}

json cmd_sweep(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Model m = load_model(cfg);
  const auto images = square_crops(load_datasets(cfg).test, cfg);
  Csv csv(dir / "sweep.csv", {"factor", "T", "psnr_mean"});
  json rows = json::array();
  double best = -1e300, best_T = 0.0;
  for (double f : cfg.analysis.sweep_factors) {
    const double T = f * m.T;
    double mean = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      Reconstruction r = reconstruct_one(images[i], i, cfg, m, T, cfg.train.S);
      mean += r.psnr_xS / static_cast<double>(images.size());
      if (i == 0) save_img(r.xS, dir, "xS_factor_" + num(f));
    }
    csv.row({num(f), num(T), num(mean)});
    rows.push_back({{"factor", f}, {"T", T}, {"psnr", mean}});
    if (mean > best) best = mean, best_T = T;
    log << "T = " << T << ": " << mean << " dB\n";
  }
  return {{"T_star", m.T}, {"sweep", rows}, {"best_T", best_T}};
}

// ---------------------------------------------------------------- stability

json cmd_stability(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Model m = load_model(cfg);
  const Datasets data = load_datasets(cfg);
  const PatchSampler ps = sampler(data.test, cfg);
  LinearOpPtr op = make_task_operator(cfg, cfg.train.patch_size);
  const std::size_t S = cfg.train.S, n = cfg.analysis.n_samples;
  const double sigma = analysis_sigma(cfg);

  InputPairSampler ip = [&](std::mt19937_64& r) {
    Tensor y = ps.draw(r);
    Tensor xi = noise_like(op->range(), sigma, r);
    return InputPair{y, xi, noise_like(op->range(), sigma, r)};
  };
  SampleSampler sp = [&](std::mt19937_64& r) {
    Tensor y = ps.draw(r);
    return Sample{y, noise_like(op->range(), sigma, r)};
  };

  // independent samples fit the CDFs and validate the bounds
  const InputCdfs fit = estimate_input_cdf(ip, m.T, m.theta, op, S, n, stream(cfg.seed, kStabFit)());
  const InputCdfs check = estimate_input_cdf(ip, m.T, m.theta, op, S, n, stream(cfg.seed, kStabCheck)());
  const ParamCdfs pfit =
      estimate_param_cdfs(sp, m.T, m.theta, op, S, cfg.analysis.eps, n, stream(cfg.seed, kParamFit)(), cfg.train.theta_box);
  const ParamCdfs pcheck = estimate_param_cdfs(sp, m.T, m.theta, op, S, cfg.analysis.eps, n,
                                               stream(cfg.seed, kParamCheck)(), cfg.train.theta_box);

  auto dump_runs = [&](const fs::path& p, const std::vector<PairRun>& runs) {
    Csv csv(p, {"sample", "k", "gap", "input_gap"});
    for (std::size_t i = 0; i < runs.size(); ++i)
      for (std::size_t k = 0; k < runs[i].gap.size(); ++k)
        csv.row({std::to_string(i), std::to_string(k), num(runs[i].gap[k]), num(runs[i].input_gap)});
  };
  dump_runs(dir / "input_runs.csv", check.runs);
  dump_runs(dir / "param_runs.csv", pcheck.runs);
  {
    Csv c(dir / "lipschitz.csv", {"sample", "L_x_input", "L_x_param", "L_theta"});
    for (std::size_t i = 0; i < n; ++i) {
      c.row({std::to_string(i), num(fit.runs[i].lipschitz_x), num(pfit.runs[i].lipschitz_x),
             num(pfit.runs[i].lipschitz_theta)});
    }
  }

  auto median_gap = [](const std::vector<PairRun>& runs) {
    std::vector<double> g;
    for (const auto& r : runs) g.push_back(r.input_gap);
    return EmpiricalCdf(g).quantile(0.5);
  };
  const double zgap = median_gap(check.runs), tgap = median_gap(pcheck.runs);
  Csv bounds(dir / "bounds.csv", {"kind", "delta", "k", "bound"});
  json out = json::array();
  for (double delta : cfg.analysis.deltas) {
    std::size_t bad_in = 0, bad_par = 0;
    for (const PairRun& r : check.runs) {
      bad_in += violates(r, stability_bound_input(delta, fit.lx, m.T, S, *op, op->init_norm(), r.input_gap));
    }
    for (const PairRun& r : pcheck.runs) {
      bad_par += violates(r, stability_bound_params(delta, pfit.lx, pfit.ltheta, m.T, S, *op, r.input_gap));
    }
    // curves at the median perturbation size, for plotting against the runs
    const BoundCurve ci = stability_bound_input(delta, fit.lx, m.T, S, *op, op->init_norm(), zgap);
    const BoundCurve cp = stability_bound_params(delta, pfit.lx, pfit.ltheta, m.T, S, *op, tgap);
    for (std::size_t k = 0; k <= S; ++k) {
      bounds.row({"input", num(delta), std::to_string(k), num(ci.values[k])});
      bounds.row({"param", num(delta), std::to_string(k), num(cp.values[k])});
    }
    const double tol = violation_tolerance(delta, n);
    const double fi = static_cast<double>(bad_in) / static_cast<double>(n);
    const double fp = static_cast<double>(bad_par) / static_cast<double>(n);
    log << "delta " << delta << ": violation input " << fi << ", param " << fp << " (tolerance " << tol << ")\n";
    out.push_back({{"delta", delta},
                   {"tolerance", tol},
                   {"input", {{"violation", fi}, {"alpha", ci.alpha}, {"beta", ci.beta}}},
                   {"param", {{"violation", fp}, {"alpha", cp.alpha}, {"beta", cp.beta}}}});
  }
  return {{"n_samples", n}, {"T", m.T}, {"S", S}, {"eps", cfg.analysis.eps}, {"deltas", out}};
}

// ---------------------------------------------------------------- eigen

// Initializations cycle through noise, a held-out crop and sparse dot patterns.
Tensor eigen_init(std::size_t k, std::size_t n, std::size_t C, const std::vector<Tensor>& test, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x(Shape{C, n, n});
  if (k % 4 == 0) {
    for (double& v : x.data()) v = u(rng);
  } else if (k % 4 == 1 && !test.empty() && test[0].dim(1) >= n && test[0].dim(2) >= n) {
    x = center_crop(test[k / 4 % test.size()], n);
  } else {
    const std::size_t dots = k % 4 == 2 ? std::max<std::size_t>(1, n * n / 128) : 1 + k / 4;
    std::uniform_int_distribution<std::size_t> pos(0, n * n - 1);
    for (std::size_t d = 0; d < dots; ++d) {
      const std::size_t p = pos(rng);
      for (std::size_t c = 0; c < C; ++c) x[c * n * n + p] = 1.0;
    }
  }
  return x;
}

json cmd_eigen(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Model m = load_model(cfg);
  const auto test = load_datasets(cfg).test;
  const std::size_t n = cfg.analysis.eigen_size, C = cfg.task.channels;
  NagConfig nc;
  nc.max_steps = static_cast<int>(cfg.analysis.eigen_steps);
  nc.box = Box{};
  Csv csv(dir / "eigen.csv", {"init", "lambda", "residual", "relative_residual", "steps"});
  Csv hist(dir / "eigen_history.csv", {"init", "iterate", "objective"});
  json rows = json::array();
  double best = 1e300;
  for (std::size_t k = 0; k < cfg.analysis.eigen_inits; ++k) {
    auto rng = stream(cfg.seed, kEigen, k);
    const Tensor x0 = eigen_init(k, n, C, test, rng);
    EigenResult e = eigen_extract(x0, m.theta, nc);
    csv.row({std::to_string(k), num(e.lambda), num(e.residual), num(e.relative_residual),
             std::to_string(e.history.size() - 1)});
    for (std::size_t i = 0; i < e.history.size(); ++i) hist.row({std::to_string(k), std::to_string(i), num(e.history[i])});
    save_img(x0, dir, "init_" + std::to_string(k));
    save_img(e.x, dir, "eigen_" + std::to_string(k));
    save_tensor(dir / ("eigen_" + std::to_string(k) + ".tdvt"), e.x);
    bool monotone = true;
    for (std::size_t i = 1; i < e.history.size(); ++i) monotone &= e.history[i] <= e.history[i - 1];
    rows.push_back({{"init", k}, {"lambda", e.lambda}, {"relative_residual", e.relative_residual}, {"monotone", monotone}});
    best = std::min(best, e.relative_residual);
    log << "init " << k << ": Lambda " << e.lambda << ", relative residual " << e.relative_residual << '\n';
  }
  return {{"size", n}, {"inits", rows}, {"best_relative_residual", best}};
}

// ---------------------------------------------------------------- attack

json cmd_attack(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Model m = load_model(cfg);
  const Datasets data = load_datasets(cfg);
  LinearOpPtr op = make_task_operator(cfg, cfg.train.patch_size);
  const double sigma = analysis_sigma(cfg);
  const auto ys = heldout_patches(data, cfg, cfg.analysis.attack_patches);
  const auto batch = noisy_batch(ys, *op, sigma, cfg.seed, kAttack);
  std::vector<double> radii = cfg.analysis.attack_radii;
  std::sort(radii.begin(), radii.end());
  AttackConfig ac;
  ac.steps = static_cast<int>(cfg.analysis.attack_steps);

  Csv csv(dir / "attack.csv", {"patch", "radius", "eps", "norm", "clean_loss", "loss", "psnr_clean", "psnr_attacked"});
  std::size_t nested = 0;
  std::map<double, std::vector<double>> by_radius;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = batch[i];
    Tensor warm;
    double prev = -1.0, clean = 0.0;
    bool ok = true;
    for (double rad : radii) {
      const double eps = rad * sigma;
      AttackResult a = adversarial_attack(s.y, s.xi, eps, m.T, m.theta, op, cfg.train.S, ac, warm.size() ? &warm : nullptr);
      warm = a.xi_t;
      clean = a.clean_loss;
      FlowState f = run_flow(op->forward(s.y) + s.xi, m.T, m.theta, op, cfg.train.S, std::max(cfg.train.T_max, m.T));
      csv.row({std::to_string(i), num(rad), num(eps), num(norm2(a.xi_t)), num(a.clean_loss), num(a.loss),
               num(task_psnr(f.output(), s.y, cfg)), num(task_psnr(a.output, s.y, cfg))});
      ok &= a.loss >= std::max(prev, a.clean_loss);
      prev = a.loss;
      by_radius[rad].push_back(a.loss);
      if (i == 0) {
        save_img(a.output, dir, "attacked_r" + num(rad));
        if (is_image(a.xi_t.shape())) {
          // shown in [-0.5, 0.5]
          save_img(a.xi_t + Tensor(a.xi_t.shape(), 0.5), dir, "perturbation_r" + num(rad));
        }
      }
    }
    (void)clean;
    nested += ok;
  }
  json per = json::object();
  for (const auto& [r, v] : by_radius) per[num(r)] = stats(v);
  log << nested << " of " << batch.size() << " patches have nested attacked losses\n";
  return {{"patches", batch.size()}, {"nested", nested}, {"loss_by_radius", per}};
}

// ---------------------------------------------------------------- genbound

json cmd_genbound(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Model m = load_model(cfg);
  const Datasets data = load_datasets(cfg);
  const auto patches = heldout_patches(data, cfg, cfg.analysis.genbound_patches);
  auto rng = stream(cfg.seed, kGen);
  const Tensor xi = noise_like(patches.at(0).shape(), analysis_sigma(cfg), rng);
  GenBoundConfig gc;
  gc.barrier_weight = cfg.analysis.barrier_weight;
  gc.nag.max_steps = static_cast<int>(cfg.analysis.genbound_steps);
  gc.seed = cfg.seed;
  const LossFn loss{cfg.loss};

  Csv csv(dir / "genbound.csv", {"q", "threshold", "energy", "feasible", "worst_loss", "empirical_risk",
                                 "max_member_loss", "members", "G"});
  Csv scatter(dir / "scatter.csv", {"q", "patch", "energy", "loss"});
  json rows = json::array();
  for (double q : cfg.analysis.qs) {
    GenBoundResult g = generalization_bound(patches, q, xi, m.T, m.theta, cfg.train.S, loss, gc);
    csv.row({num(q), num(g.threshold), num(g.energy), g.feasible ? "1" : "0", num(g.worst_loss), num(g.empirical_risk),
             num(g.max_member_loss), std::to_string(g.members), num(g.G)});
    for (std::size_t i = 0; i < g.set_energy.size(); ++i)
      scatter.row({num(q), std::to_string(i), num(g.set_energy[i]), num(g.set_loss[i])});
    save_img(g.y_worst, dir, "worst_q" + num(q));
    rows.push_back({{"q", q}, {"feasible", g.feasible}, {"worst_loss", g.worst_loss},
                    {"max_member_loss", g.max_member_loss}, {"empirical_risk", g.empirical_risk}, {"G", g.G}});
    log << "q " << q << ": worst " << g.worst_loss << ", empirical " << g.empirical_risk << '\n';
  }
  return {{"patches", patches.size()}, {"qs", rows}};
}

// ---------------------------------------------------------------- report

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "." + std::to_string(i), out);
  } else if (j.is_number_float()) {
    out.emplace_back(prefix, num(j.get<double>()));
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

json cmd_report(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  std::vector<fs::path> runs;
  if (fs::is_directory(cfg.out_dir)) {
    for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
      if (e.is_directory() && e.path() != dir && fs::exists(e.path() / "summary.json")) runs.push_back(e.path());
    }
  }
  std::sort(runs.begin(), runs.end());
  Csv csv(dir / "report.csv", {"run", "command", "metric", "value"});
  std::ofstream md(dir / "report.md");
  json index = json::array();
  for (const fs::path& r : runs) {
    std::ifstream is(r / "summary.json");
    json s;
    try {
      s = json::parse(is);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::io, "malformed " + (r / "summary.json").string() + ": " + e.what());
    }
    const std::string cmd = s.value("command", "?");
    if (cmd == "report") continue;
    md << "## " << r.filename().string() << " (" << cmd << ")\n\n| metric | value |\n|---|---|\n";
    std::vector<std::pair<std::string, std::string>> flat;
    flatten(s.value("results", json::object()), "", flat);
    for (const auto& [k, v] : flat) {
      csv.row({r.filename().string(), cmd, k, v});
      md << "| " << k << " | " << v << " |\n";
    }
    md << '\n';
    index.push_back({{"run", r.filename().string()}, {"command", cmd}});
  }
  log << "collected " << index.size() << " runs from " << cfg.out_dir << '\n';
  return {{"runs", index}};
}

}  // namespace

Datasets load_datasets(const ExperimentConfig& cfg) {
  Datasets d;
  const DataConfig& c = cfg.data;
  const std::size_t C = cfg.task.channels;
  if (c.dir.empty()) {
    d.train = synthetic_images(c.synthetic_count, c.synthetic_size, C, c.synthetic_seed);
  } else {
    d.train = load_image_dir(c.dir);
  }
  if (!c.test_dir.empty()) {
    d.test = load_image_dir(c.test_dir);
  } else if (c.dir.empty()) {
    d.test = synthetic_images(std::max<std::size_t>(1, c.synthetic_count / 2), c.synthetic_size, C, c.synthetic_seed + 1);
  } else {
    d.test = d.train;
  }
  for (const auto* set : {&d.train, &d.test}) {
    if (set->empty()) throw Error(ErrorKind::io, "no images found");
    for (const Tensor& t : *set) {
      if (t.dim(0) != C) {
        throw Error(ErrorKind::shape, "image " + to_string(t.shape()) + " does not have the task's " + std::to_string(C) +
                                          " channels");
      }
    }
  }
  return d;
}

std::vector<Tensor> square_crops(const std::vector<Tensor>& images, const ExperimentConfig& cfg) {
  const std::size_t g = cfg.task.kind == TaskKind::sisr ? cfg.task.gamma : 1;
  std::vector<Tensor> out;
  for (const Tensor& t : images) {
    std::size_t side = std::min(t.dim(1), t.dim(2));
    side -= side % g;
    out.push_back(center_crop(t, side));
  }
  return out;
}

Model load_model(const ExperimentConfig& cfg) {
  if (cfg.checkpoint.empty()) throw Error(ErrorKind::config, "run.checkpoint is required for this subcommand");
  if (!fs::exists(cfg.checkpoint)) throw Error(ErrorKind::io, "missing checkpoint " + cfg.checkpoint);
  Checkpoint c = load_checkpoint(cfg.checkpoint);
  if (!(c.theta.arch() == cfg.arch)) {
    throw Error(ErrorKind::config, "checkpoint architecture differs from the configured one");
  }
  return {std::move(c.theta), c.T};
}

double task_psnr(const Tensor& x, const Tensor& y, const ExperimentConfig& cfg) {
  return cfg.task.kind == TaskKind::sisr ? psnr_y(x, y).db : psnr(x, y).db;
}

Reconstruction reconstruct_one(const Tensor& y, std::size_t index, const ExperimentConfig& cfg, const Model& m,
                               double T, std::size_t S) {
  LinearOpPtr op = make_task_operator(cfg, y.dim(1));
  auto rng = stream(cfg.seed, kNoise, 1000000 + index);
  Reconstruction r;
  r.y = y;
  r.z = op->forward(y) + noise_like(op->range(), cfg.train.sigma, rng);
  FlowState f = run_flow(r.z, T, m.theta, op, S, std::max(cfg.train.T_max, T));
  r.x0 = f.states.front();
  r.xS = f.output();
  r.psnr_x0 = task_psnr(r.x0, y, cfg);
  r.psnr_xS = task_psnr(r.xS, y, cfg);
  return r;
}

fs::path make_run_dir(const ExperimentConfig& cfg, const std::string& command,
                      const std::optional<fs::path>& explicit_dir) {
  fs::path dir;
  if (explicit_dir) {
    dir = *explicit_dir;
  } else {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const fs::path base = fs::path(cfg.out_dir) / (command + "-" + stamp);
    dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

fs::path run_command(const std::string& command, const ExperimentConfig& cfg, const std::optional<fs::path>& run_dir,
                     std::ostream& log) {
  using Handler = json (*)(const ExperimentConfig&, const fs::path&, std::ostream&);
  static const std::map<std::string, Handler> handlers{
      {"train", cmd_train},   {"reconstruct", cmd_reconstruct}, {"sweep-T", cmd_sweep},
      {"stability", cmd_stability}, {"eigen", cmd_eigen},       {"attack", cmd_attack},
      {"genbound", cmd_genbound},   {"report", cmd_report}};
  auto it = handlers.find(command);
  if (it == handlers.end()) throw Error(ErrorKind::config, "unknown subcommand '" + command + "'");
  validate(cfg);
  if (command != "report" && command != "eigen") make_task_operator(cfg, cfg.train.patch_size);

  const fs::path dir = make_run_dir(cfg, command, run_dir);
  {
    std::ofstream os(dir / "config.ini");
    os << serialize_config(cfg);
    if (!os) throw Error(ErrorKind::io, "cannot write config snapshot");
  }
  const auto t0 = std::chrono::steady_clock::now();
  json results = it->second(cfg, dir, log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(dir / "summary.json", {{"command", command}, {"seed", cfg.seed}, {"seconds", secs}, {"results", results}});
  return dir;
}

}  // namespace tdv
