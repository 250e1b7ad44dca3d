#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "tdv/training.hpp"

namespace tdv {

/// Empirical distribution of a finite sample.
class EmpiricalCdf {
 public:
  EmpiricalCdf() = default;
  explicit EmpiricalCdf(std::vector<double> samples);

  /// Fraction of samples <= v.
  double cdf(double v) const;
  /// Smallest sample value whose empirical mass reaches q, q in [0, 1].
  double quantile(double q) const;
  const std::vector<double>& sorted() const { return s_; }
  std::size_t size() const { return s_.size(); }

 private:
  std::vector<double> s_;
};

/// ||x - tau D_1R(x) - xt + tau D_1R(xt)|| / ||x - xt||, 0 when x == xt.
double local_lipschitz_x(const Tensor& x, const Tensor& xt, double T, const TdvParams& theta, std::size_t S);
/// ||D_1R(x, theta) - D_1R(x, theta_t)|| / ||theta - theta_t||, 0 when equal.
double local_lipschitz_theta(const Tensor& x, const TdvParams& theta, const TdvParams& theta_t);

/// sum_{i < k} alpha^i in closed form (k when alpha == 1).
double geometric_sum(double alpha, std::size_t k);

struct BoundCurve {
  std::vector<double> values;  // bound on ||x_k - xt_k||_2 / nC for k = 0..S
  double alpha = 0.0, beta = 0.0, delta = 0.0;
};

/// alpha_1 = ||B^-1|| F_S^-1(1 - delta), beta_1 = ||B^-1|| (T/S) ||A||.
BoundCurve stability_bound_input(double delta, const EmpiricalCdf& cdf, double T, std::size_t S, const LinearOp& op,
                                 double init_norm, double z_gap);
/// alpha_2 = ||B^-1|| F_{S,x}^-1(1 - delta/2), beta_2 = ||B^-1|| (T/S) F_{S,theta}^-1(1 - delta/2).
BoundCurve stability_bound_params(double delta, const EmpiricalCdf& cdf_x, const EmpiricalCdf& cdf_theta, double T,
                                  std::size_t S, const LinearOp& op, double theta_gap);

/// Ground truth, noise, and a second noise draw for the paired trajectory.
struct InputPair {
  Tensor y, xi, xi_t;
};
using InputPairSampler = std::function<InputPair(std::mt19937_64&)>;
/// Ground truth and noise for the parameter experiment.
using SampleSampler = std::function<Sample(std::mt19937_64&)>;

/// Paired trajectories and their per-step distance ||x_k - xt_k|| / nC.
struct PairRun {
  double lipschitz_x = 0.0;      // max over steps of L_x
  double lipschitz_theta = 0.0;  // max over steps of L_theta (parameter pairs only)
  std::vector<double> gap;       // k = 0..S
  double input_gap = 0.0;        // ||z - zt|| or ||theta - theta_t||
};

PairRun input_pair_run(const InputPair& p, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S);
PairRun param_pair_run(const Sample& s, double T, const TdvParams& theta, const TdvParams& theta_t, LinearOpPtr op,
                       std::size_t S);

/// Uniform draw from the component-wise relative eps-ball around theta
/// (each kernel perturbed within eps times its infinity norm), then projected.
TdvParams sample_eps_ball(const TdvParams& theta, double eps, std::mt19937_64& rng,
                          std::optional<double> box = std::nullopt);

struct InputCdfs {
  EmpiricalCdf lx;
  std::vector<PairRun> runs;
};
struct ParamCdfs {
  EmpiricalCdf lx, ltheta;
  std::vector<PairRun> runs;
};

InputCdfs estimate_input_cdf(const InputPairSampler& sampler, double T, const TdvParams& theta, LinearOpPtr op,
                             std::size_t S, std::size_t n_samples, std::uint64_t seed);
ParamCdfs estimate_param_cdfs(const SampleSampler& sampler, double T, const TdvParams& theta, LinearOpPtr op,
                              std::size_t S, double eps, std::size_t n_samples, std::uint64_t seed,
                              std::optional<double> box = std::nullopt);

/// True when some step exceeds the curve.
bool violates(const PairRun& run, const BoundCurve& curve);
/// delta + 3 sqrt(delta (1 - delta) / n)
double violation_tolerance(double delta, std::size_t n);

struct EigenResult {
  Tensor x;
  double lambda = 0.0;
  double residual = 0.0;           // 1/2 ||D_1R - Lambda x||^2
  double relative_residual = 0.0;  // ||D_1R - Lambda x|| / ||D_1R||
  std::vector<double> history;     // objective on accepted iterates
};

/// Objective 1/2 ||D_1R(x) - Lambda(x) x||^2 and its exact gradient.
double eigen_objective(const Tensor& x, const TdvParams& theta, Tensor* grad);
EigenResult eigen_extract(const Tensor& x_init, const TdvParams& theta, NagConfig cfg);

struct AttackConfig {
  int steps = 300;
  double step = 0.5;  // initial step, as a fraction of eps along the normalized gradient
};

struct AttackResult {
  Tensor xi_t;  // perturbation, ||xi_t|| <= eps
  Tensor output;
  double loss = 0.0;        // ||x_S - y||^2 at the returned perturbation
  double clean_loss = 0.0;  // at xi_t = 0
  std::vector<double> history;
};

/// Projected gradient ascent of ||x_S(y, xi + xi_t) - y||^2 over ||xi_t|| <= eps.
/// A warm start (projected onto the ball) joins the origin as a candidate.
AttackResult adversarial_attack(const Tensor& y, const Tensor& xi, double eps, double T, const TdvParams& theta,
                                LinearOpPtr op, std::size_t S, const AttackConfig& cfg = {},
                                const Tensor* warm_start = nullptr);

/// Scales v onto the ball of radius eps, guaranteeing ||v||_2 <= eps in floating point.
void project_ball(Tensor& v, double eps);

struct GenBoundConfig {
  double barrier_weight = 1e3;
  int rounds = 4;
  double growth = 10.0;
  double feas_tol = 1e-3;  // relative to |F_R^-1(q)|
  NagConfig nag;
  std::uint64_t seed = 1;
};

struct GenBoundResult {
  Tensor y_worst;
  double worst_loss = 0.0;
  double threshold = 0.0;  // F_R^-1(q)
  double energy = 0.0;     // R(y_worst)
  bool feasible = false;
  double empirical_risk = 0.0;  // over the q-sublevel set
  double max_member_loss = 0.0;
  std::size_t members = 0;
  double G = 0.0;
  std::vector<double> set_energy, set_loss;  // every patch, for the scatter report
};

/// Worst-case loss over {y in [0,1]^n : R(y) <= F_R^-1(q)} by a quadratic
/// barrier, against the empirical risk of the patches in that sublevel set.
GenBoundResult generalization_bound(const std::vector<Tensor>& patches, double q, const Tensor& xi, double T,
                                    const TdvParams& theta, std::size_t S, const LossFn& loss,
                                    const GenBoundConfig& cfg);

struct LinearFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace tdv
