#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "tdv/flow.hpp"

namespace tdv {

enum class LossKind { squared_l2, charbonnier };

struct LossFn {
  LossKind kind = LossKind::squared_l2;
  double eps = 0.01;

  double value(const Tensor& r) const;
  Tensor grad(const Tensor& r) const;
};

std::string to_string(LossKind k);
LossKind parse_loss(const std::string& s);

/// One training pair: ground truth y and observation noise xi, z = A y + xi.
struct Sample {
  Tensor y;
  Tensor xi;
};

Tensor observe(const LinearOp& op, const Sample& s);

double sampled_cost(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S,
                    const LossFn& loss);

struct AdjointState {
  std::vector<Tensor> p;  // p_0 .. p_S
};

/// p_S = -Dl(x_S - y), p_s = (Id - tau D_1^2 R(x_s)) (Id + tau A^T A)^{-1} p_{s+1}.
AdjointState adjoint_sweep(const FlowState& flow, const TdvParams& theta, const Tensor& y, const LossFn& loss);

/// Reverse-mode sweep through one unrolled trajectory.
struct SampleGradients {
  double loss = 0.0;
  double dT = 0.0;
  TdvParams dtheta;  // empty unless requested
  Tensor dx0;        // d loss / d x_0
  Tensor dz;         // d loss / d z, empty unless requested (needs a linear init map)
  double stop = 0.0;  // sum_s <p_{s+1}, (Id + tau A^T A)^{-1} (x_{s+1} - x_s)>
};

struct BackpropOptions {
  bool theta = true;
  bool z = false;
};

SampleGradients backprop_unroll(const FlowState& flow, const TdvParams& theta, const Tensor& y, const LossFn& loss,
                                BackpropOptions opts = {});
/// Same sweep reusing the recordings of a run_flow_recorded call.
SampleGradients backprop_unroll(RecordedFlow& rec, const TdvParams& theta, const Tensor& y, const LossFn& loss,
                                BackpropOptions opts = {});

struct ControlGradients {
  double cost = 0.0;
  double dT = 0.0;
  TdvParams dtheta;
  double stop = 0.0;                // batch mean of the stopping-time condition
  std::vector<double> stop_terms;  // per-sample summands
};

ControlGradients control_gradients(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op,
                                   std::size_t S, const LossFn& loss, bool with_theta = true);

/// Batch estimate of E[sum_s <p_{s+1}, B^{-1}(x_{s+1} - x_s)>]; equals -T dJ/dT.
double stopping_time_condition(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op,
                               std::size_t S, const LossFn& loss);

struct AdamConfig {
  double lr = 4e-4;
  std::size_t halving_period = 25000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t step = 0;
};

/// Learning rate in effect for the given 1-based step.
double adam_lr(const AdamConfig& cfg, std::size_t step);
/// One bias-corrected ADAM step on a list of tensors.
void adam_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
                 const AdamConfig& cfg);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t iterations = 2000;
  AdamConfig adam;
  std::size_t patch_size = 33;
  std::size_t S = 10;
  double sigma = 25.0 / 255.0;
  std::uint64_t seed = 1;
  double T_init = 0.01;
  double T_max = kDefaultTmax;
  std::optional<double> theta_box;  // global infinity-norm box on all kernels
  std::size_t polish_batch = 0;     // > 0: final root-finding of dJ/dT on a fixed sample of this size
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
};

struct LogRow {
  std::size_t iter = 0;
  double cost = 0.0;
  double stop = 0.0;
  double lr = 0.0;
  double T = 0.0;
};

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& log);

/// Draws one ground-truth patch of the configured size.
using PatchSource = std::function<Tensor(std::mt19937_64&)>;

/// Fresh batch: patches from the source, Gaussian noise of std sigma in the range of op.
std::vector<Sample> draw_batch(const PatchSource& source, const LinearOp& op, std::size_t n, double sigma,
                               std::mt19937_64& rng);

struct TrainResult {
  TdvParams theta;
  double T = 0.0;
  double T_sgd = 0.0;  // before the polish stage
  std::vector<LogRow> log;
};

/// Joint ADAM on (T, theta). K is re-projected to zero mean and T clamped to
/// [0, T_max] after every update.
TrainResult train(const PatchSource& source, LinearOpPtr op, const TdvParams& theta0, const TrainConfig& cfg,
                  const LossFn& loss);

/// Projection applied to the controls after every optimizer step.
void project_controls(TdvParams& theta, double& T, const TrainConfig& cfg);

/// Root of dJ/dT in [lo, hi] on a fixed batch by safeguarded secant steps;
/// returns the boundary with the smaller cost when dJ/dT has no sign change.
double refine_stopping_time(const std::vector<Sample>& batch, double T, const TdvParams& theta, LinearOpPtr op,
                            std::size_t S, const LossFn& loss, double lo, double hi, int max_iter = 30);

}  // namespace tdv
