#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "tdv/linear_ops.hpp"
#include "tdv/regularizer.hpp"

namespace tdv {

inline constexpr double kDefaultTmax = 1.0;

struct FlowState {
  std::vector<Tensor> states;  // x_0 .. x_S
  double T = 0.0;
  std::size_t S = 0;
  Tensor z;
  LinearOpPtr op;

  const Tensor& output() const { return states.back(); }
};

/// (Id + tau A^T A)^{-1} (x + tau (A^T z - D_1 R(x))), tau = T / S.
Tensor semi_implicit_step(const Tensor& x, const Tensor& z, double T, const TdvParams& theta, const LinearOp& op,
                          std::size_t S);
/// Same step with the regularizer gradient at x already known.
Tensor semi_implicit_step(const Tensor& x, const Tensor& Atz, const Tensor& grad, double T, const LinearOp& op,
                          std::size_t S);

FlowState run_flow(const Tensor& z, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S,
                   double T_max = kDefaultTmax);

/// Flow that keeps the regularizer recording at every x_s (s < S), already
/// differentiated, so reverse sweeps can reuse it.
struct RecordedFlow {
  FlowState flow;
  std::vector<EnergyGraph> graphs;
};

RecordedFlow run_flow_recorded(const Tensor& z, double T, const TdvParams& theta, LinearOpPtr op, std::size_t S,
                               double T_max = kDefaultTmax);

/// One TDVT frame per state.
void save_trajectory(const std::filesystem::path& path, const FlowState& flow);

struct Box {
  double lo = 0.0, hi = 1.0;
};

struct NagConfig {
  int max_steps = 1000;
  double lipschitz = 1.0;  // initial estimate
  double backtrack = 2.0;
  std::optional<Box> box;
  double step_tol = 0.0;  // stop when ||x_{k+1} - x_k|| <= step_tol * max(1, ||x_k||)
};

/// Value, and gradient when grad != nullptr.
using Objective = std::function<double(const Tensor& x, Tensor* grad)>;

struct NagResult {
  Tensor x;
  std::vector<double> history;  // objective at every accepted iterate, starting with x0 (projected)
  int steps = 0;
  double lipschitz = 0.0;
};

/// Projected accelerated gradient with Lipschitz backtracking. Momentum is
/// restarted whenever a step would increase the objective, so accepted values
/// never increase.
NagResult nag_minimize(const Objective& f, const Tensor& x0, const NagConfig& cfg);

/// argmin_x (lambda/2) ||A x - z||^2 + R(x, theta), started from A_init z.
NagResult variational_reconstruct(const Tensor& z, const LinearOp& op, const TdvParams& theta, double lambda,
                                  const NagConfig& cfg);

}  // namespace tdv
