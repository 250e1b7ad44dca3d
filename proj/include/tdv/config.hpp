#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tdv/linear_ops.hpp"
#include "tdv/regularizer.hpp"
#include "tdv/training.hpp"

namespace tdv {

enum class TaskKind { denoise_gray, denoise_color, sisr, ct, mri };

std::string to_string(TaskKind k);
TaskKind parse_task(const std::string& s);

struct TaskConfig {
  TaskKind kind = TaskKind::denoise_gray;
  std::size_t channels = 1;
  std::size_t gamma = 2;  // sisr
  Boundary boundary = Boundary::replicate;
  std::size_t angles = 8;  // ct
  std::size_t detectors = 0;  // ct, 0 = ceil(sqrt(2) n)
  std::size_t mask_R = 4;  // mri acceleration
  std::size_t mask_center = 4;
  double lambda = 1.0;  // data weight of the variational CT/MRI reconstruction
};

struct AnalysisConfig {
  std::vector<double> deltas{0.5, 0.05};
  double eps = 0.05;  // relative parameter ball
  std::size_t n_samples = 200;
  std::vector<double> qs{0.1, 0.5, 1.0};
  std::size_t genbound_patches = 64;
  std::size_t genbound_steps = 50;
  double barrier_weight = 1e3;
  std::size_t attack_steps = 300;
  std::size_t attack_patches = 8;
  std::vector<double> attack_radii{1.0, 2.0};  // l2 radius in units of sigma
  std::size_t eigen_steps = 1000;
  std::size_t eigen_inits = 4;
  std::size_t eigen_size = 32;
  std::vector<double> sweep_factors{0.5, 1.0, 1.5, 2.0};
  std::size_t heldout = 32;
};

struct DataConfig {
  std::string dir;       // empty: bundled synthetic images
  std::string test_dir;  // held-out images; empty: a second synthetic set (or dir)
  std::size_t synthetic_count = 16;
  std::size_t synthetic_size = 64;
  std::uint64_t synthetic_seed = 2020;
  bool flips = true;
  bool rotations = true;
};

struct ExperimentConfig {
  TaskConfig task;
  TdvArch arch;
  TrainConfig train;
  LossKind loss = LossKind::squared_l2;
  AnalysisConfig analysis;
  DataConfig data;
  std::uint64_t seed = 1;
  std::string out_dir = "runs";
  std::string checkpoint;  // for the analysis subcommands

  bool operator==(const ExperimentConfig&) const;
};

/// Desk-scale defaults for a task (tiny TDV, small patches, 2000 iterations).
ExperimentConfig desk_preset(TaskKind kind);

/// key = value lines grouped by [section]; '#' starts a comment. Keys not set
/// keep their defaults; unknown keys and malformed values are config errors.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);
/// Applies one "section.key=value" override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
void validate(const ExperimentConfig& cfg);

/// Operator of the task on patch-sized inputs.
LinearOpPtr make_task_operator(const ExperimentConfig& cfg, std::size_t size);

}  // namespace tdv
