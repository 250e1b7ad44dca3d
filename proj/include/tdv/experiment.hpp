#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tdv/config.hpp"
#include "tdv/data.hpp"

namespace tdv {

inline const std::vector<std::string> kCommands{"train",  "reconstruct", "sweep-T", "stability",
                                                "eigen",  "attack",      "genbound", "report"};

/// Exit code of the CLI for an error category.
int exit_code(ErrorKind k);

/// Training images and held-out images of a config.
struct Datasets {
  std::vector<Tensor> train, test;
};
Datasets load_datasets(const ExperimentConfig& cfg);

/// Crops every image to the largest centred square the task operator accepts.
std::vector<Tensor> square_crops(const std::vector<Tensor>& images, const ExperimentConfig& cfg);

struct Model {
  TdvParams theta;
  double T = 0.0;
};
/// cfg.checkpoint, checked against the configured architecture.
Model load_model(const ExperimentConfig& cfg);

/// Observation, initialization and flow output of one held-out image.
struct Reconstruction {
  Tensor y, z, x0, xS;
  double psnr_x0 = 0.0, psnr_xS = 0.0;
};
/// Noise is drawn from a generator seeded by (seed, index), so results do not
/// depend on which other images are processed.
Reconstruction reconstruct_one(const Tensor& y, std::size_t index, const ExperimentConfig& cfg, const Model& m,
                               double T, std::size_t S);
/// PSNR used for the task (luminance for colour super-resolution).
double task_psnr(const Tensor& x, const Tensor& y, const ExperimentConfig& cfg);

/// Creates <out_dir>/<command>-<timestamp>[-k] or the explicit directory.
std::filesystem::path make_run_dir(const ExperimentConfig& cfg, const std::string& command,
                                   const std::optional<std::filesystem::path>& explicit_dir);

/// Validates, creates the run directory, writes the config snapshot, runs the
/// subcommand and its summary.json. Returns the run directory.
std::filesystem::path run_command(const std::string& command, const ExperimentConfig& cfg,
                                  const std::optional<std::filesystem::path>& run_dir, std::ostream& log);

}  // namespace tdv
