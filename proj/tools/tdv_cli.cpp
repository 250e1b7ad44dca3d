#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "tdv/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Total deep variation experiments"};
  app.require_subcommand(1);
  std::string config_path, preset, run_dir, checkpoint;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "config file (section/key = value)");
  app.add_option("-p,--preset", preset, "desk preset: denoise_gray, denoise_color, sisr, ct, mri");
  app.add_option("-s,--set", overrides, "override, e.g. train.iterations=100")->take_all();
  app.add_option("--run-dir", run_dir, "write outputs here instead of a timestamped directory");
  app.add_option("--checkpoint", checkpoint, "model for the analysis subcommands");
  app.add_flag_callback("--print-config", [] {}, "print the effective config and exit");
  for (const std::string& c : tdv::kCommands) app.add_subcommand(c)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    tdv::ExperimentConfig cfg;
    if (!preset.empty()) cfg = tdv::desk_preset(tdv::parse_task(preset));
    if (!config_path.empty()) {
      std::ifstream is(config_path);
      if (!is) throw tdv::Error(tdv::ErrorKind::io, "cannot open config " + config_path);
      std::stringstream ss;
      ss << is.rdbuf();
      cfg = tdv::parse_config(ss.str(), cfg);
    }
    for (const std::string& o : overrides) tdv::apply_override(cfg, o);
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (app.count("--print-config")) {
      std::cout << tdv::serialize_config(cfg);
      return 0;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    std::optional<std::filesystem::path> dir;
    if (!run_dir.empty()) dir = run_dir;
    const auto out = tdv::run_command(command, cfg, dir, std::cerr);
    std::cout << out.string() << '\n';
    return 0;
  } catch (const tdv::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tdv::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
