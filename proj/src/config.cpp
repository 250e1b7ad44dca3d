#include "tdv/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tdv {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::denoise_gray: return "denoise_gray";
    case TaskKind::denoise_color: return "denoise_color";
    case TaskKind::sisr: return "sisr";
    case TaskKind::ct: return "ct";
    case TaskKind::mri: return "mri";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  for (TaskKind k : {TaskKind::denoise_gray, TaskKind::denoise_color, TaskKind::sisr, TaskKind::ct, TaskKind::mri}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorKind::config, "unknown task '" + s + "'");
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* want) {
  throw Error(ErrorKind::config, "config key '" + key + "': cannot parse '" + v + "' as " + want);
}

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a real number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b == std::string::npos) bad_value(key, v, "a comma-separated list of reals");
    out.push_back(to_double(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) bad_value(key, v, "a comma-separated list of reals");
  return out;
}

std::string from_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

struct Field {
  std::string key;  // section.name
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
Field size_field(std::string key, T ExperimentConfig::*part, std::size_t T::*member) {
  return {key, [=](const ExperimentConfig& c) { return std::to_string(c.*part.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*part.*member = to_uint(key, v); }};
}

template <class T>
Field real_field(std::string key, T ExperimentConfig::*part, double T::*member) {
  return {key, [=](const ExperimentConfig& c) { return fmt(c.*part.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*part.*member = to_double(key, v); }};
}

template <class T>
Field list_field(std::string key, T ExperimentConfig::*part, std::vector<double> T::*member) {
  return {key, [=](const ExperimentConfig& c) { return from_list(c.*part.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*part.*member = to_list(key, v); }};
}

template <class T>
Field bool_field(std::string key, T ExperimentConfig::*part, bool T::*member) {
  return {key, [=](const ExperimentConfig& c) { return std::string(c.*part.*member ? "true" : "false"); },
          [=](ExperimentConfig& c, const std::string& v) { c.*part.*member = to_bool(key, v); }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({"task.kind", [](const C& c) { return to_string(c.task.kind); },
                 [](C& c, const std::string& s) { c.task.kind = parse_task(s); }});
    v.push_back({"task.channels", [](const C& c) { return std::to_string(c.task.channels); },
                 [](C& c, const std::string& s) { c.task.channels = c.arch.C = to_uint("task.channels", s); }});
    v.push_back(size_field("task.gamma", &C::task, &TaskConfig::gamma));
    v.push_back({"task.boundary", [](const C& c) { return std::string(c.task.boundary == Boundary::replicate ? "replicate" : "periodic"); },
                 [](C& c, const std::string& s) {
                   if (s == "replicate") c.task.boundary = Boundary::replicate;
                   else if (s == "periodic") c.task.boundary = Boundary::periodic;
                   else bad_value("task.boundary", s, "replicate or periodic");
                 }});
    v.push_back(size_field("task.angles", &C::task, &TaskConfig::angles));
    v.push_back(size_field("task.detectors", &C::task, &TaskConfig::detectors));
    v.push_back(size_field("task.mask_R", &C::task, &TaskConfig::mask_R));
    v.push_back(size_field("task.mask_center", &C::task, &TaskConfig::mask_center));
    v.push_back(real_field("task.lambda", &C::task, &TaskConfig::lambda));

    v.push_back(size_field("arch.a", &C::arch, &TdvArch::a));
    v.push_back(size_field("arch.b", &C::arch, &TdvArch::b));
    v.push_back(size_field("arch.m", &C::arch, &TdvArch::m));
    v.push_back({"arch.potential", [](const C& c) { return to_string(c.arch.potential); },
                 [](C& c, const std::string& s) { c.arch.potential = parse_potential(s); }});
    v.push_back({"arch.padding", [](const C& c) { return std::string(c.arch.padding == Padding::zero ? "zero" : "replicate"); },
                 [](C& c, const std::string& s) {
                   if (s == "zero") c.arch.padding = Padding::zero;
                   else if (s == "replicate") c.arch.padding = Padding::replicate;
                   else bad_value("arch.padding", s, "zero or replicate");
                 }});

    v.push_back(size_field("train.batch_size", &C::train, &TrainConfig::batch_size));
    v.push_back(size_field("train.iterations", &C::train, &TrainConfig::iterations));
    v.push_back({"train.lr", [](const C& c) { return fmt(c.train.adam.lr); },
                 [](C& c, const std::string& s) { c.train.adam.lr = to_double("train.lr", s); }});
    v.push_back({"train.lr_halving_period", [](const C& c) { return std::to_string(c.train.adam.halving_period); },
                 [](C& c, const std::string& s) { c.train.adam.halving_period = to_uint("train.lr_halving_period", s); }});
    v.push_back({"train.beta1", [](const C& c) { return fmt(c.train.adam.beta1); },
                 [](C& c, const std::string& s) { c.train.adam.beta1 = to_double("train.beta1", s); }});
    v.push_back({"train.beta2", [](const C& c) { return fmt(c.train.adam.beta2); },
                 [](C& c, const std::string& s) { c.train.adam.beta2 = to_double("train.beta2", s); }});
    v.push_back({"train.adam_eps", [](const C& c) { return fmt(c.train.adam.eps); },
                 [](C& c, const std::string& s) { c.train.adam.eps = to_double("train.adam_eps", s); }});
    v.push_back(size_field("train.patch_size", &C::train, &TrainConfig::patch_size));
    v.push_back(size_field("train.S", &C::train, &TrainConfig::S));
    v.push_back(real_field("train.sigma", &C::train, &TrainConfig::sigma));
    v.push_back(real_field("train.T_init", &C::train, &TrainConfig::T_init));
    v.push_back(real_field("train.T_max", &C::train, &TrainConfig::T_max));
    v.push_back({"train.theta_box", [](const C& c) { return c.train.theta_box ? fmt(*c.train.theta_box) : std::string("none"); },
                 [](C& c, const std::string& s) {
                   if (s == "none") c.train.theta_box.reset();
                   else c.train.theta_box = to_double("train.theta_box", s);
                 }});
    v.push_back(size_field("train.polish_batch", &C::train, &TrainConfig::polish_batch));
    v.push_back({"train.loss", [](const C& c) { return to_string(c.loss); },
                 [](C& c, const std::string& s) { c.loss = parse_loss(s); }});
    v.push_back(size_field("train.checkpoint_every", &C::train, &TrainConfig::checkpoint_every));

    v.push_back(list_field("analysis.deltas", &C::analysis, &AnalysisConfig::deltas));
    v.push_back(real_field("analysis.eps", &C::analysis, &AnalysisConfig::eps));
    v.push_back(size_field("analysis.n_samples", &C::analysis, &AnalysisConfig::n_samples));
    v.push_back(list_field("analysis.qs", &C::analysis, &AnalysisConfig::qs));
    v.push_back(size_field("analysis.genbound_patches", &C::analysis, &AnalysisConfig::genbound_patches));
    v.push_back(size_field("analysis.genbound_steps", &C::analysis, &AnalysisConfig::genbound_steps));
    v.push_back(real_field("analysis.barrier_weight", &C::analysis, &AnalysisConfig::barrier_weight));
    v.push_back(size_field("analysis.attack_steps", &C::analysis, &AnalysisConfig::attack_steps));
    v.push_back(size_field("analysis.attack_patches", &C::analysis, &AnalysisConfig::attack_patches));
    v.push_back(list_field("analysis.attack_radii", &C::analysis, &AnalysisConfig::attack_radii));
    v.push_back(size_field("analysis.eigen_steps", &C::analysis, &AnalysisConfig::eigen_steps));
    v.push_back(size_field("analysis.eigen_inits", &C::analysis, &AnalysisConfig::eigen_inits));
    v.push_back(size_field("analysis.eigen_size", &C::analysis, &AnalysisConfig::eigen_size));
    v.push_back(list_field("analysis.sweep_factors", &C::analysis, &AnalysisConfig::sweep_factors));
    v.push_back(size_field("analysis.heldout", &C::analysis, &AnalysisConfig::heldout));

    v.push_back({"data.dir", [](const C& c) { return c.data.dir; }, [](C& c, const std::string& s) { c.data.dir = s; }});
    v.push_back({"data.test_dir", [](const C& c) { return c.data.test_dir; },
                 [](C& c, const std::string& s) { c.data.test_dir = s; }});
    v.push_back(size_field("data.synthetic_count", &C::data, &DataConfig::synthetic_count));
    v.push_back(size_field("data.synthetic_size", &C::data, &DataConfig::synthetic_size));
    v.push_back({"data.synthetic_seed", [](const C& c) { return std::to_string(c.data.synthetic_seed); },
                 [](C& c, const std::string& s) { c.data.synthetic_seed = to_uint("data.synthetic_seed", s); }});
    v.push_back(bool_field("data.flips", &C::data, &DataConfig::flips));
    v.push_back(bool_field("data.rotations", &C::data, &DataConfig::rotations));

    v.push_back({"run.seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& s) { c.seed = to_uint("run.seed", s); }});
    v.push_back({"run.out_dir", [](const C& c) { return c.out_dir; }, [](C& c, const std::string& s) { c.out_dir = s; }});
    v.push_back({"run.checkpoint", [](const C& c) { return c.checkpoint; },
                 [](C& c, const std::string& s) { c.checkpoint = s; }});
    return v;
  }();
  return f;
}

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw Error(ErrorKind::config, "unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  for (const Field& f : fields()) {
    if (f.get(*this) != f.get(o)) return false;
  }
  return true;
}

ExperimentConfig desk_preset(TaskKind kind) {
  ExperimentConfig c;
  c.task.kind = kind;
  c.task.channels = c.arch.C = kind == TaskKind::denoise_color ? 3 : 1;
  c.arch.a = 2;
  c.arch.b = 1;
  c.arch.m = 8;
  c.train.batch_size = 8;
  c.train.iterations = 2000;
  c.train.adam.lr = 2e-3;
  c.train.adam.halving_period = 800;
  c.train.patch_size = 16;
  c.train.S = 10;
  c.train.sigma = 25.0 / 255.0;
  c.train.T_init = 0.01;
  c.train.polish_batch = 1024;
  if (kind == TaskKind::sisr) {
    c.loss = LossKind::charbonnier;
    c.train.sigma = 0.0;
  }
  if (kind == TaskKind::ct || kind == TaskKind::mri) c.train.sigma = 0.01;
  return c;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::config, "line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
    find_field(key).set(base, trim(line.substr(eq + 1)));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorKind::config, "override '" + assignment + "' is not section.key=value");
  find_field(trim(assignment.substr(0, eq))).set(cfg, trim(assignment.substr(eq + 1)));
}

void validate(const ExperimentConfig& c) {
  validate(c.arch);
  if (c.arch.C != c.task.channels) {
    throw Error(ErrorKind::config, "arch channels (" + std::to_string(c.arch.C) + ") differ from task channels (" +
                                       std::to_string(c.task.channels) + ")");
  }
  if (c.task.kind == TaskKind::denoise_gray && c.task.channels != 1) throw Error(ErrorKind::config, "denoise_gray needs channels = 1");
  if (c.task.kind == TaskKind::denoise_color && c.task.channels != 3) throw Error(ErrorKind::config, "denoise_color needs channels = 3");
  if (c.task.kind == TaskKind::ct && c.task.channels != 1) throw Error(ErrorKind::config, "ct needs channels = 1");
  const TrainConfig& t = c.train;
  if (t.batch_size == 0 || t.S == 0 || t.patch_size == 0) throw Error(ErrorKind::config, "train: batch_size, S and patch_size must be positive");
  if (!(t.adam.lr > 0) || !(t.adam.beta1 > 0 && t.adam.beta1 < 1) || !(t.adam.beta2 > 0 && t.adam.beta2 < 1) || !(t.adam.eps > 0)) {
    throw Error(ErrorKind::config, "train: lr and adam_eps must be positive, beta1 and beta2 in (0, 1)");
  }
  if (!(t.sigma >= 0)) throw Error(ErrorKind::config, "train.sigma must be non-negative");
  if (!(t.T_max > 0) || !(t.T_init >= 0 && t.T_init <= t.T_max)) throw Error(ErrorKind::config, "train: need 0 <= T_init <= T_max");
  if (t.theta_box && !(*t.theta_box > 0)) throw Error(ErrorKind::config, "train.theta_box must be positive");
  for (double d : c.analysis.deltas) {
    if (!(d > 0 && d < 1)) throw Error(ErrorKind::config, "analysis.deltas must lie in (0, 1)");
  }
  for (double q : c.analysis.qs) {
    if (!(q > 0 && q <= 1)) throw Error(ErrorKind::config, "analysis.qs must lie in (0, 1]");
  }
  if (!(c.analysis.eps >= 0)) throw Error(ErrorKind::config, "analysis.eps must be non-negative");
  if (c.analysis.n_samples == 0) throw Error(ErrorKind::config, "analysis.n_samples must be positive");
  if (!(c.task.lambda > 0)) throw Error(ErrorKind::config, "task.lambda must be positive");
}

LinearOpPtr make_task_operator(const ExperimentConfig& cfg, std::size_t size) {
  const std::size_t C = cfg.task.channels;
  switch (cfg.task.kind) {
    case TaskKind::denoise_gray:
    case TaskKind::denoise_color: return make_identity(C, size, size);
    case TaskKind::sisr: return make_downsample(cfg.task.gamma, C, size, size, cfg.task.boundary);
    case TaskKind::ct: {
      const std::size_t det = cfg.task.detectors ? cfg.task.detectors
                                                 : static_cast<std::size_t>(std::ceil(std::sqrt(2.0) * size));
      return make_radon(cfg.task.angles, det, size, size);
    }
    case TaskKind::mri: return make_masked_fourier(cartesian_mask(size, size, cfg.task.mask_R, cfg.task.mask_center), C);
  }
  throw Error(ErrorKind::config, "unknown task");
}

}  // namespace tdv
