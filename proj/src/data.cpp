#include "tdv/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>

namespace tdv {

namespace {

// Next header token, skipping whitespace and comments.
std::string token(std::istream& is, const std::string& where) {
  std::string t;
  for (;;) {
    int c = is.get();
    if (c == EOF) throw Error(ErrorKind::io, where + ": truncated header");
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(c)) {
      if (!t.empty()) return t;
      continue;
    }
    t.push_back(static_cast<char>(c));
  }
}

std::size_t number(std::istream& is, const std::string& where) {
  const std::string t = token(is, where);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw Error(ErrorKind::io, where + ": malformed header field '" + t + "'");
  }
  return std::stoul(t);
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open " + where);
  const std::string magic = token(is, where);
  std::size_t C = 0;
  if (magic == "P5") {
    C = 1;
  } else if (magic == "P6") {
    C = 3;
  } else {
    throw Error(ErrorKind::io, where + ": unsupported magic '" + magic + "' (need P5 or P6)");
  }
  const std::size_t W = number(is, where), H = number(is, where), maxval = number(is, where);
  if (W == 0 || H == 0) throw Error(ErrorKind::io, where + ": empty image");
  if (maxval != 255) throw Error(ErrorKind::io, where + ": only 8-bit images are supported");
  std::vector<unsigned char> buf(C * H * W);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw Error(ErrorKind::io, where + ": truncated payload");
  Tensor t(Shape{C, H, W});
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < C; ++c) t[c * H * W + i] = buf[i * C + c] / 255.0;
  return t;
}

void save_image(const Tensor& t, const std::filesystem::path& path) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw Error(ErrorKind::shape, "save_image needs (1|3, H, W), got " + to_string(t.shape()));
  }
  const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot write " + path.string());
  os << (C == 1 ? "P5" : "P6") << '\n' << W << ' ' << H << "\n255\n";
  std::vector<unsigned char> buf(C * H * W);
  for (std::size_t i = 0; i < H * W; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      const double v = std::clamp(t[c * H * W + i], 0.0, 1.0);
      buf[i * C + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error(ErrorKind::io, "write failed: " + path.string());
}

Psnr psnr(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
  mse /= static_cast<double>(x.size());
  const double db = 10.0 * std::log10(1.0 / mse);
  if (mse == 0.0 || db > kPsnrCap) return {kPsnrCap, true};
  return {db, false};
}

Tensor luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw Error(ErrorKind::shape, "luminance needs (3, H, W), got " + to_string(rgb.shape()));
  const std::size_t n = rgb.dim(1) * rgb.dim(2);
  Tensor y(Shape{1, rgb.dim(1), rgb.dim(2)});
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.299 * rgb[i] + 0.587 * rgb[n + i] + 0.114 * rgb[2 * n + i];
  return y;
}

Psnr psnr_y(const Tensor& x, const Tensor& y) {
  if (x.rank() == 3 && x.dim(0) == 3) return psnr(luminance(x), luminance(y));
  return psnr(x, y);
}

std::vector<Tensor> synthetic_images(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double n = static_cast<double>(size);
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < count; ++k) {
    Tensor t(Shape{channels, size, size});
    std::vector<double> base(channels);
    for (double& b : base) b = u(rng);
    // smooth background ramp
    const double gx = u(rng) - 0.5, gy = u(rng) - 0.5;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j)
          t[(c * size + i) * size + j] = base[c] + 0.4 * (gx * (j / n - 0.5) + gy * (i / n - 0.5));

    // flat shapes, some of them striped
    const int shapes = 4 + static_cast<int>(u(rng) * 6);
    for (int s = 0; s < shapes; ++s) {
      const int kind = static_cast<int>(u(rng) * 3);
      const double cx = u(rng) * n, cy = u(rng) * n, r = (0.08 + 0.25 * u(rng)) * n;
      const double ang = u(rng) * std::numbers::pi;
      const bool striped = u(rng) < 0.3;
      const double freq = 2.0 * std::numbers::pi / (3.0 + 6.0 * u(rng));
      std::vector<double> col(channels);
      for (double& v : col) v = u(rng);
      for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
          const double dx = j - cx, dy = i - cy;
          const double rx = std::cos(ang) * dx + std::sin(ang) * dy, ry = -std::sin(ang) * dx + std::cos(ang) * dy;
          bool in = false;
          if (kind == 0) in = dx * dx + dy * dy <= r * r;
          if (kind == 1) in = std::abs(rx) <= r && std::abs(ry) <= 0.6 * r;
          if (kind == 2) in = ry >= -0.5 * r && std::abs(rx) <= 0.5 * r - 0.5 * ry && ry <= r;
          if (!in) continue;
          const double m = striped ? 0.5 + 0.5 * std::sin(freq * rx) : 1.0;
          for (std::size_t c = 0; c < channels; ++c) t[(c * size + i) * size + j] = col[c] * (0.6 + 0.4 * m);
        }
    }
    for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Tensor> load_image_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::io, "no PGM/PPM images in " + dir.string());
  std::vector<Tensor> out;
  for (const auto& f : files) out.push_back(load_image(f));
  return out;
}

Tensor augment(const Tensor& t, unsigned code) {
  const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  const bool tr = code & 4u;
  if (tr && H != W) throw Error(ErrorKind::shape, "augment: transpose needs a square image");
  Tensor out(t.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        std::size_t si = (code & 2u) ? H - 1 - i : i;
        std::size_t sj = (code & 1u) ? W - 1 - j : j;
        if (tr) std::swap(si, sj);
        out[(c * H + i) * W + j] = t[(c * H + si) * W + sj];
      }
  return out;
}

Tensor PatchSampler::draw(std::mt19937_64& rng) const {
  if (images.empty()) throw Error(ErrorKind::config, "patch sampler has no images");
  const Tensor& img = images[std::uniform_int_distribution<std::size_t>(0, images.size() - 1)(rng)];
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (H < size || W < size) {
    throw Error(ErrorKind::shape, "patch size " + std::to_string(size) + " exceeds image " + to_string(img.shape()));
  }
  const std::size_t i0 = std::uniform_int_distribution<std::size_t>(0, H - size)(rng);
  const std::size_t j0 = std::uniform_int_distribution<std::size_t>(0, W - size)(rng);
  Tensor p(Shape{C, size, size});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) p[(c * size + i) * size + j] = img[(c * H + i0 + i) * W + j0 + j];
  unsigned code = 0;
  if (flips) code |= static_cast<unsigned>(std::uniform_int_distribution<int>(0, 3)(rng));
  if (rotations && std::uniform_int_distribution<int>(0, 1)(rng)) code |= 4u;
  return code ? augment(p, code) : p;
}

std::vector<Tensor> draw_patches(const PatchSampler& s, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.draw(rng));
  return out;
}

}  // namespace tdv
