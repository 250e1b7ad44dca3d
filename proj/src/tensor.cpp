#include "tdv/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace tdv {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
  for (auto e : shape_) {
    if (e == 0) throw Error(ErrorKind::shape, "tensor extents must be positive, got " + to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw Error(ErrorKind::shape, "tensor shape " + to_string(shape_) + " does not match " +
                                      std::to_string(data_.size()) + " values");
  }
  if (!all_finite()) throw Error(ErrorKind::numeric, "tensor input contains non-finite values");
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw Error(ErrorKind::shape, "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::shape,
                std::string(context) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  require_same_shape(*this, o, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  for (std::size_t i = 0; i < a.size(); ++i) s += pa[i] * pb[i];
  return s;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  const double* px = x.ptr();
  double* py = y.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) py[i] += alpha * px[i];
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
  return r;
}

namespace {

constexpr char kMagic[4] = {'T', 'D', 'V', 'T'};

template <typename U>
U byte_reversed(U v) {
  U r{};
  auto* src = reinterpret_cast<const unsigned char*>(&v);
  auto* dst = reinterpret_cast<unsigned char*>(&r);
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
  return r;
}

template <typename U>
void put_le(std::ostream& os, U v) {
  if constexpr (std::endian::native == std::endian::big) v = byte_reversed(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw Error(ErrorKind::io, "truncated tensor stream");
  if constexpr (std::endian::native == std::endian::big) v = byte_reversed(v);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw Error(ErrorKind::io, "failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorKind::io, "bad tensor magic");
  const auto rank = get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw Error(ErrorKind::io, "bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_le<std::uint32_t>(is);
  Tensor t(shape);
  for (double& v : t.data()) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { save_tensors(path, {t}); }

Tensor load_tensor(const std::filesystem::path& path) {
  auto ts = load_tensors(path);
  if (ts.size() != 1) throw Error(ErrorKind::io, path.string() + ": expected exactly one tensor");
  return ts.front();
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& ts) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::io, "cannot open " + path.string() + " for writing");
  for (const auto& t : ts) write_tensor(os, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<Tensor> out;
  while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
  return out;
}

}  // namespace tdv
