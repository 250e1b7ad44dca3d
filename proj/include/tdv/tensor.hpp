#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdv {

enum class ErrorKind { shape, config, numeric, io };

/// Categorized failure. The CLI maps the kind onto its exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Dense row-major array of doubles. Images are (channels, height, width),
/// convolution kernels (out, in, kh, kw).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  /// Checked construction from external data: rejects size mismatch and non-finite entries.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  double at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  bool all_finite() const noexcept;
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);
Tensor operator*(double s, Tensor a);

void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);
double norm_inf(const Tensor& a);
double sum(const Tensor& a);
/// y += alpha * x
void axpy(double alpha, const Tensor& x, Tensor& y);
Tensor hadamard(const Tensor& a, const Tensor& b);

// Binary "TDVT" container: magic, u32 rank, u32 extents, f64 little-endian payload.
// A container file is a sequence of such frames.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& ts);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace tdv
