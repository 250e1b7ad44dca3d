#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tdv/conv.hpp"
#include "tdv/pointwise.hpp"
#include "tdv/tensor.hpp"

namespace tdv {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Fixed linear map with its transpose, for tape nodes that apply a constant operator.
struct LinearMap {
  std::function<Tensor(const Tensor&)> apply;
  std::function<Tensor(const Tensor&)> transpose;
};

/// Eager reverse-mode tape. Values are computed when an op is recorded.
///
/// Second order works forward-over-reverse: after backward(), seed tangents on
/// leaves, call propagate_tangents() and backward_tangent(); the tangent of a
/// leaf's adjoint is then the Hessian (row block) applied to the seeded direction.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = true);
  Var conv(Var x, Var w, ConvGeometry g);
  /// Adjoint of conv(., w) mapping onto an (in_channels, height, width) image.
  Var conv_adjoint(Var y, Var w, ConvGeometry g, std::size_t height, std::size_t width);
  /// compose_blur of a 3x3 kernel.
  Var blur(Var w3);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  Var mul(Var a, Var b);
  Var map(Var a, const Pointwise& f);
  Var sum(Var a);
  Var dot(Var a, Var b);
  Var linear(Var a, LinearMap m);

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  void set_requires_grad(Var leaf, bool on);

  /// Reverse sweep from out. Adjoints of earlier sweeps are discarded.
  void backward(Var out, const Tensor& seed);
  void backward(Var out) { backward(out, Tensor::scalar(1.0)); }
  /// Adjoint of v after backward(); zeros if v received none.
  Tensor grad(Var v) const;

  void clear_tangents();
  void set_tangent(Var leaf, Tensor t);
  void propagate_tangents();
  /// Tangent of the reverse sweep; requires backward() on the same output.
  void backward_tangent(Var out);
  Tensor grad_tangent(Var v) const;

  /// Hessian of the scalar out applied to direction, with respect to leaf x.
  Tensor hvp(Var out, Var x, const Tensor& direction);

  /// Recomputes every node from the recorded leaves; true iff all values are bit-identical.
  bool replay() const;

 private:
  enum class Op { leaf, conv, conv_adjoint, blur, add, scale, mul, map, sum, dot, linear };

  struct Node {
    Op op = Op::leaf;
    int a = -1;
    int b = -1;
    Tensor value;
    Tensor adj;
    Tensor tan;
    Tensor tadj;
    bool requires_grad = false;
    bool needs_grad = false;
    ConvGeometry geom{};
    std::size_t h = 0;
    std::size_t w = 0;
    double s = 0.0;
    const Pointwise* fn = nullptr;
    std::shared_ptr<LinearMap> lin;
  };

  Var push(Node n);
  const Node& node(Var v) const;
  int checked(Var v) const {
    (void)node(v);
    return v.id;
  }
  Tensor evaluate(const Node& n) const;
  void refresh_needs_grad();
  void check_scalar(Var out, const char* context) const;

  std::vector<Node> nodes_;
  int backward_root_ = -1;
};

}  // namespace tdv
