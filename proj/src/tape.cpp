#include "tdv/tape.hpp"

namespace tdv {

namespace {

void acc(Tensor& slot, Tensor t) {
  if (slot.empty()) {
    slot = std::move(t);
  } else {
    slot += t;
  }
}

Tensor mapped(const Tensor& a, double (*f)(double)) {
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = f(a[i]);
  return r;
}

// a * f(b) elementwise
Tensor times_mapped(const Tensor& a, const Tensor& b, double (*f)(double)) {
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * f(b[i]);
  return r;
}

}  // namespace

Var Tape::push(Node n) {
  n.value = evaluate(n);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error(ErrorKind::shape, "tape: invalid variable id " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

Tensor Tape::evaluate(const Node& n) const {
  switch (n.op) {
    case Op::leaf:
      return n.value;
    case Op::conv:
      return conv2d_forward(nodes_[n.a].value, nodes_[n.b].value, n.geom);
    case Op::conv_adjoint:
      return conv2d_adjoint(nodes_[n.a].value, nodes_[n.b].value, n.geom, n.h, n.w);
    case Op::blur:
      return compose_blur(nodes_[n.a].value);
    case Op::add:
      return nodes_[n.a].value + nodes_[n.b].value;
    case Op::scale:
      return nodes_[n.a].value * n.s;
    case Op::mul:
      return hadamard(nodes_[n.a].value, nodes_[n.b].value);
    case Op::map:
      return mapped(nodes_[n.a].value, n.fn->f);
    case Op::sum:
      return Tensor::scalar(tdv::sum(nodes_[n.a].value));
    case Op::dot:
      return Tensor::scalar(tdv::dot(nodes_[n.a].value, nodes_[n.b].value));
    case Op::linear:
      return n.lin->apply(nodes_[n.a].value);
  }
  return {};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

namespace {
bool either(bool a, bool b) { return a || b; }
}

Var Tape::conv(Var x, Var w, ConvGeometry g) {
  Node n;
  n.op = Op::conv;
  n.a = checked(x);
  n.b = checked(w);
  n.geom = g;
  n.needs_grad = either(nodes_[x.id].needs_grad, nodes_[w.id].needs_grad);
  return push(std::move(n));
}

Var Tape::conv_adjoint(Var y, Var w, ConvGeometry g, std::size_t height, std::size_t width) {
  Node n;
  n.op = Op::conv_adjoint;
  n.a = checked(y);
  n.b = checked(w);
  n.geom = g;
  n.h = height;
  n.w = width;
  n.needs_grad = either(nodes_[y.id].needs_grad, nodes_[w.id].needs_grad);
  return push(std::move(n));
}

Var Tape::blur(Var w3) {
  Node n;
  n.op = Op::blur;
  n.a = checked(w3);
  n.needs_grad = nodes_[w3.id].needs_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require_same_shape(node(a).value, node(b).value, "tape add");
  Node n;
  n.op = Op::add;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = either(nodes_[a.id].needs_grad, nodes_[b.id].needs_grad);
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::scale;
  n.a = checked(a);
  n.s = s;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(node(a).value, node(b).value, "tape mul");
  Node n;
  n.op = Op::mul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = either(nodes_[a.id].needs_grad, nodes_[b.id].needs_grad);
  return push(std::move(n));
}

Var Tape::map(Var a, const Pointwise& f) {
  Node n;
  n.op = Op::map;
  n.a = checked(a);
  n.fn = &f;
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::sum;
  n.a = checked(a);
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
  require_same_shape(node(a).value, node(b).value, "tape dot");
  Node n;
  n.op = Op::dot;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = either(nodes_[a.id].needs_grad, nodes_[b.id].needs_grad);
  return push(std::move(n));
}

Var Tape::linear(Var a, LinearMap m) {
  Node n;
  n.op = Op::linear;
  n.a = checked(a);
  n.lin = std::make_shared<LinearMap>(std::move(m));
  n.needs_grad = nodes_[a.id].needs_grad;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

void Tape::set_requires_grad(Var leaf, bool on) {
  if (node(leaf).op != Op::leaf) throw Error(ErrorKind::shape, "tape: set_requires_grad on a non-leaf");
  nodes_[leaf.id].requires_grad = on;
  refresh_needs_grad();
}

void Tape::refresh_needs_grad() {
  for (auto& n : nodes_) {
    if (n.op == Op::leaf) {
      n.needs_grad = n.requires_grad;
    } else {
      n.needs_grad = nodes_[n.a].needs_grad || (n.b >= 0 && nodes_[n.b].needs_grad);
    }
  }
}

void Tape::check_scalar(Var out, const char* context) const {
  if (node(out).value.size() != 1) {
    throw Error(ErrorKind::shape, std::string(context) + ": output must be scalar, got " + to_string(node(out).value.shape()));
  }
}

void Tape::backward(Var out, const Tensor& seed) {
  const Node& root = node(out);
  if (seed.shape() != root.value.shape()) {
    throw Error(ErrorKind::shape, "backward: seed " + to_string(seed.shape()) + " does not match output " +
                                      to_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.adj = Tensor();
  nodes_[out.id].adj = seed;
  backward_root_ = out.id;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.adj.empty() || n.op == Op::leaf) continue;
    const Tensor& g = n.adj;
    Node* a = &nodes_[n.a];
    Node* b = n.b >= 0 ? &nodes_[n.b] : nullptr;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::conv:
        if (a->needs_grad) acc(a->adj, conv2d_adjoint(g, b->value, n.geom, a->value.dim(1), a->value.dim(2)));
        if (b->needs_grad) acc(b->adj, conv2d_weight_grad(a->value, g, n.geom, b->value.dim(2), b->value.dim(3)));
        break;
      case Op::conv_adjoint:
        if (a->needs_grad) acc(a->adj, conv2d_forward(g, b->value, n.geom));
        if (b->needs_grad) acc(b->adj, conv2d_weight_grad(g, a->value, n.geom, b->value.dim(2), b->value.dim(3)));
        break;
      case Op::blur:
        if (a->needs_grad) acc(a->adj, compose_blur_adjoint(g));
        break;
      case Op::add:
        if (a->needs_grad) acc(a->adj, g);
        if (b->needs_grad) acc(b->adj, g);
        break;
      case Op::scale:
        if (a->needs_grad) acc(a->adj, g * n.s);
        break;
      case Op::mul:
        if (a->needs_grad) acc(a->adj, hadamard(g, b->value));
        if (b->needs_grad) acc(b->adj, hadamard(g, a->value));
        break;
      case Op::map:
        if (a->needs_grad) acc(a->adj, times_mapped(g, a->value, n.fn->df));
        break;
      case Op::sum:
        if (a->needs_grad) acc(a->adj, Tensor(a->value.shape(), g[0]));
        break;
      case Op::dot:
        if (a->needs_grad) acc(a->adj, b->value * g[0]);
        if (b->needs_grad) acc(b->adj, a->value * g[0]);
        break;
      case Op::linear:
        if (a->needs_grad) acc(a->adj, n.lin->transpose(g));
        break;
    }
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.adj.empty() ? Tensor::zeros_like(n.value) : n.adj;
}

void Tape::clear_tangents() {
  for (auto& n : nodes_) {
    n.tan = Tensor();
    n.tadj = Tensor();
  }
}

void Tape::set_tangent(Var leaf, Tensor t) {
  const Node& n = node(leaf);
  if (n.op != Op::leaf) throw Error(ErrorKind::shape, "set_tangent: not a leaf");
  require_same_shape(n.value, t, "set_tangent");
  nodes_[leaf.id].tan = std::move(t);
}

void Tape::propagate_tangents() {
  for (auto& n : nodes_) {
    if (n.op == Op::leaf) continue;
    n.tan = Tensor();
    const Node& a = nodes_[n.a];
    const Node* b = n.b >= 0 ? &nodes_[n.b] : nullptr;
    const bool ta = !a.tan.empty();
    const bool tb = b && !b->tan.empty();
    if (!ta && !tb) continue;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::conv:
        if (ta) acc(n.tan, conv2d_forward(a.tan, b->value, n.geom));
        if (tb) acc(n.tan, conv2d_forward(a.value, b->tan, n.geom));
        break;
      case Op::conv_adjoint:
        if (ta) acc(n.tan, conv2d_adjoint(a.tan, b->value, n.geom, n.h, n.w));
        if (tb) acc(n.tan, conv2d_adjoint(a.value, b->tan, n.geom, n.h, n.w));
        break;
      case Op::blur:
        n.tan = compose_blur(a.tan);
        break;
      case Op::add:
        if (ta) acc(n.tan, a.tan);
        if (tb) acc(n.tan, b->tan);
        break;
      case Op::scale:
        n.tan = a.tan * n.s;
        break;
      case Op::mul:
        if (ta) acc(n.tan, hadamard(a.tan, b->value));
        if (tb) acc(n.tan, hadamard(a.value, b->tan));
        break;
      case Op::map:
        n.tan = times_mapped(a.tan, a.value, n.fn->df);
        break;
      case Op::sum:
        n.tan = Tensor::scalar(tdv::sum(a.tan));
        break;
      case Op::dot: {
        double d = 0.0;
        if (ta) d += tdv::dot(a.tan, b->value);
        if (tb) d += tdv::dot(a.value, b->tan);
        n.tan = Tensor::scalar(d);
        break;
      }
      case Op::linear:
        n.tan = n.lin->apply(a.tan);
        break;
    }
  }
}

// Differentiates every rule of backward() along the tangent direction. Needs the
// adjoints of the first sweep; the seed itself is constant so its tangent is zero.
void Tape::backward_tangent(Var out) {
  if (backward_root_ != out.id) throw Error(ErrorKind::shape, "backward_tangent: run backward on the same output first");
  for (auto& n : nodes_) n.tadj = Tensor();
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.op == Op::leaf) continue;
    const bool hg = !n.adj.empty();
    const bool ht = !n.tadj.empty();
    if (!hg && !ht) continue;
    const Tensor& g = n.adj;
    const Tensor& gt = n.tadj;
    Node* a = &nodes_[n.a];
    Node* b = n.b >= 0 ? &nodes_[n.b] : nullptr;
    const bool ta = !a->tan.empty();
    const bool tb = b && !b->tan.empty();
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::conv:
        if (a->needs_grad) {
          if (ht) acc(a->tadj, conv2d_adjoint(gt, b->value, n.geom, a->value.dim(1), a->value.dim(2)));
          if (hg && tb) acc(a->tadj, conv2d_adjoint(g, b->tan, n.geom, a->value.dim(1), a->value.dim(2)));
        }
        if (b->needs_grad) {
          const std::size_t kh = b->value.dim(2), kw = b->value.dim(3);
          if (ht) acc(b->tadj, conv2d_weight_grad(a->value, gt, n.geom, kh, kw));
          if (hg && ta) acc(b->tadj, conv2d_weight_grad(a->tan, g, n.geom, kh, kw));
        }
        break;
      case Op::conv_adjoint:
        if (a->needs_grad) {
          if (ht) acc(a->tadj, conv2d_forward(gt, b->value, n.geom));
          if (hg && tb) acc(a->tadj, conv2d_forward(g, b->tan, n.geom));
        }
        if (b->needs_grad) {
          const std::size_t kh = b->value.dim(2), kw = b->value.dim(3);
          if (ht) acc(b->tadj, conv2d_weight_grad(gt, a->value, n.geom, kh, kw));
          if (hg && ta) acc(b->tadj, conv2d_weight_grad(g, a->tan, n.geom, kh, kw));
        }
        break;
      case Op::blur:
        if (a->needs_grad && ht) acc(a->tadj, compose_blur_adjoint(gt));
        break;
      case Op::add:
        if (ht) {
          if (a->needs_grad) acc(a->tadj, gt);
          if (b->needs_grad) acc(b->tadj, gt);
        }
        break;
      case Op::scale:
        if (a->needs_grad && ht) acc(a->tadj, gt * n.s);
        break;
      case Op::mul:
        if (a->needs_grad) {
          if (ht) acc(a->tadj, hadamard(gt, b->value));
          if (hg && tb) acc(a->tadj, hadamard(g, b->tan));
        }
        if (b->needs_grad) {
          if (ht) acc(b->tadj, hadamard(gt, a->value));
          if (hg && ta) acc(b->tadj, hadamard(g, a->tan));
        }
        break;
      case Op::map:
        if (a->needs_grad) {
          if (ht) acc(a->tadj, times_mapped(gt, a->value, n.fn->df));
          if (hg && ta) acc(a->tadj, hadamard(times_mapped(g, a->value, n.fn->d2f), a->tan));
        }
        break;
      case Op::sum:
        if (a->needs_grad && ht) acc(a->tadj, Tensor(a->value.shape(), gt[0]));
        break;
      case Op::dot:
        if (a->needs_grad) {
          if (ht) acc(a->tadj, b->value * gt[0]);
          if (hg && tb) acc(a->tadj, b->tan * g[0]);
        }
        if (b->needs_grad) {
          if (ht) acc(b->tadj, a->value * gt[0]);
          if (hg && ta) acc(b->tadj, a->tan * g[0]);
        }
        break;
      case Op::linear:
        if (a->needs_grad && ht) acc(a->tadj, n.lin->transpose(gt));
        break;
    }
  }
}

Tensor Tape::grad_tangent(Var v) const {
  const Node& n = node(v);
  return n.tadj.empty() ? Tensor::zeros_like(n.value) : n.tadj;
}

Tensor Tape::hvp(Var out, Var x, const Tensor& direction) {
  check_scalar(out, "hvp");
  require_same_shape(node(x).value, direction, "hvp");
  backward(out);
  clear_tangents();
  set_tangent(x, direction);
  propagate_tangents();
  backward_tangent(out);
  return grad_tangent(x);
}

bool Tape::replay() const {
  for (const auto& n : nodes_) {
    if (n.op == Op::leaf) continue;
    if (!(evaluate(n) == n.value)) return false;
  }
  return true;
}

}  // namespace tdv
