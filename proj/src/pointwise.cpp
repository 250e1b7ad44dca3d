#include "tdv/pointwise.hpp"

#include <cmath>

#include "tdv/tensor.hpp"

namespace tdv {

double phi(double v) { return 0.5 * std::log1p(v * v); }
double phi_prime(double v) { return v / (1.0 + v * v); }
double phi_second(double v) {
  const double d = 1.0 + v * v;
  return (1.0 - v * v) / (d * d);
}

namespace {

double ident(double v) { return v; }
double one(double) { return 1.0; }
double zero(double) { return 0.0; }

// ln cosh without overflow: |v| + log1p(exp(-2|v|)) - ln 2
double ln_cosh(double v) {
  const double a = std::abs(v);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}
double tanh_(double v) { return std::tanh(v); }
double sech2(double v) {
  const double t = std::tanh(v);
  return 1.0 - t * t;
}

}  // namespace

const Pointwise kPhi{phi, phi_prime, phi_second};

const Pointwise& potential_fn(Potential p) {
  static const Pointwise identity{ident, one, zero};
  static const Pointwise student{phi, phi_prime, phi_second};
  static const Pointwise cosh{ln_cosh, tanh_, sech2};
  switch (p) {
    case Potential::identity: return identity;
    case Potential::log_student_t: return student;
    case Potential::ln_cosh: return cosh;
  }
  return identity;
}

double potential_lipschitz(Potential p) { return p == Potential::log_student_t ? 0.5 : 1.0; }

std::string to_string(Potential p) {
  switch (p) {
    case Potential::identity: return "identity";
    case Potential::log_student_t: return "log_student_t";
    case Potential::ln_cosh: return "ln_cosh";
  }
  return "identity";
}

Potential parse_potential(const std::string& s) {
  if (s == "identity") return Potential::identity;
  if (s == "log_student_t") return Potential::log_student_t;
  if (s == "ln_cosh") return Potential::ln_cosh;
  throw Error(ErrorKind::config, "unknown potential '" + s + "'");
}

}  // namespace tdv
