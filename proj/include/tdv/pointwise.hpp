#pragma once

#include <string>

namespace tdv {

// phi(v) = 1/2 log(1 + v^2), the activation inside every residual block.
double phi(double v);
double phi_prime(double v);
double phi_second(double v);

/// A smooth scalar map together with its first two derivatives.
struct Pointwise {
  double (*f)(double);
  double (*df)(double);
  double (*d2f)(double);
};

extern const Pointwise kPhi;

enum class Potential { identity, log_student_t, ln_cosh };

const Pointwise& potential_fn(Potential p);
/// sup |psi'|, used by the gradient bound.
double potential_lipschitz(Potential p);

std::string to_string(Potential p);
Potential parse_potential(const std::string& s);

}  // namespace tdv
