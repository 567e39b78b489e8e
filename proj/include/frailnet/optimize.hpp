#pragma once

#include <cmath>
#include <limits>

#include "frailnet/errors.hpp"

namespace frailnet {

struct BrentResult {
  double x = 0.0;
  double fx = 0.0;
  int evaluations = 0;
};

/**
 * Brent's derivative-free minimizer on [a, b]: golden-section steps with
 * parabolic interpolation where it is safe. Stops when the bracket around the
 * current best shrinks below tol (plus a floating-point floor).
 */
template <class F>
BrentResult brent_minimize(F&& f, double a, double b, double tol, int max_iter = 200) {
  if (!(a < b)) throw InvalidArgumentError("brent_minimize: need a < b");
  constexpr double golden = 0.3819660112501051;  // (3 - sqrt(5)) / 2
  const double eps = std::sqrt(std::numeric_limits<double>::epsilon());

  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x);
  double fw = fx, fv = fx;
  int evals = 1;
  double d = 0.0, e = 0.0;

  for (int it = 0; it < max_iter; ++it) {
    const double m = 0.5 * (a + b);
    const double tol1 = eps * std::abs(x) + tol / 3.0;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;

    bool golden_step = true;
    if (std::abs(e) > tol1) {
      // Parabola through x, v, w.
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      double e_old = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_old) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (x < m) ? tol1 : -tol1;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x < m) ? b - x : a - x;
      d = golden * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + ((d > 0.0) ? tol1 : -tol1);
    const double fu = f(u);
    ++evals;
    if (fu <= fx) {
      if (u < x) b = x; else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return BrentResult{x, fx, evals};
}

}  // namespace frailnet
