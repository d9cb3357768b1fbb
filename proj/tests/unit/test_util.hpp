#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace testutil {

// |a - b| / max(|a|, |b|), with a floor so exact zeros compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Largest relative error between an analytic gradient and central differences
// of f over every coordinate of x.
inline double fd_check(std::vector<double>& x, const std::function<double()>& f, std::span<const double> grad,
                       double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double dn = f();
    x[i] = keep;
    worst = std::max(worst, rel_err(grad[i], (up - dn) / (2 * h)));
  }
  return worst;
}

// Upper tail of the chi-square distribution with k degrees of freedom.
inline double chi2_sf(double x, int k) {
  // regularized upper incomplete gamma Q(k/2, x/2)
  const double a = 0.5 * k;
  const double z = 0.5 * x;
  if (z <= 0.0) return 1.0;
  if (z < a + 1.0) {
    double sum = 1.0 / a;
    double term = sum;
    for (int n = 1; n < 500; ++n) {
      term *= z / (a + n);
      sum += term;
    }
    return 1.0 - sum * std::exp(-z + a * std::log(z) - std::lgamma(a));
  }
  // continued fraction
  double b = z + 1.0 - a;
  double c = 1e300;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    d = 1.0 / d;
    c = b + an / c;
    h *= d * c;
  }
  return std::exp(-z + a * std::log(z) - std::lgamma(a)) * h;
}

inline double chi2_pvalue(const std::vector<double>& counts, const std::vector<double>& probs) {
  double n = 0.0;
  for (double c : counts) n += c;
  double stat = 0.0;
  int dof = -1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    const double e = n * probs[i];
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++dof;
  }
  return chi2_sf(stat, std::max(dof, 1));
}

}  // namespace testutil

namespace testutil {

// Gauss-Hermite nodes and weights for ∫ exp(-u²) f(u) du (Newton on the
// three-term recurrence).
inline void gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(static_cast<std::size_t>(n), 0.0);
  w.assign(static_cast<std::size_t>(n), 0.0);
  const double pim4 = 0.7511255444649425;  // π^{-1/4}
  double z = 0.0;
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    x[static_cast<std::size_t>(n - 1 - i)] = -z;
    w[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    w[static_cast<std::size_t>(n - 1 - i)] = w[static_cast<std::size_t>(i)];
  }
}

}  // namespace testutil
