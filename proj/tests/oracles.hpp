#pragma once

// Independent reference computations used by the tests.

#include "samlab/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace oracle {

using Fn = std::function<double(const samlab::ParamVector&)>;

inline samlab::ParamVector fd_gradient(const Fn& f, const samlab::ParamVector& x) {
  samlab::ParamVector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    samlab::ParamVector p = x, m = x;
    p[j] += h;
    m[j] -= h;
    g[j] = (f(p) - f(m)) / (2.0 * h);
  }
  return g;
}

inline samlab::Matrix fd_hessian(const Fn& f, const samlab::ParamVector& x, double h = 1e-4) {
  const auto n = x.size();
  samlab::Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      auto at = [&](double si, double sj) {
        samlab::ParamVector y = x;
        y[i] += si * h;
        y[j] += sj * h;
        return f(y);
      };
      out(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
    }
  }
  return out;
}

/// max |a−b| / max(max|b|, floor)
inline double rel_err(const samlab::ParamVector& a, const samlab::ParamVector& b,
                      double floor = 1e-8) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace oracle
