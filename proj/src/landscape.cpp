#include "samlab/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace samlab::landscape {

std::string to_string(LandscapeKind k) {
  switch (k) {
    case LandscapeKind::SUBQUADRATIC_EXAMPLE: return "SUBQUADRATIC_EXAMPLE";
    case LandscapeKind::QUADRATIC: return "QUADRATIC";
    case LandscapeKind::CUSTOM: return "CUSTOM";
  }
  return "?";
}

ScalarLandscape::ScalarLandscape(LandscapeKind kind, std::string name, double a, double b,
                                 Fn loss, Fn grad, Fn curvature, nlohmann::json params)
    : kind_(kind),
      name_(std::move(name)),
      a_(a),
      b_(b),
      loss_(std::move(loss)),
      grad_(std::move(grad)),
      curv_(std::move(curvature)),
      params_(std::move(params)) {
  if (!(a > 0.0) || !(b > 0.0)) throw ConfigError("landscape: need a > 0 and b > 0");
}

ScalarLandscape subquadratic_example(double a, double epsilon, double b) {
  if (!(a > 0.0) || !(epsilon > 0.0) || !(b > 0.0)) {
    throw ConfigError("subquadratic_example: need a > 0, epsilon > 0, b > 0");
  }
  if (a * epsilon > 2.0 * b) throw ConfigError("subquadratic_example: need a*epsilon <= 2b");
  const double knee = a * epsilon;
  const double plateau = 0.5 * a * a * epsilon;
  const double lknee = a * a * a * epsilon * epsilon / 3.0;
  auto loss = [=](double z) {
    const double r = std::abs(z);
    if (r < knee) return 0.5 * a * z * z - r * r * r / (6.0 * epsilon);
    return lknee + plateau * (r - knee);
  };
  auto grad = [=](double z) {
    const double r = std::abs(z);
    if (r < knee) return z * (a - r / (2.0 * epsilon));
    return z > 0.0 ? plateau : -plateau;
  };
  auto curv = [=](double z) {
    const double r = std::abs(z);
    return r < knee ? a - r / epsilon : 0.0;
  };
  return ScalarLandscape(LandscapeKind::SUBQUADRATIC_EXAMPLE, "subquadratic_example", a, b, loss,
                         grad, curv, {{"a", a}, {"epsilon", epsilon}, {"b", b}});
}

ScalarLandscape quadratic_landscape(double a, double b) {
  return ScalarLandscape(
      LandscapeKind::QUADRATIC, "quadratic", a, b, [a](double z) { return 0.5 * a * z * z; },
      [a](double z) { return a * z; }, [a](double) { return a; }, {{"a", a}, {"b", b}});
}

ScalarLandscape logcosh_landscape(double a, double b) {
  auto loss = [a](double z) {
    // log cosh z = |z| + log1p(e^{−2|z|}) − log 2, stable for large |z|
    const double r = std::abs(z);
    return a * (r + std::log1p(std::exp(-2.0 * r)) - std::log(2.0));
  };
  auto grad = [a](double z) { return a * std::tanh(z); };
  auto curv = [a](double z) {
    const double c = std::cosh(z);
    return a / (c * c);
  };
  return ScalarLandscape(LandscapeKind::CUSTOM, "logcosh", a, b, loss, grad, curv,
                         {{"a", a}, {"b", b}});
}

bool is_subquadratic(const ScalarLandscape& l, int grid) {
  const double c = l.valley_radius();
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= grid; ++k) {
    const double z = c * k / grid;
    if (z * l.grad(z) < 0.0 || -z * l.grad(-z) < 0.0) return false;
    const double h = l.curvature(z);
    if (h > prev) return false;
    if (l.curvature(-z) != h) return false;
    prev = h;
  }
  return true;
}

double AdmissibleBounds::rho_max(double eta, double a) const {
  return std::min(1.0 / a, eta * ratio_min);
}

AdmissibleBounds admissible_bounds(const ScalarLandscape& l, int grid) {
  if (grid < 2) throw ConfigError("admissible_bounds: grid must be >= 2");
  const double b = l.b();
  const double c = l.valley_radius();
  AdmissibleBounds out;

  double eta = std::numeric_limits<double>::infinity();
  for (int k = -grid; k <= grid; ++k) {
    const double g = std::abs(l.grad(c * k / grid));
    if (g > 0.0) eta = std::min(eta, b / g);
  }
  double ratio = std::numeric_limits<double>::infinity();
  for (int k = 1; k < grid; ++k) {
    for (double z : {b * k / grid, -b * k / grid}) {
      const double g = l.grad(z);
      if (g != 0.0) ratio = std::min(ratio, std::abs(l.grad(2.0 * z) / g));
    }
  }
  out.eta_max_grid = eta;
  out.ratio_min_grid = ratio;

  const double a = l.a();
  switch (l.kind()) {
    case LandscapeKind::SUBQUADRATIC_EXAMPLE: {
      const double eps = l.params().at("epsilon").get<double>();
      const double knee = a * eps;
      out.eta_max_closed = 2.0 * b / (a * a * eps);
      // L'(2z)/L'(z) decreases on (0, b); it equals 1 once z ≥ aε
      out.ratio_min_closed = b > knee ? 1.0 : std::abs(l.grad(2.0 * b) / l.grad(b));
      break;
    }
    case LandscapeKind::QUADRATIC:
      out.eta_max_closed = 1.0 / (2.0 * a);
      out.ratio_min_closed = 2.0;
      break;
    case LandscapeKind::CUSTOM:
      if (l.name() == "logcosh") {
        const double t = std::tanh(b);
        out.eta_max_closed = b / (a * std::tanh(2.0 * b));
        out.ratio_min_closed = 2.0 / (1.0 + t * t);
      }
      break;
  }
  out.eta_max = out.eta_max_closed ? std::min(eta, *out.eta_max_closed) : eta;
  out.ratio_min = out.ratio_min_closed ? std::min(ratio, *out.ratio_min_closed) : ratio;
  return out;
}

std::pair<Trajectory1D, ContainmentReport> fullbatch_sam_1d(const ScalarLandscape& l,
                                                            double theta0, double eta,
                                                            double rho, long steps, bool record) {
  if (!(std::abs(theta0) < l.b())) throw UsageError("fullbatch_sam_1d: need |theta0| < b");
  if (!(eta > 0.0) || !(rho >= 0.0) || steps < 0) {
    throw ConfigError("fullbatch_sam_1d: need eta > 0, rho >= 0, steps >= 0");
  }
  const auto bounds = admissible_bounds(l, 1000);
  ContainmentReport rep;
  rep.eta = eta;
  rep.rho = rho;
  rep.eta_max = bounds.eta_max;
  rep.rho_max = bounds.rho_max(eta, l.a());

  Trajectory1D tr;
  const double b = l.b();
  const double c = l.valley_radius();
  double theta = theta0;
  rep.max_excursion = std::abs(theta);
  if (record) {
    tr.theta.push_back(theta);
    tr.loss.push_back(l.loss(theta));
  }
  for (long t = 1; t <= steps; ++t) {
    theta = theta - eta * l.grad(theta + rho * l.grad(theta));
    const double r = std::abs(theta);
    if (record) {
      tr.theta.push_back(theta);
      tr.loss.push_back(l.loss(theta));
    }
    if (!std::isfinite(theta)) {
      rep.overflow = true;
      rep.stayed_in_valley = false;
      rep.max_excursion = std::numeric_limits<double>::infinity();
      if (!rep.first_inner_exit_step) rep.first_inner_exit_step = t;
      rep.first_exit_step = t;
      break;
    }
    rep.max_excursion = std::max(rep.max_excursion, r);
    if (r >= b && !rep.first_inner_exit_step) rep.first_inner_exit_step = t;
    if (r >= c) {
      rep.stayed_in_valley = false;
      rep.first_exit_step = t;
      break;
    }
  }
  return {std::move(tr), rep};
}

double quadratic_escape_threshold(double a, double rho) {
  if (!(a > 0.0) || !(rho >= 0.0)) throw ConfigError("quadratic_escape_threshold: need a > 0, rho >= 0");
  return 2.0 / (a * (1.0 + a * rho));
}

io::CsvTable curve_csv(const ScalarLandscape& l, int points) {
  if (points < 2) throw ConfigError("curve_csv: points must be >= 2");
  io::CsvTable t;
  t.header = {"z", "L", "dL", "d2L"};
  const double c = l.valley_radius();
  for (int k = 0; k < points; ++k) {
    const double z = -c + 2.0 * c * k / (points - 1);
    t.add_row({io::fmt(z), io::fmt(l.loss(z)), io::fmt(l.grad(z)), io::fmt(l.curvature(z))});
  }
  return t;
}

io::CsvTable trajectory_csv(const Trajectory1D& tr) {
  io::CsvTable t;
  t.header = {"step", "theta", "loss"};
  for (std::size_t i = 0; i < tr.theta.size(); ++i) {
    t.add_row({io::fmt(i), io::fmt(tr.theta[i]), io::fmt(tr.loss[i])});
  }
  return t;
}

nlohmann::json to_json(const ContainmentReport& r) {
  auto opt = [](const std::optional<long>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"stayed_in_valley", r.stayed_in_valley},
          {"max_excursion", std::isfinite(r.max_excursion) ? nlohmann::json(r.max_excursion) : nlohmann::json(nullptr)},
          {"first_exit_step", opt(r.first_exit_step)},
          {"first_inner_exit_step", opt(r.first_inner_exit_step)},
          {"overflow", r.overflow},
          {"eta", r.eta},
          {"rho", r.rho},
          {"eta_max", r.eta_max},
          {"rho_max", r.rho_max}};
}

nlohmann::json to_json(const AdmissibleBounds& b) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"eta_max", b.eta_max},
          {"ratio_min", b.ratio_min},
          {"eta_max_grid", b.eta_max_grid},
          {"ratio_min_grid", b.ratio_min_grid},
          {"eta_max_closed", opt(b.eta_max_closed)},
          {"ratio_min_closed", opt(b.ratio_min_closed)}};
}

}  // namespace samlab::landscape
