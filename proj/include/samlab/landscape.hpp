#pragma once

#include "samlab/core.hpp"
#include "samlab/io.hpp"

#include "json.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace samlab::landscape {

enum class LandscapeKind { SUBQUADRATIC_EXAMPLE, QUADRATIC, CUSTOM };
std::string to_string(LandscapeKind k);

/// A scalar valley around the minimum z = 0 with closed-form L, L', L''.
/// b is the inner radius (start region (−b, b)); the valley is V = [−2b, 2b].
class ScalarLandscape {
 public:
  using Fn = std::function<double(double)>;

  ScalarLandscape(LandscapeKind kind, std::string name, double a, double b, Fn loss, Fn grad,
                  Fn curvature, nlohmann::json params = {});

  double loss(double z) const { return loss_(z); }
  double grad(double z) const { return grad_(z); }
  double curvature(double z) const { return curv_(z); }

  LandscapeKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double a() const { return a_; }
  double b() const { return b_; }
  double valley_radius() const { return 2.0 * b_; }
  const nlohmann::json& params() const { return params_; }

 private:
  LandscapeKind kind_;
  std::string name_;
  double a_;
  double b_;
  Fn loss_, grad_, curv_;
  nlohmann::json params_;
};

/// L''(z) = a − |z|/ε for |z| < aε and 0 beyond; L' and L integrated
/// piecewise, so L'(z) = sign(z)·a²ε/2 once |z| ≥ aε.
/// ConfigError unless a > 0, ε > 0, b > 0 and aε ≤ 2b.
ScalarLandscape subquadratic_example(double a, double epsilon, double b);
/// L = a z²/2.
ScalarLandscape quadratic_landscape(double a, double b);
/// L = a·log cosh z: curvature a·sech²z decays away from the minimum.
ScalarLandscape logcosh_landscape(double a, double b);

/// Grid check of z·L'(z) ≥ 0 and monotone non-increasing L''(|z|) on V.
bool is_subquadratic(const ScalarLandscape& l, int grid = 1000);

struct AdmissibleBounds {
  /// min over V of b/|L'(z)|; step sizes must stay strictly below it.
  double eta_max = 0.0;
  /// min over 0 < |z| < b of |L'(2z)/L'(z)|.
  double ratio_min = 0.0;
  double eta_max_grid = 0.0;
  double ratio_min_grid = 0.0;
  std::optional<double> eta_max_closed;
  std::optional<double> ratio_min_closed;

  /// min{1/a, η·ratio_min}.
  double rho_max(double eta, double a) const;
};

/// Dense-grid minimization (`grid` points per side). When a closed form is
/// known for the kind, the reported bound is the smaller of the two values.
AdmissibleBounds admissible_bounds(const ScalarLandscape& l, int grid = 10000);

struct ContainmentReport {
  bool stayed_in_valley = true;
  double max_excursion = 0.0;
  /// Minimal t with |θ_t| ≥ 2b.
  std::optional<long> first_exit_step;
  /// Minimal t with |θ_t| ≥ b.
  std::optional<long> first_inner_exit_step;
  bool overflow = false;
  double eta = 0.0;
  double rho = 0.0;
  double eta_max = 0.0;
  double rho_max = 0.0;
};

struct Trajectory1D {
  std::vector<double> theta;
  std::vector<double> loss;
};

/// Iterates θ ← θ − η L'(θ + ρ L'(θ)) for `steps` updates from θ₀ and reports
/// containment in V = [−2b, 2b]. The run stops at the first 2b exit. When
/// `record` is false only the report is produced.
std::pair<Trajectory1D, ContainmentReport> fullbatch_sam_1d(const ScalarLandscape& l,
                                                            double theta0, double eta,
                                                            double rho, long steps,
                                                            bool record = true);

/// 2 / (a(1 + aρ)).
double quadratic_escape_threshold(double a, double rho);

/// Columns z, L, dL, d2L over [−2b, 2b].
io::CsvTable curve_csv(const ScalarLandscape& l, int points = 401);
/// Columns step, theta, loss.
io::CsvTable trajectory_csv(const Trajectory1D& t);
nlohmann::json to_json(const ContainmentReport& r);
nlohmann::json to_json(const AdmissibleBounds& b);

}  // namespace samlab::landscape
