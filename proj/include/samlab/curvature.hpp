#pragma once

#include "samlab/io.hpp"
#include "samlab/models.hpp"

#include "json.hpp"

#include <cstdint>
#include <vector>

namespace samlab::curvature {

/// H(θ)v. Uses the model's exact Hessian when it has one, otherwise central
/// differences of the full-batch gradient with h = 1e-4 / max(1, ‖v‖).
/// Throws NumericalError if the product is not finite.
ParamVector hvp(const models::Model& model, const ParamVector& theta, const ParamVector& v);

struct SharpnessReading {
  double spectral_norm = 0.0;
  double trace = 0.0;
  double frobenius_sq = 0.0;
  int probe_count = 0;
  int power_iters = 0;
  /// Relative Rayleigh-quotient change at the last power iteration.
  double residual = 0.0;
  bool converged = true;
};

/// |λ|max of H(θ) by power iteration from a seeded Gaussian start.
/// Converged when |λ_k − λ_{k−1}| ≤ tol·max(1, |λ_k|). If max_iters pass
/// without that, one restart from a fresh seeded vector is tried and the
/// better of the two estimates is returned with converged = false when
/// neither met the tolerance.
SharpnessReading spectral_norm(const models::Model& model, const ParamVector& theta,
                               double tol = 1e-6, int max_iters = 1000,
                               std::uint64_t seed = 0);

/// Mean of zᵀHz over Rademacher probes. Probe k draws from mix_seed(seed, k).
double hutchinson_trace(const models::Model& model, const ParamVector& theta, int probes,
                        std::uint64_t seed);

/// Mean of ‖Hz‖² over Rademacher probes, an unbiased estimate of Tr(H²).
double frobenius_sq(const models::Model& model, const ParamVector& theta, int probes,
                    std::uint64_t seed);

/// All three readings at θ.
SharpnessReading read_sharpness(const models::Model& model, const ParamVector& theta,
                                int probes, std::uint64_t seed);

inline constexpr std::size_t kDenseParamLimit = 10000;

/// (1/n) Σ ∇f_i ∇f_iᵀ from the model's output Jacobian.
/// CapabilityError when the model has no Jacobian or p > kDenseParamLimit.
Matrix fisher_matrix(const models::Model& model, const ParamVector& theta);

/// Dense Hessian: exact when available, otherwise column-by-column hvp.
/// Subject to the same size guard as fisher_matrix.
Matrix dense_hessian(const models::Model& model, const ParamVector& theta);

struct InterpolationProfile {
  std::vector<double> lambdas;
  std::vector<double> losses;
  std::vector<double> second_diffs;
  double h = 0.1;

  /// Max loss over nodes with λ in [0, 1] minus the larger endpoint loss.
  double barrier() const;
  /// Spearman correlation between λ and L'' over nodes with λ in [0, 1].
  double monotonicity() const;
  std::size_t index_of(double lambda) const;
};

/// Loss along θ_λ = (1−λ)θ_a + λθ_b on a uniform grid over
/// [−margin, 1 + margin] and the second difference
/// (L(λ+h) + L(λ−h) − 2L(λ)) / (2h)². The grid must place nodes exactly on
/// λ = 0 and λ = 1 (ConfigError otherwise); 61 points with margin 0.25 gives
/// spacing 0.025.
InterpolationProfile interpolation_probe(const models::Model& model, const ParamVector& theta_a,
                                         const ParamVector& theta_b, int grid_size = 61,
                                         double h = 0.1, double margin = 0.25);

/// Rank correlation with average ranks for ties. Returns 0 when either
/// sequence is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

io::CsvTable to_csv(const InterpolationProfile& profile);
io::CsvTable to_csv(const std::vector<SharpnessReading>& readings);
nlohmann::json to_json(const InterpolationProfile& profile);
nlohmann::json to_json(const SharpnessReading& reading);
SharpnessReading sharpness_from_json(const nlohmann::json& j);

}  // namespace samlab::curvature
