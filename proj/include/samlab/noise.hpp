#pragma once

#include "samlab/io.hpp"
#include "samlab/models.hpp"
#include "samlab/optimizers.hpp"
#include "samlab/rng.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace samlab::noise {

enum class NoiseMode { EMPIRICAL_MINIBATCH, LOSS_SCALED_GAUSSIAN };

/// Gradient noise ξ added to the full-batch gradient.
///
/// LOSS_SCALED_GAUSSIAN draws ξ ~ N(0, 2·c·L(θ)·G/B) with G frozen at the
/// minimum; c is the alignment scale (γ of the channel equals c).
/// EMPIRICAL_MINIBATCH returns ∇L_batch(θ) − ∇L(θ) for a uniformly drawn
/// batch of size B without replacement.
class NoiseChannel {
 public:
  /// Throws ConfigError when G is not symmetric PSD or B < 1 or c ≤ 0.
  static NoiseChannel loss_scaled(const Matrix& g, std::size_t batch, double scale = 1.0);
  static NoiseChannel empirical(std::size_t batch);

  NoiseMode mode() const { return mode_; }
  std::size_t batch() const { return batch_; }
  double scale() const { return scale_; }
  const Matrix& fisher() const { return g_; }
  /// Covariance of the Gaussian mode at loss value L.
  Matrix covariance(double loss) const;

  /// Draw ξ at θ. For the Gaussian mode L(θ) is the model's full loss.
  ParamVector sample(const models::Model& model, const ParamVector& theta, Rng& rng) const;
  /// Gaussian mode with the loss value supplied directly.
  ParamVector sample_at_loss(double loss, Rng& rng) const;

 private:
  NoiseMode mode_ = NoiseMode::LOSS_SCALED_GAUSSIAN;
  std::size_t batch_ = 1;
  double scale_ = 1.0;
  Matrix g_;
  Matrix root_;  // symmetric square root of G
};

/// Tr(ΣG) / (2 L ‖G‖_F²). NumericalError when L ≤ 1e-12.
double alignment_ratio(const Matrix& sigma, const Matrix& g, double loss);

/// Alignment ratio at θ with Σ the per-sample gradient covariance
/// (1/n) Σ (∇ℓ_i − ∇L)(∇ℓ_i − ∇L)ᵀ and G the Fisher matrix of the model.
/// CapabilityError for models without an output Jacobian or with p > 10⁴.
double estimate_gamma(const models::Model& model, const ParamVector& theta);

enum class Label { STABLE, UNSTABLE, INDETERMINATE };
std::string to_string(Label l);
Label label_from_string(const std::string& s);

struct StabilityVerdict {
  double eta = 0.0;
  double rho = 0.0;
  double batch = 1.0;
  double gamma = 1.0;
  double frobenius_sq = 0.0;
  double bound_lhs = 0.0;  // ‖H‖_F² (1 + ρ²γ‖H‖_F²/B)
  double bound_rhs = 0.0;  // B / (η²γ)
  Label predicted = Label::STABLE;
  // Filled by classify_stability.
  std::optional<double> empirical_rate;
  std::optional<Label> empirical;
  double final_mean_loss = 0.0;
  bool overflow = false;
};

nlohmann::json to_json(const StabilityVerdict& v);
StabilityVerdict verdict_from_json(const nlohmann::json& j);

/// Predicted part of the verdict: UNSTABLE iff bound_lhs > bound_rhs.
StabilityVerdict sam_stability_bound(double eta, double rho, double batch, double gamma,
                                     double frobenius_sq);
/// Largest ‖H‖_F² satisfying the bound; B/(η²γ) when ρ = 0.
double sam_stability_threshold(double eta, double rho, double batch, double gamma);
/// Per-step lower bound on the mean-loss growth factor,
/// (η²γF/B)(1 + ρ²γF/B) with F = ‖H‖_F².
double escape_constant(double eta, double rho, double batch, double gamma, double frobenius_sq);

struct EscapeFit {
  double rate = 1.0;        // C = exp(slope)
  double slope = 0.0;       // least-squares slope of log L_t
  std::size_t window_begin = 0;
  std::size_t window_end = 0;  // one past the last fitted index
};

inline constexpr double kOverflowCap = 1e12;

/// Fit C from L_t over the escape window: the trace is cut before the first
/// entry that reaches kOverflowCap or is not finite, then the window is the
/// longest non-decreasing suffix of what remains (the whole remainder when
/// that suffix has fewer than two points). UsageError for traces shorter
/// than 8; NumericalError for non-positive values in the window.
EscapeFit fit_escape_rate(const std::vector<double>& trace);

/// One independent-batch SAM update on the linearized model with gradient
/// noise from the channel: g₁ = Gθ + ξ₁(θ), θ̃ = θ + ρ g₁,
/// θ' = θ − η (Gθ̃ + ξ₂(θ̃)), ξ₁ and ξ₂ independent.
ParamVector channel_sam_step(const models::QuadraticModel& model, const NoiseChannel& channel,
                             const ParamVector& theta, double eta, double rho, Rng& rng);

struct MonteCarloRun {
  /// mean_loss[t] = mean over trials of L(θ_t), t = 0..steps. +inf once a
  /// trial has exceeded the overflow cap.
  std::vector<double> mean_loss;
  /// Per-trial loss traces (trials × (steps+1)); kept only on request.
  std::vector<std::vector<double>> trial_loss;
  std::vector<std::uint64_t> trial_seeds;
  bool overflow = false;
};

/// Trials start at θ₀ = θ* + r·d with a seeded random unit direction d and r
/// chosen so L(θ₀) = L₀. Trial i uses the stream mix_seed(seed, i). A trial
/// whose loss reaches 1e100 stops and reports +inf thereafter.
MonteCarloRun simulate_channel_sam(const models::QuadraticModel& model,
                                   const NoiseChannel& channel, double eta, double rho,
                                   int trials, int steps, double initial_loss,
                                   std::uint64_t seed, bool keep_trials = false);

struct ClassifyOptions {
  int trials = 16;
  int horizon = 500;
  double initial_loss = 1e-6;
  std::uint64_t seed = 0;
};

/// Predicted and empirical verdicts for independent-batch SAM with the
/// channel. Empirical label: UNSTABLE when the horizon mean exceeds 10³·L₀
/// (or overflowed), STABLE below 10·L₀, INDETERMINATE in between. The
/// empirical rate is fit_escape_rate on the mean-loss curve.
StabilityVerdict classify_stability(const models::QuadraticModel& model,
                                    const optim::OptimizerConfig& optimizer,
                                    const NoiseChannel& channel, const ClassifyOptions& options);

struct EscapeRateEstimate {
  double rate = 1.0;        // from the ratio-product curve
  double sigma = 0.0;       // bootstrap standard deviation of rate
  double naive_rate = 1.0;  // fit on the plain mean-loss curve
  double predicted_lower = 1.0;
  std::vector<double> mean_loss;
  std::vector<double> ratio_curve;
  int trials = 0;
  int steps = 0;
};

/// Mean-loss growth of the channel dynamics started at L₀. The main
/// estimate fits the curve L₀·Π_s mean_i(L_{s+1,i}/L_{s,i}), which does not
/// let a few extreme trajectories dominate the way the plain mean does;
/// sigma comes from resampling trials (`bootstrap` replicates).
EscapeRateEstimate estimate_escape_rate(const models::QuadraticModel& model,
                                        const NoiseChannel& channel, double eta, double rho,
                                        int trials, int steps, double initial_loss,
                                        std::uint64_t seed, int bootstrap = 200);

struct LemmaB1Curves {
  std::vector<double> mean_norm_sq;  // E‖θ_t‖²
  std::vector<double> mean_loss;     // E L(θ_t)
  std::vector<double> sd_norm_sq;    // per-step sample standard deviation of ‖θ_t‖²
};

/// L(θ) = ½θ₁² from θ₀ = (1, 1): θ₁ stays put, θ₂ takes unit Gaussian steps.
LemmaB1Curves lemma_b1_demo(int steps, int trials, std::uint64_t seed);

}  // namespace samlab::noise
