#pragma once

#include "samlab/core.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace samlab::models {

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// A differentiable training objective L(θ) = (1/n) Σ ℓ_i(θ).
///
/// Implementations are immutable after construction and every method is a
/// pure function of its arguments, so one instance can be shared between
/// concurrently running trials.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::size_t dim() const = 0;
  /// Number of training samples n. Batches index into [0, n).
  virtual std::size_t sample_count() const = 0;
  virtual std::string name() const = 0;

  /// Mean loss and mean gradient over the batch.
  /// Throws UsageError for an empty batch or an out-of-range index and
  /// ConfigError when θ has the wrong dimension.
  virtual LossGrad loss_grad(const ParamVector& theta, Batch batch) const = 0;
  virtual double loss(const ParamVector& theta, Batch batch) const {
    return loss_grad(theta, batch).loss;
  }

  LossGrad full_loss_grad(const ParamVector& theta) const;
  double full_loss(const ParamVector& theta) const;

  /// Exact Hessian of the full-batch loss, when the model can provide one.
  virtual std::optional<Matrix> hessian(const ParamVector&) const { return std::nullopt; }
  /// Rows are per-sample output gradients ∇f(x_i; θ) (n × p), when available.
  virtual std::optional<Matrix> output_jacobian(const ParamVector&) const {
    return std::nullopt;
  }

 protected:
  void check_theta(const ParamVector& theta) const;
  void check_batch(Batch batch) const;
};

// ---------------------------------------------------------------------------
// Two-parameter toy: f(u, v; x) = tanh(v tanh(u x)) fit to the single sample
// (x = 1, y = 0), so L(u, v) = ½ tanh²(v tanh u). Both axes are minimum sets:
// M = {v = 0} and N = {u = 0}. On M the sharpness is tanh²(u).

double toy_loss(double u, double v);
std::array<double, 2> toy_grad(double u, double v);
Eigen::Matrix2d toy_hessian(double u, double v);

class ToyModel final : public Model {
 public:
  std::size_t dim() const override { return 2; }
  std::size_t sample_count() const override { return 1; }
  std::string name() const override { return "toy"; }
  LossGrad loss_grad(const ParamVector& theta, Batch batch) const override;
  std::optional<Matrix> hessian(const ParamVector& theta) const override;
  std::optional<Matrix> output_jacobian(const ParamVector& theta) const override;
};

// ---------------------------------------------------------------------------
// Linearized model around a global minimum: L(θ) = ½ (θ−θ*)ᵀ G (θ−θ*).

class QuadraticModel final : public Model {
 public:
  /// G must be symmetric PSD (checked, ConfigError otherwise).
  QuadraticModel(Matrix hessian, ParamVector minimum);
  explicit QuadraticModel(Matrix hessian);
  static QuadraticModel diagonal(const std::vector<double>& curvatures);

  std::size_t dim() const override { return static_cast<std::size_t>(g_.rows()); }
  std::size_t sample_count() const override { return 1; }
  std::string name() const override { return "quadratic"; }
  LossGrad loss_grad(const ParamVector& theta, Batch batch) const override;
  std::optional<Matrix> hessian(const ParamVector&) const override { return g_; }

  const Matrix& curvature() const { return g_; }
  const ParamVector& minimum() const { return minimum_; }
  /// Squared Frobenius norm of G.
  double frobenius_sq() const { return g_.squaredNorm(); }

 private:
  Matrix g_;
  ParamVector minimum_;
};

/// (½(θ−θ*)ᵀG(θ−θ*), G(θ−θ*)); ConfigError on dimension mismatch.
LossGrad quadratic_loss_grad(const QuadraticModel& model, const ParamVector& theta);

// ---------------------------------------------------------------------------
// Teacher-student regression data and a one-hidden-layer tanh MLP.

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Parameter layout of a d → h → 1 tanh network, layer-major and row-major
/// within layers: W1 (h×d), b1 (h), w2 (h), b2 (1).
struct MlpShape {
  std::size_t input = 1;
  std::size_t hidden = 1;

  std::size_t param_count() const { return hidden * input + 2 * hidden + 1; }
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return hidden * input; }
  std::size_t w2_offset() const { return hidden * input + hidden; }
  std::size_t b2_offset() const { return hidden * input + 2 * hidden; }
};

/// Network outputs for every row of x.
Eigen::VectorXd mlp_forward(const MlpShape& shape, const ParamVector& theta,
                            const RowMatrix& x);

/// Random weights: W1 ~ N(0, s²/d), b1 ~ N(0, s²), w2 ~ N(0, s²/h), b2 ~ N(0, s²).
ParamVector mlp_random_init(const MlpShape& shape, double scale, std::uint64_t seed);

struct TeacherSpec {
  MlpShape shape;
  ParamVector weights;
};

struct SyntheticDataset {
  RowMatrix inputs;         // n × d
  Eigen::VectorXd targets;  // n
  std::uint64_t seed = 0;
  TeacherSpec teacher;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs.cols()); }
};

/// Inputs i.i.d. N(0, 1); targets from a random tanh teacher with
/// teacher_hidden units (unit-scale init). Deterministic in seed.
SyntheticDataset make_synthetic_dataset(std::uint64_t seed, std::size_t n, std::size_t d,
                                        std::size_t teacher_hidden);
/// Fresh inputs labelled by the same teacher (held-out evaluation set).
SyntheticDataset make_heldout(const SyntheticDataset& train, std::size_t n,
                              std::uint64_t seed);

/// Columnar CSV (x_0..x_{d-1},y) plus a JSON sidecar with seed and teacher.
void export_dataset(const SyntheticDataset& data, const std::filesystem::path& csv_path,
                    const std::filesystem::path& json_path);
SyntheticDataset import_dataset(const std::filesystem::path& csv_path,
                                const std::filesystem::path& json_path);

class MlpModel final : public Model {
 public:
  MlpModel(std::size_t hidden, std::shared_ptr<const SyntheticDataset> data);

  std::size_t dim() const override { return shape_.param_count(); }
  std::size_t sample_count() const override { return data_->size(); }
  std::string name() const override { return "mlp"; }
  LossGrad loss_grad(const ParamVector& theta, Batch batch) const override;
  double loss(const ParamVector& theta, Batch batch) const override;
  std::optional<Matrix> output_jacobian(const ParamVector& theta) const override;

  const MlpShape& shape() const { return shape_; }
  const SyntheticDataset& data() const { return *data_; }
  /// Mean squared loss ½(f−y)² on another dataset (e.g. held-out).
  double loss_on(const ParamVector& theta, const SyntheticDataset& other) const;

 private:
  MlpShape shape_;
  std::shared_ptr<const SyntheticDataset> data_;
};

}  // namespace samlab::models
