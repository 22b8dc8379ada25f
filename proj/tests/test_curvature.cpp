#include "doctest.h"

#include "oracles.hpp"
#include "samlab/curvature.hpp"
#include "samlab/rng.hpp"

#include <cmath>
#include <memory>

using namespace samlab;
using namespace samlab::models;
using namespace samlab::curvature;

namespace {

ParamVector vec(std::initializer_list<double> xs) {
  ParamVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Toy objective without an exact Hessian so hvp takes the difference path.
class GradOnlyToy final : public Model {
 public:
  std::size_t dim() const override { return 2; }
  std::size_t sample_count() const override { return 1; }
  std::string name() const override { return "toy-grad-only"; }
  LossGrad loss_grad(const ParamVector& t, Batch) const override {
    const auto g = toy_grad(t[0], t[1]);
    return {toy_loss(t[0], t[1]), vec({g[0], g[1]})};
  }
};

const QuadraticModel kDiag = QuadraticModel::diagonal({3.0, 1.0, 0.5});

}  // namespace

TEST_CASE("hvp") {
  Rng rng(1);
  const ParamVector v = vec({0.3, -1.0, 2.0});
  CHECK(hvp(kDiag, vec({1, 2, 3}), v) == kDiag.curvature() * v);
  CHECK(hvp(kDiag, vec({1, 2, 3}), ParamVector::Zero(3)).isZero(0.0));

  GradOnlyToy fd_toy;
  const ParamVector at = vec({1.0, 0.2});
  const ParamVector e1 = vec({1.0, 0.0});
  const ParamVector exact = Matrix(toy_hessian(1.0, 0.2)) * e1;
  CHECK((hvp(fd_toy, at, e1) - exact).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(hvp(fd_toy, at, ParamVector::Zero(2)).isZero(0.0));

  // linearity
  const ParamVector u = vec({0.4, 0.9}), w = vec({-1.1, 0.3});
  const ParamVector lhs = hvp(fd_toy, at, 2.0 * u - 0.5 * w);
  const ParamVector rhs = 2.0 * hvp(fd_toy, at, u) - 0.5 * hvp(fd_toy, at, w);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-5);
  const ParamVector q = vec({1, -2, 0.5});
  CHECK((hvp(kDiag, at.head(1).replicate(3, 1), 2.0 * q - 0.5 * v) -
         (2.0 * hvp(kDiag, q, q) - 0.5 * hvp(kDiag, q, v))).cwiseAbs().maxCoeff() <= 1e-8);

  CHECK_THROWS_AS(hvp(kDiag, vec({1, 2}), v), UsageError);
}

TEST_CASE("spectral norm") {
  const auto r = spectral_norm(kDiag, ParamVector::Zero(3), 1e-6, 1000, 7);
  CHECK(r.converged);
  CHECK(std::abs(r.spectral_norm - 3.0) <= 1e-6);
  CHECK(r.residual <= 1e-6);

  ToyModel toy;
  // mpmath: tanh²(1)
  CHECK(std::abs(spectral_norm(toy, vec({1.0, 0.0})).spectral_norm - 0.580025658385973931) <= 1e-6);

  QuadraticModel zero(Matrix::Zero(3, 3));
  CHECK(spectral_norm(zero, ParamVector::Zero(3)).spectral_norm == 0.0);

  // non-convergence is reported, not hidden
  const auto slow = QuadraticModel::diagonal({1.0, 0.999999, 0.5});
  const auto capped = spectral_norm(slow, ParamVector::Zero(3), 1e-15, 3, 1);
  CHECK_FALSE(capped.converged);
  CHECK(capped.residual > 1e-15);
  CHECK(capped.power_iters == 6);

  CHECK_THROWS_AS(spectral_norm(kDiag, ParamVector::Zero(3), 0.0), ConfigError);
}

TEST_CASE("hutchinson estimators on known spectra") {
  CHECK(hutchinson_trace(kDiag, ParamVector::Zero(3), 10000, 3) == doctest::Approx(4.5).epsilon(0.02));
  CHECK(frobenius_sq(kDiag, ParamVector::Zero(3), 10000, 4) == doctest::Approx(10.25).epsilon(0.02));

  const auto one = QuadraticModel::diagonal({2.5});
  CHECK(hutchinson_trace(one, ParamVector::Zero(1), 1, 9) == 2.5);

  ToyModel toy;
  // mpmath: tanh²(2), tanh⁴(1)
  CHECK(hutchinson_trace(toy, vec({2.0, 0.0}), 100, 1) ==
        doctest::Approx(0.929349175146835534).epsilon(0.02));
  CHECK(frobenius_sq(toy, vec({1.0, 0.0}), 100, 1) ==
        doctest::Approx(0.336429764386082530).epsilon(0.02));

  QuadraticModel zero(Matrix::Zero(2, 2));
  CHECK(frobenius_sq(zero, ParamVector::Zero(2), 10, 1) == 0.0);
  CHECK_THROWS_AS(hutchinson_trace(toy, vec({0, 0}), 0, 1), ConfigError);
}

TEST_CASE("hutchinson estimators are unbiased") {
  Rng rng(77);
  Matrix a(5, 5);
  for (Eigen::Index i = 0; i < 25; ++i) a.data()[i] = rng.normal();
  const Matrix h = 0.5 * (a + a.transpose());
  const QuadraticModel dummy(Matrix::Identity(5, 5));
  // Indefinite matrices are not valid quadratic models, so wrap H directly.
  class Fixed final : public Model {
   public:
    explicit Fixed(Matrix m) : m_(std::move(m)) {}
    std::size_t dim() const override { return 5; }
    std::size_t sample_count() const override { return 1; }
    std::string name() const override { return "fixed"; }
    LossGrad loss_grad(const ParamVector& t, Batch) const override {
      return {0.5 * t.dot(m_ * t), m_ * t};
    }
    std::optional<Matrix> hessian(const ParamVector&) const override { return m_; }

   private:
    Matrix m_;
  } fixed(h);

  const int probes = 100000;
  // Var(zᵀHz) = 2 Σ_{i≠j} H_ij² for Rademacher z
  double off = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      if (i != j) off += h(i, j) * h(i, j);
  const double sigma = std::sqrt(2.0 * off / probes);
  CHECK(std::abs(hutchinson_trace(fixed, ParamVector::Zero(5), probes, 5) - h.trace()) <= 3.0 * sigma);

  // ‖Hz‖² = Σ_i (Σ_j H_ij z_j)²; its variance computed by brute-force over all 32 sign patterns
  double mean = 0.0, sq = 0.0;
  for (int mask = 0; mask < 32; ++mask) {
    ParamVector z(5);
    for (int k = 0; k < 5; ++k) z[k] = (mask >> k & 1) ? 1.0 : -1.0;
    const double v = (h * z).squaredNorm();
    mean += v / 32.0;
    sq += v * v / 32.0;
  }
  CHECK(mean == doctest::Approx(h.squaredNorm()).epsilon(1e-12));
  const double sigma_f = std::sqrt((sq - mean * mean) / probes);
  CHECK(std::abs(frobenius_sq(fixed, ParamVector::Zero(5), probes, 6) - h.squaredNorm()) <=
        3.0 * sigma_f);
}

TEST_CASE("spectral norm never exceeds the Frobenius estimate") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) a.data()[i] = rng.normal();
    QuadraticModel q(a * a.transpose());
    const auto r = read_sharpness(q, ParamVector::Zero(4), 2000, rng.next_u64());
    // 3σ of the ‖Hz‖² estimator is well under 10% of Tr(H²) at 2000 probes
    CHECK(r.spectral_norm <= std::sqrt(r.frobenius_sq * 1.1));
    CHECK(r.frobenius_sq >= r.spectral_norm * r.spectral_norm * 0.9);
  }
}

TEST_CASE("fisher matrix") {
  ToyModel toy;
  const Matrix g = fisher_matrix(toy, vec({1.3, 0.0}));
  const double t = std::tanh(1.3);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(1, 1) == doctest::Approx(t * t).epsilon(1e-15));

  class Linear final : public Model {
   public:
    std::size_t dim() const override { return 3; }
    std::size_t sample_count() const override { return 1; }
    std::string name() const override { return "linear"; }
    LossGrad loss_grad(const ParamVector& t, Batch) const override {
      return {0.5 * t[0] * t[0], vec({t[0], 0, 0})};
    }
    std::optional<Matrix> output_jacobian(const ParamVector&) const override {
      Matrix j = Matrix::Zero(1, 3);
      j(0, 0) = 1.0;
      return j;
    }
  } lin;
  Matrix e = Matrix::Zero(3, 3);
  e(0, 0) = 1.0;
  CHECK(fisher_matrix(lin, ParamVector::Zero(3)) == e);

  auto data = std::make_shared<SyntheticDataset>(make_synthetic_dataset(5, 20, 3, 4));
  MlpModel mlp(4, data);
  const ParamVector star = data->teacher.weights;
  const Matrix fisher = fisher_matrix(mlp, star);
  const oracle::Fn f = [&](const ParamVector& x) { return mlp.full_loss(x); };
  const Matrix h = oracle::fd_hessian(f, star);
  CHECK((fisher - h).norm() <= 1e-4 * fisher.norm());

  QuadraticModel q(Matrix::Identity(2, 2));
  CHECK_THROWS_AS(fisher_matrix(q, ParamVector::Zero(2)), CapabilityError);
}

TEST_CASE("interpolation probe") {
  ToyModel toy;
  const ParamVector a = vec({0.5, 0.0}), b = vec({2.0, 0.0});

  const auto same = interpolation_probe(toy, vec({0.7, 0.3}), vec({0.7, 0.3}));
  for (std::size_t i = 0; i < same.lambdas.size(); ++i) {
    CHECK(same.losses[i] == same.losses[0]);
    CHECK(same.second_diffs[i] == 0.0);
  }
  CHECK(same.barrier() == 0.0);

  const auto p = interpolation_probe(toy, a, b);
  CHECK(p.lambdas.size() == 61);
  CHECK(p.lambdas.front() == -0.25);
  CHECK(p.lambdas.back() == 1.25);
  CHECK(p.h == 0.1);
  CHECK(p.barrier() == 0.0);
  for (std::size_t i = 1; i < p.second_diffs.size(); ++i) CHECK(p.second_diffs[i] >= p.second_diffs[i - 1]);

  // endpoints reproduce direct evaluations bit-exactly
  const ParamVector c = vec({1.1, 0.02}), d = vec({1.9, 1e-4});
  const auto e = interpolation_probe(toy, c, d);
  CHECK(e.losses[e.index_of(0.0)] == toy.full_loss(c));
  CHECK(e.losses[e.index_of(1.0)] == toy.full_loss(d));

  // flat direction of a degenerate quadratic
  QuadraticModel flat(Matrix(vec({1.0, 0.0}).asDiagonal()));
  const auto f = interpolation_probe(flat, vec({0.0, -3.0}), vec({0.0, 5.0}));
  for (double l : f.losses) CHECK(l == 0.0);

  // one endpoint in M, the other in N: the path leaves the minimum sets
  const auto cross = interpolation_probe(toy, vec({1.5, 0.0}), vec({0.0, 1.5}));
  // closed form at λ = 1/2: ½ tanh²(0.75 tanh 0.75)
  CHECK(cross.losses[cross.index_of(0.5)] ==
        doctest::Approx(0.5 * std::pow(std::tanh(0.75 * std::tanh(0.75)), 2)).epsilon(1e-14));
  CHECK(cross.barrier() > 0.0);

  CHECK_THROWS_AS(interpolation_probe(toy, a, b, 41), ConfigError);
  CHECK_THROWS_AS(interpolation_probe(toy, a, vec({1.0})), UsageError);
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 100}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
  // ties: ranks x = 0,1,2,3 and y = 0.5,0.5,2,3
  CHECK(spearman({1, 2, 3, 4}, {1, 1, 2, 3}) == doctest::Approx(0.9486832980505138).epsilon(1e-12));
}

TEST_CASE("serialization") {
  ToyModel toy;
  const auto p = interpolation_probe(toy, vec({0.5, 0.01}), vec({2.0, 0.0}));
  const auto t = to_csv(p);
  CHECK(t.header == std::vector<std::string>{"lambda", "loss", "second_diff"});
  CHECK(t.rows.size() == 61);
  CHECK(t.number(10, 0) == 0.0);

  SharpnessReading r{1.5, 2.5, 3.5, 10, 4, 1e-9, true};
  const auto back = sharpness_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.spectral_norm == r.spectral_norm);
  CHECK(back.residual == r.residual);
  CHECK(back.power_iters == r.power_iters);
  CHECK(to_csv(std::vector<SharpnessReading>{r}).rows.size() == 1);
}
