#include "doctest.h"

#include "oracles.hpp"
#include "samlab/models.hpp"
#include "samlab/rng.hpp"

#include <cmath>
#include <filesystem>
#include <memory>

using namespace samlab;
using namespace samlab::models;

namespace {

ParamVector vec(std::initializer_list<double> xs) {
  ParamVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

ParamVector random_vector(Rng& rng, Eigen::Index n, double scale) {
  ParamVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("toy loss on the minimum sets") {
  CHECK(toy_loss(5.0, 0.0) == 0.0);
  CHECK(toy_loss(0.0, 7.3) == 0.0);
  // mpmath, 30 digits
  CHECK(toy_loss(1.0, 1.0) == doctest::Approx(0.206091624984084094).epsilon(1e-15));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double l = toy_loss(rng.uniform(-10, 10), rng.uniform(-10, 10));
    CHECK(l >= 0.0);
    CHECK(l < 0.5);
  }
}

TEST_CASE("toy gradient") {
  for (double u : {-3.0, 0.0, 0.4, 2.0}) {
    const auto g = toy_grad(u, 0.0);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
  }
  const oracle::Fn f = [](const ParamVector& x) { return toy_loss(x[0], x[1]); };
  const auto g = toy_grad(1.0, 1.0);
  CHECK(oracle::rel_err(vec({g[0], g[1]}), oracle::fd_gradient(f, vec({1.0, 1.0}))) <= 1e-6);
}

TEST_CASE("toy hessian") {
  // mpmath: tanh²(1)
  const Eigen::Matrix2d h = toy_hessian(1.0, 0.0);
  CHECK(h(0, 0) == 0.0);
  CHECK(h(0, 1) == 0.0);
  CHECK(h(1, 1) == doctest::Approx(0.580025658385973931).epsilon(1e-14));
  CHECK(toy_hessian(0.0, 0.0).isZero(0.0));

  const oracle::Fn f = [](const ParamVector& x) { return toy_loss(x[0], x[1]); };
  const Matrix fd = oracle::fd_hessian(f, vec({0.7, 0.3}));
  CHECK((Matrix(toy_hessian(0.7, 0.3)) - fd).cwiseAbs().maxCoeff() <= 1e-6);

  // largest eigenvalue on M equals tanh²(u); references from mpmath
  const double ref[] = {0.00993370915256022, 0.213552267034072590, 0.580025658385973931,
                        0.929349175146835534};
  const double us[] = {0.1, 0.5, 1.0, 2.0};
  for (int i = 0; i < 4; ++i) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(toy_hessian(us[i], 0.0));
    CHECK(std::abs(eig.eigenvalues().maxCoeff() - ref[i]) <= 1e-12);
  }
}

TEST_CASE("toy model wraps the closed forms") {
  ToyModel m;
  const auto b = full_batch(1);
  const auto lg = m.loss_grad(vec({0.3, -1.2}), b);
  CHECK(lg.loss == toy_loss(0.3, -1.2));
  CHECK(lg.grad[1] == toy_grad(0.3, -1.2)[1]);
  CHECK_THROWS_AS(m.loss_grad(vec({1.0}), b), ConfigError);
  std::vector<std::size_t> bad{1};
  CHECK_THROWS_AS(m.loss_grad(vec({1.0, 1.0}), bad), UsageError);
  CHECK_THROWS_AS(m.loss_grad(vec({1.0, 1.0}), Batch{}), UsageError);

  // output gradient vs finite differences of f = tanh(v tanh u)
  const oracle::Fn f = [](const ParamVector& x) { return std::tanh(x[1] * std::tanh(x[0])); };
  const auto j = m.output_jacobian(vec({0.8, 0.6}));
  REQUIRE(j.has_value());
  CHECK(oracle::rel_err(j->row(0).transpose(), oracle::fd_gradient(f, vec({0.8, 0.6}))) <= 1e-8);
}

TEST_CASE("quadratic model") {
  const QuadraticModel q1 = QuadraticModel::diagonal({2.0});
  auto r = quadratic_loss_grad(q1, vec({3.0}));
  CHECK(r.loss == 9.0);
  CHECK(r.grad[0] == 6.0);

  Rng rng(11);
  Matrix a(4, 4);
  for (Eigen::Index i = 0; i < 16; ++i) a.data()[i] = rng.normal();
  const Matrix g = a * a.transpose();
  const ParamVector star = random_vector(rng, 4, 1.0);
  const QuadraticModel q(g, star);
  r = quadratic_loss_grad(q, star);
  CHECK(r.loss == 0.0);
  CHECK(r.grad.isZero(0.0));

  const oracle::Fn f = [&](const ParamVector& x) { return quadratic_loss_grad(q, x).loss; };
  const ParamVector x = random_vector(rng, 4, 1.0);
  CHECK(oracle::rel_err(quadratic_loss_grad(q, x).grad, oracle::fd_gradient(f, x)) <= 1e-8);

  const ParamVector v = random_vector(rng, 4, 1.0);
  const double base = quadratic_loss_grad(q, star + v).loss;
  for (double t : {0.0, 1.0, -1.0, 2.0, -2.0}) {
    CHECK(quadratic_loss_grad(q, star + t * v).loss ==
          doctest::Approx(t * t * base).epsilon(1e-13));
  }

  CHECK_THROWS_AS(quadratic_loss_grad(q, vec({1.0})), ConfigError);
  Matrix nonsym = Matrix::Identity(2, 2);
  nonsym(0, 1) = 0.5;
  CHECK_THROWS_AS(QuadraticModel{nonsym}, ConfigError);
  CHECK_THROWS_AS(QuadraticModel::diagonal({1.0, -0.5}), ConfigError);
}

TEST_CASE("synthetic dataset is deterministic") {
  const auto a = make_synthetic_dataset(1, 64, 5, 4);
  const auto b = make_synthetic_dataset(1, 64, 5, 4);
  const auto c = make_synthetic_dataset(2, 64, 5, 4);
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(a.teacher.weights == b.teacher.weights);
  CHECK(a.inputs != c.inputs);
  CHECK_THROWS_AS(make_synthetic_dataset(1, 0, 5, 4), ConfigError);
}

TEST_CASE("teacher weights interpolate the data") {
  auto data = std::make_shared<SyntheticDataset>(make_synthetic_dataset(1, 512, 10, 8));
  MlpModel student(8, data);
  const auto lg = student.full_loss_grad(data->teacher.weights);
  CHECK(lg.loss == 0.0);
  CHECK(lg.grad.isZero(0.0));
}

TEST_CASE("mlp gradient and batching") {
  auto data = std::make_shared<SyntheticDataset>(make_synthetic_dataset(7, 40, 3, 2));
  MlpModel m(5, data);
  Rng rng(5);
  const ParamVector theta = mlp_random_init(m.shape(), 1.0, 9);

  // full batch equals mean of per-sample losses
  double acc = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<std::size_t> one{i};
    acc += m.loss(theta, one);
  }
  CHECK(m.full_loss(theta) == doctest::Approx(acc / 40.0).epsilon(1e-13));
  CHECK(m.full_loss(theta) == doctest::Approx(m.full_loss_grad(theta).loss).epsilon(1e-14));

  std::vector<std::size_t> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(rng.below(40));
  const oracle::Fn f = [&](const ParamVector& x) { return m.loss(x, batch); };
  CHECK(oracle::rel_err(m.loss_grad(theta, batch).grad, oracle::fd_gradient(f, theta)) <= 1e-5);

  CHECK_THROWS_AS(m.loss_grad(theta, Batch{}), UsageError);
  std::vector<std::size_t> oob{40};
  CHECK_THROWS_AS(m.loss_grad(theta, oob), UsageError);
}

TEST_CASE("mlp output jacobian") {
  auto data = std::make_shared<SyntheticDataset>(make_synthetic_dataset(3, 6, 3, 2));
  MlpModel m(4, data);
  const ParamVector theta = mlp_random_init(m.shape(), 1.0, 1);
  const auto j = m.output_jacobian(theta);
  REQUIRE(j.has_value());
  for (Eigen::Index i = 0; i < 6; ++i) {
    const RowMatrix xi = data->inputs.row(i);
    const oracle::Fn f = [&](const ParamVector& x) { return mlp_forward(m.shape(), x, xi)[0]; };
    CHECK(oracle::rel_err(j->row(i).transpose(), oracle::fd_gradient(f, theta)) <= 1e-7);
  }
}

TEST_CASE("dataset export round-trips") {
  const auto a = make_synthetic_dataset(4, 10, 3, 2);
  const auto dir = std::filesystem::temp_directory_path() / "samlab_test_dataset";
  std::filesystem::create_directories(dir);
  export_dataset(a, dir / "d.csv", dir / "d.json");
  const auto b = import_dataset(dir / "d.csv", dir / "d.json");
  CHECK(a.inputs == b.inputs);
  CHECK(a.targets == b.targets);
  CHECK(a.teacher.weights == b.teacher.weights);
  CHECK(a.seed == b.seed);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient fidelity sweep") {
  Rng rng(2024);
  ToyModel toy;
  auto data = std::make_shared<SyntheticDataset>(make_synthetic_dataset(8, 30, 4, 3));
  MlpModel mlp(6, data);
  Matrix a(3, 3);
  for (Eigen::Index i = 0; i < 9; ++i) a.data()[i] = rng.normal();
  QuadraticModel quad(a * a.transpose(), random_vector(rng, 3, 1.0));

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVector t = random_vector(rng, 2, 1.5);
    const auto b = full_batch(1);
    const oracle::Fn f = [&](const ParamVector& x) { return toy.loss(x, b); };
    worst = std::max(worst, oracle::rel_err(toy.loss_grad(t, b).grad, oracle::fd_gradient(f, t)));

    const ParamVector tq = random_vector(rng, 3, 1.0);
    const oracle::Fn fq = [&](const ParamVector& x) { return quad.loss(x, b); };
    worst = std::max(worst, oracle::rel_err(quad.loss_grad(tq, b).grad, oracle::fd_gradient(fq, tq)));

    const ParamVector tm = mlp_random_init(mlp.shape(), 1.0, rng.next_u64());
    std::vector<std::size_t> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(rng.below(30));
    const oracle::Fn fm = [&](const ParamVector& x) { return mlp.loss(x, batch); };
    worst = std::max(worst, oracle::rel_err(mlp.loss_grad(tm, batch).grad, oracle::fd_gradient(fm, tm)));
  }
  CHECK(worst <= 1e-5);
}
