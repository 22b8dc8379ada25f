#include "doctest.h"

#include "samlab/optimizers.hpp"

#include <cmath>
#include <memory>
#include <set>

using namespace samlab;
using namespace samlab::models;
using namespace samlab::optim;

namespace {

ParamVector vec(std::initializer_list<double> xs) {
  ParamVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

std::shared_ptr<SyntheticDataset> small_data() {
  return std::make_shared<SyntheticDataset>(make_synthetic_dataset(12, 48, 4, 3));
}

OptimizerConfig cfg(Family f, double lr, double rho, std::size_t b) {
  OptimizerConfig c;
  c.family = f;
  c.lr = lr;
  c.rho = rho;
  c.batch_size = b;
  return c;
}

}  // namespace

TEST_CASE("single steps on a 1D quadratic") {
  const auto q = QuadraticModel::diagonal({1.0});
  const auto b = full_batch(1);
  CHECK(sgd_step(q, vec({1.0}), b, 0.1)[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(sgd_step(q, vec({0.0}), b, 0.1)[0] == 0.0);
  CHECK(usam_step(q, vec({1.0}), b, 0.5, 0.05)[0] == doctest::Approx(0.475).epsilon(1e-15));
  CHECK(sam_step(q, vec({1.0}), b, 0.5, 0.05)[0] == doctest::Approx(0.475).epsilon(1e-15));

  // closed forms: USAM θ(1 − ηa(1+aρ)); SAM θ − ηa(θ + ρ sign θ)
  const auto q3 = QuadraticModel::diagonal({3.0});
  for (double th : {-2.0, -0.3, 0.7, 4.0}) {
    CHECK(usam_step(q3, vec({th}), b, 0.2, 0.1)[0] ==
          doctest::Approx(th * (1 - 0.2 * 3 * (1 + 3 * 0.1))).epsilon(1e-14));
    CHECK(sam_step(q3, vec({th}), b, 0.2, 0.1)[0] ==
          doctest::Approx(th - 0.2 * 3 * (th + 0.1 * (th > 0 ? 1 : -1))).epsilon(1e-14));
  }
}

TEST_CASE("rho = 0 reduces every variant to SGD bit-exactly") {
  auto data = small_data();
  MlpModel m(6, data);
  const ParamVector th = mlp_random_init(m.shape(), 1.0, 3);
  std::vector<std::size_t> b{1, 5, 9, 30, 47};
  const ParamVector s = sgd_step(m, th, b, 0.3);
  CHECK(sam_step(m, th, b, 0.3, 0.0) == s);
  CHECK(usam_step(m, th, b, 0.3, 0.0) == s);
  std::vector<std::size_t> other{2, 3};
  CHECK(sam_step_independent(m, th, other, b, 0.3, 0.0) == s);
  const auto all = full_batch(48);
  CHECK(sam_step_independent(m, th, all, all, 0.3, 0.07) == usam_step(m, th, all, 0.3, 0.07));
}

TEST_CASE("unit gradient makes SAM and USAM coincide") {
  // L = ½‖θ‖² at ‖θ‖ = 1
  QuadraticModel q(Matrix::Identity(2, 2));
  const auto b = full_batch(1);
  const ParamVector th = vec({0.6, 0.8});
  CHECK((sam_step(q, th, b, 0.4, 0.05) - usam_step(q, th, b, 0.4, 0.05)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("SAM at a stationary point skips the perturbation") {
  const auto q = QuadraticModel::diagonal({2.0});
  const auto b = full_batch(1);
  const auto d = sam_direction(q, vec({0.0}), b, 0.05);
  CHECK(d.perturbation_skipped);
  CHECK(d.grad[0] == 0.0);
  CHECK(sam_step(q, vec({0.0}), b, 0.1, 0.05)[0] == 0.0);
}

TEST_CASE("divergence is reported") {
  const auto q = QuadraticModel::diagonal({1.0});
  const auto b = full_batch(1);
  CHECK_THROWS_AS(sgd_step(q, vec({1e308}), b, 10.0), DivergenceError);

  SwitchSchedule s{100000, 100000, cfg(Family::SGD, 3.0, 0, kFullBatch), cfg(Family::SGD, 3.0, 0, kFullBatch)};
  const auto rec = run_schedule(q, vec({1.0}), s, 1);
  CHECK(rec.diverged);
  CHECK(rec.divergence_step > 0);
  CHECK(rec.size() == static_cast<std::size_t>(rec.divergence_step));
}

TEST_CASE("USAM threshold on the quadratic") {
  const auto q = QuadraticModel::diagonal({1.0});
  const auto b = full_batch(1);
  const double rho = 0.05;
  const double edge = 2.0 / (1.0 + rho);
  ParamVector th = vec({0.3});
  for (int i = 0; i < 1000; ++i) {
    th = usam_step(q, th, b, edge, rho);
    CHECK(std::abs(std::abs(th[0]) - 0.3) <= 1e-12);
  }
  ParamVector lo = vec({0.3}), hi = vec({0.3});
  for (int i = 0; i < 2000; ++i) {
    lo = usam_step(q, lo, b, 1.90, rho);
    hi = usam_step(q, hi, b, 1.91, rho);
  }
  CHECK(std::abs(lo[0]) < 0.3);
  CHECK(std::abs(hi[0]) > 0.3);
}

TEST_CASE("batch sampler") {
  BatchSampler s(10, 3, 4);
  CHECK(s.steps_per_epoch() == 3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 3; ++i) {
    const Batch b = s.next();
    CHECK(s.epoch() == 0);
    CHECK(b.size() == 3);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 9);
  s.next();
  CHECK(s.epoch() == 1);

  BatchSampler f(5, kFullBatch, 1);
  const Batch b = f.next();
  CHECK(std::vector<std::size_t>(b.begin(), b.end()) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  f.next();
  CHECK(f.epoch() == 1);

  BatchSampler x(10, 3, 4), y(10, 3, 4);
  for (int i = 0; i < 20; ++i) {
    const Batch bx = x.next();
    const Batch by = y.next();
    CHECK(std::equal(bx.begin(), bx.end(), by.begin()));
  }
}

TEST_CASE("switch schedules") {
  auto data = small_data();
  MlpModel m(6, data);
  const ParamVector th0 = mlp_random_init(m.shape(), 1.0, 3);
  const auto sgd = cfg(Family::SGD, 0.2, 0.0, 8);
  const auto sam = cfg(Family::SAM, 0.2, 0.05, 8);
  const long T = 60;

  const auto pure_sgd = run_schedule(m, th0, {T, T, sgd, sgd}, 9);
  const auto pure_sam = run_schedule(m, th0, {T, T, sam, sam}, 9);
  const auto t_is_T = run_schedule(m, th0, {T, T, sgd, sam}, 9);
  const auto t_is_0 = run_schedule(m, th0, {T, 0, sgd, sam}, 9);
  CHECK(t_is_T.final_theta == pure_sgd.final_theta);
  CHECK(t_is_T.loss == pure_sgd.loss);
  CHECK(t_is_0.final_theta == pure_sam.final_theta);

  const auto s20 = run_schedule(m, th0, {T, 20, sgd, sam}, 9);
  const auto s40 = run_schedule(m, th0, {T, 40, sgd, sam}, 9);
  for (int t = 0; t <= 20; ++t) CHECK(s20.loss[t] == s40.loss[t]);
  CHECK(s20.loss[21] != s40.loss[21]);
  CHECK(s20.family[19] == Family::SGD);
  CHECK(s20.family[20] == Family::SAM);
  CHECK(s20.epoch[6] == 1);  // 48/8 = 6 steps per epoch

  const auto again = run_schedule(m, th0, {T, 20, sgd, sam}, 9);
  CHECK(again.loss == s20.loss);
  CHECK(again.final_theta == s20.final_theta);

  CHECK_THROWS_AS(run_schedule(m, th0, {T, T + 1, sgd, sam}, 9), ConfigError);
  auto bad = sam;
  bad.batch_size = 4;
  CHECK_THROWS_AS(run_schedule(m, th0, {T, 5, sgd, bad}, 9), ConfigError);
  bad = sgd;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("probes, snapshots and CSV") {
  ToyModel toy;
  const auto sgd = cfg(Family::SGD, 0.5, 0.0, kFullBatch);
  RunOptions opts;
  opts.probes.push_back({"u", 2, [](const ParamVector& t) { return t[0]; }});
  opts.snapshot_every = 5;
  const auto rec = run_schedule(toy, vec({1.0, 0.5}), {10, 10, sgd, sgd}, 1, opts);
  CHECK(rec.probes.at("u")[0] == 1.0);
  CHECK(std::isnan(rec.probes.at("u")[1]));
  CHECK(rec.snapshots.size() == 3);
  CHECK(rec.snapshots.back().first == 10);
  CHECK(rec.snapshots.back().second == rec.final_theta);
  const auto t = rec.to_csv();
  CHECK(t.header == std::vector<std::string>{"step", "epoch", "loss", "grad_norm", "optimizer_family", "u"});
  CHECK(t.rows.size() == 10);
  CHECK(t.rows[3][4] == "SGD");
}

TEST_CASE("momentum and weight decay default off") {
  auto data = small_data();
  MlpModel m(6, data);
  const ParamVector th0 = mlp_random_init(m.shape(), 1.0, 3);
  auto sgd = cfg(Family::SGD, 0.1, 0.0, 8);
  const auto plain = run_schedule(m, th0, {5, 5, sgd, sgd}, 2);
  ParamVector manual = th0;
  BatchSampler s(48, 8, 2);
  for (int i = 0; i < 5; ++i) manual = sgd_step(m, manual, s.next(), 0.1);
  CHECK(plain.final_theta == manual);

  sgd.momentum = 0.9;
  const auto mom = run_schedule(m, th0, {5, 5, sgd, sgd}, 2);
  CHECK(mom.final_theta != plain.final_theta);
}

TEST_CASE("config json round trip") {
  SwitchSchedule s{100, 30, cfg(Family::SGD, 0.2, 0, 16), cfg(Family::SAM_INDEP, 0.2, 0.05, 16)};
  const auto back = schedule_from_json(nlohmann::json::parse(to_json(s).dump()));
  CHECK(back.total_steps == 100);
  CHECK(back.after.family == Family::SAM_INDEP);
  CHECK(back.after.rho == 0.05);
  CHECK(family_from_string("usam") == Family::USAM);
  CHECK_THROWS_AS(family_from_string("adam"), ConfigError);
}
