#include "samlab/curvature.hpp"

#include "samlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace samlab::curvature {

namespace {

std::string theta_diagnostics(const ParamVector& theta) {
  return "dim=" + std::to_string(theta.size()) + " |theta|=" + io::fmt(theta.norm()) +
         " finite=" + (theta.allFinite() ? "yes" : "no");
}

void check_same_dim(const ParamVector& a, const ParamVector& b, const char* what) {
  if (a.size() != b.size()) {
    throw UsageError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
}

ParamVector rademacher_vector(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  ParamVector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.rademacher();
  return z;
}

struct PowerRun {
  double lambda = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  int iters = 0;
  bool converged = false;
};

PowerRun power_iterate(const models::Model& model, const ParamVector& theta, double tol,
                       int max_iters, std::uint64_t seed) {
  Rng rng(seed);
  ParamVector v(theta.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v.normalize();

  PowerRun run;
  double prev = 0.0;
  for (int k = 1; k <= max_iters; ++k) {
    const ParamVector w = hvp(model, theta, v);
    const double lambda = v.dot(w);
    const double wn = w.norm();
    run.iters = k;
    run.lambda = lambda;
    if (wn == 0.0) {
      run.residual = 0.0;
      run.converged = true;
      return run;
    }
    if (k > 1) {
      run.residual = std::abs(lambda - prev) / std::max(1.0, std::abs(lambda));
      if (run.residual <= tol) {
        run.converged = true;
        return run;
      }
    }
    prev = lambda;
    v = w / wn;
  }
  return run;
}

}  // namespace

ParamVector hvp(const models::Model& model, const ParamVector& theta, const ParamVector& v) {
  check_same_dim(theta, v, "hvp");
  ParamVector out;
  if (auto h = model.hessian(theta)) {
    out = *h * v;
  } else {
    const double vn = v.norm();
    if (vn == 0.0) return ParamVector::Zero(v.size());
    const double step = 1e-4 / std::max(1.0, vn);
    const ParamVector gp = model.full_loss_grad(theta + step * v).grad;
    const ParamVector gm = model.full_loss_grad(theta - step * v).grad;
    out = (gp - gm) / (2.0 * step);
  }
  if (!out.allFinite()) {
    throw NumericalError("hvp: non-finite Hessian-vector product at " + theta_diagnostics(theta));
  }
  return out;
}

SharpnessReading spectral_norm(const models::Model& model, const ParamVector& theta, double tol,
                               int max_iters, std::uint64_t seed) {
  if (!(tol > 0.0)) throw ConfigError("spectral_norm: tol must be > 0");
  if (max_iters < 2) throw ConfigError("spectral_norm: max_iters must be >= 2");
  PowerRun run = power_iterate(model, theta, tol, max_iters, mix_seed(seed, 0));
  int iters = run.iters;
  if (!run.converged) {
    const PowerRun retry = power_iterate(model, theta, tol, max_iters, mix_seed(seed, 1));
    iters += retry.iters;
    if (retry.converged || retry.residual < run.residual) run = retry;
  }
  SharpnessReading r;
  r.spectral_norm = std::abs(run.lambda);
  r.power_iters = iters;
  r.residual = run.residual;
  r.converged = run.converged;
  return r;
}

double hutchinson_trace(const models::Model& model, const ParamVector& theta, int probes,
                        std::uint64_t seed) {
  if (probes < 1) throw ConfigError("hutchinson_trace: probes must be >= 1");
  std::vector<double> terms(static_cast<std::size_t>(probes));
  for (int k = 0; k < probes; ++k) {
    const ParamVector z = rademacher_vector(theta.size(), mix_seed(seed, static_cast<std::uint64_t>(k)));
    terms[static_cast<std::size_t>(k)] = z.dot(hvp(model, theta, z));
  }
  return std::accumulate(terms.begin(), terms.end(), 0.0) / probes;
}

double frobenius_sq(const models::Model& model, const ParamVector& theta, int probes,
                    std::uint64_t seed) {
  if (probes < 1) throw ConfigError("frobenius_sq: probes must be >= 1");
  std::vector<double> terms(static_cast<std::size_t>(probes));
  for (int k = 0; k < probes; ++k) {
    const ParamVector z = rademacher_vector(theta.size(), mix_seed(seed, static_cast<std::uint64_t>(k)));
    terms[static_cast<std::size_t>(k)] = hvp(model, theta, z).squaredNorm();
  }
  return std::accumulate(terms.begin(), terms.end(), 0.0) / probes;
}

SharpnessReading read_sharpness(const models::Model& model, const ParamVector& theta, int probes,
                                std::uint64_t seed) {
  SharpnessReading r = spectral_norm(model, theta, 1e-6, 1000, mix_seed(seed, 0));
  r.trace = hutchinson_trace(model, theta, probes, mix_seed(seed, 1));
  r.frobenius_sq = frobenius_sq(model, theta, probes, mix_seed(seed, 2));
  r.probe_count = probes;
  return r;
}

Matrix fisher_matrix(const models::Model& model, const ParamVector& theta) {
  if (model.dim() > kDenseParamLimit) {
    throw CapabilityError("fisher_matrix: p = " + std::to_string(model.dim()) +
                          " exceeds the dense limit " + std::to_string(kDenseParamLimit));
  }
  const auto j = model.output_jacobian(theta);
  if (!j) throw CapabilityError("fisher_matrix: model '" + model.name() + "' has no output Jacobian");
  Matrix g = j->transpose() * *j / static_cast<double>(j->rows());
  return 0.5 * (g + g.transpose());
}

Matrix dense_hessian(const models::Model& model, const ParamVector& theta) {
  if (model.dim() > kDenseParamLimit) {
    throw CapabilityError("dense_hessian: p = " + std::to_string(model.dim()) +
                          " exceeds the dense limit " + std::to_string(kDenseParamLimit));
  }
  if (auto h = model.hessian(theta)) return *h;
  const auto p = theta.size();
  Matrix h(p, p);
  for (Eigen::Index i = 0; i < p; ++i) h.col(i) = hvp(model, theta, ParamVector::Unit(p, i));
  return 0.5 * (h + h.transpose());
}

std::size_t InterpolationProfile::index_of(double lambda) const {
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (lambdas[i] == lambda) return i;
  }
  throw UsageError("interpolation profile has no node at lambda=" + io::fmt(lambda));
}

double InterpolationProfile::barrier() const {
  const double ends = std::max(losses[index_of(0.0)], losses[index_of(1.0)]);
  double top = ends;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (lambdas[i] >= 0.0 && lambdas[i] <= 1.0) top = std::max(top, losses[i]);
  }
  return top - ends;
}

double InterpolationProfile::monotonicity() const {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (lambdas[i] >= 0.0 && lambdas[i] <= 1.0) {
      x.push_back(lambdas[i]);
      y.push_back(second_diffs[i]);
    }
  }
  return spearman(x, y);
}

InterpolationProfile interpolation_probe(const models::Model& model, const ParamVector& theta_a,
                                         const ParamVector& theta_b, int grid_size, double h,
                                         double margin) {
  check_same_dim(theta_a, theta_b, "interpolation_probe");
  if (!(h > 0.0)) throw ConfigError("interpolation_probe: h must be > 0");
  if (grid_size < 2 || !(margin >= 0.0)) {
    throw ConfigError("interpolation_probe: need grid_size >= 2 and margin >= 0");
  }
  // Nodes are λ_k = (k − k0)/m so that 0 and 1 are hit exactly.
  const double spacing = (1.0 + 2.0 * margin) / (grid_size - 1);
  const double m = std::round(1.0 / spacing);
  const double k0 = std::round(margin * m);
  if (std::abs(m * spacing - 1.0) > 1e-9 || std::abs(k0 - margin * m) > 1e-9) {
    throw ConfigError("interpolation_probe: grid of " + std::to_string(grid_size) +
                      " points over margin " + io::fmt(margin) +
                      " does not place nodes on lambda = 0 and 1");
  }

  // Anchored on the nearer endpoint so λ = 0, λ = 1 and θ_a = θ_b are exact.
  const ParamVector delta = theta_b - theta_a;
  auto loss_at = [&](double lambda) {
    const ParamVector t =
        lambda <= 0.5 ? ParamVector(theta_a + lambda * delta) : ParamVector(theta_b - (1.0 - lambda) * delta);
    return model.full_loss(t);
  };

  InterpolationProfile p;
  p.h = h;
  for (int k = 0; k < grid_size; ++k) {
    const double lambda = (k - k0) / m;
    const double l = loss_at(lambda);
    p.lambdas.push_back(lambda);
    p.losses.push_back(l);
    p.second_diffs.push_back((loss_at(lambda + h) + loss_at(lambda - h) - 2.0 * l) / (4.0 * h * h));
  }
  return p;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

io::CsvTable to_csv(const InterpolationProfile& profile) {
  io::CsvTable t;
  t.header = {"lambda", "loss", "second_diff"};
  for (std::size_t i = 0; i < profile.lambdas.size(); ++i) {
    t.add_row({io::fmt(profile.lambdas[i]), io::fmt(profile.losses[i]),
               io::fmt(profile.second_diffs[i])});
  }
  return t;
}

io::CsvTable to_csv(const std::vector<SharpnessReading>& readings) {
  io::CsvTable t;
  t.header = {"spectral_norm", "trace", "frobenius_sq", "probe_count", "power_iters", "residual"};
  for (const auto& r : readings) {
    t.add_row({io::fmt(r.spectral_norm), io::fmt(r.trace), io::fmt(r.frobenius_sq),
               io::fmt(r.probe_count), io::fmt(r.power_iters), io::fmt(r.residual)});
  }
  return t;
}

nlohmann::json to_json(const InterpolationProfile& profile) {
  return {{"h", profile.h},
          {"lambdas", profile.lambdas},
          {"losses", profile.losses},
          {"second_diffs", profile.second_diffs},
          {"barrier", profile.barrier()},
          {"monotonicity", profile.monotonicity()}};
}

nlohmann::json to_json(const SharpnessReading& r) {
  return {{"spectral_norm", r.spectral_norm}, {"trace", r.trace},
          {"frobenius_sq", r.frobenius_sq},   {"probe_count", r.probe_count},
          {"power_iters", r.power_iters},     {"residual", r.residual},
          {"converged", r.converged}};
}

SharpnessReading sharpness_from_json(const nlohmann::json& j) {
  SharpnessReading r;
  r.spectral_norm = j.at("spectral_norm").get<double>();
  r.trace = j.at("trace").get<double>();
  r.frobenius_sq = j.at("frobenius_sq").get<double>();
  r.probe_count = j.at("probe_count").get<int>();
  r.power_iters = j.at("power_iters").get<int>();
  r.residual = j.at("residual").get<double>();
  r.converged = j.at("converged").get<bool>();
  return r;
}

}  // namespace samlab::curvature
