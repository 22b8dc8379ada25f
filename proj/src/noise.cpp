#include "samlab/noise.hpp"

#include "samlab/curvature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace samlab::noise {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTrialBlowup = 1e100;

ParamVector standard_normal(Eigen::Index n, Rng& rng) {
  ParamVector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

double quad_loss(const models::QuadraticModel& m, const ParamVector& theta) {
  const ParamVector d = theta - m.minimum();
  return 0.5 * d.dot(m.curvature() * d);
}

}  // namespace

// --- channel -----------------------------------------------------------------

NoiseChannel NoiseChannel::loss_scaled(const Matrix& g, std::size_t batch, double scale) {
  if (batch < 1) throw ConfigError("noise channel: batch must be >= 1");
  if (!(scale >= 0.0)) throw ConfigError("noise channel: scale must be >= 0");
  if (g.rows() != g.cols() || g.rows() == 0) throw ConfigError("noise channel: G must be square");
  const double mag = std::max(1.0, g.cwiseAbs().maxCoeff());
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * mag) {
    throw ConfigError("noise channel: G is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  if (eig.eigenvalues().minCoeff() < -1e-10 * mag) {
    throw ConfigError("noise channel: covariance is not positive semi-definite");
  }
  NoiseChannel c;
  c.mode_ = NoiseMode::LOSS_SCALED_GAUSSIAN;
  c.batch_ = batch;
  c.scale_ = scale;
  c.g_ = g;
  const ParamVector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  c.root_ = eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
  return c;
}

NoiseChannel NoiseChannel::empirical(std::size_t batch) {
  if (batch < 1) throw ConfigError("noise channel: batch must be >= 1");
  NoiseChannel c;
  c.mode_ = NoiseMode::EMPIRICAL_MINIBATCH;
  c.batch_ = batch;
  return c;
}

Matrix NoiseChannel::covariance(double loss) const {
  if (mode_ != NoiseMode::LOSS_SCALED_GAUSSIAN) {
    throw CapabilityError("noise channel: covariance is only closed-form in the Gaussian mode");
  }
  return (2.0 * scale_ * loss / static_cast<double>(batch_)) * g_;
}

ParamVector NoiseChannel::sample_at_loss(double loss, Rng& rng) const {
  if (mode_ != NoiseMode::LOSS_SCALED_GAUSSIAN) {
    throw CapabilityError("noise channel: sample_at_loss needs the Gaussian mode");
  }
  const ParamVector z = standard_normal(g_.rows(), rng);
  if (loss <= 0.0) return ParamVector::Zero(g_.rows());
  return std::sqrt(2.0 * scale_ * loss / static_cast<double>(batch_)) * (root_ * z);
}

ParamVector NoiseChannel::sample(const models::Model& model, const ParamVector& theta,
                                 Rng& rng) const {
  if (mode_ == NoiseMode::LOSS_SCALED_GAUSSIAN) {
    if (static_cast<std::size_t>(g_.rows()) != model.dim()) {
      throw ConfigError("noise channel: G dimension does not match the model");
    }
    return sample_at_loss(model.full_loss(theta), rng);
  }
  const std::size_t n = model.sample_count();
  if (batch_ >= n) return ParamVector::Zero(theta.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < batch_; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(batch_);
  return model.loss_grad(theta, idx).grad - model.full_loss_grad(theta).grad;
}

// --- alignment ---------------------------------------------------------------

double alignment_ratio(const Matrix& sigma, const Matrix& g, double loss) {
  if (!(loss > 1e-12)) {
    throw NumericalError("alignment ratio undefined: L(theta) = " + io::fmt(loss) + " <= 1e-12");
  }
  const double fro = g.squaredNorm();
  if (fro == 0.0) throw NumericalError("alignment ratio undefined: G = 0");
  return (sigma.cwiseProduct(g.transpose())).sum() / (2.0 * loss * fro);
}

double estimate_gamma(const models::Model& model, const ParamVector& theta) {
  const Matrix g = curvature::fisher_matrix(model, theta);
  const auto full = model.full_loss_grad(theta);
  const std::size_t n = model.sample_count();
  Matrix dev(static_cast<Eigen::Index>(theta.size()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t one[] = {i};
    dev.col(static_cast<Eigen::Index>(i)) = model.loss_grad(theta, one).grad - full.grad;
  }
  const Matrix sigma = dev * dev.transpose() / static_cast<double>(n);
  return alignment_ratio(sigma, g, full.loss);
}

// --- bounds ------------------------------------------------------------------

std::string to_string(Label l) {
  switch (l) {
    case Label::STABLE: return "STABLE";
    case Label::UNSTABLE: return "UNSTABLE";
    case Label::INDETERMINATE: return "INDETERMINATE";
  }
  return "?";
}

Label label_from_string(const std::string& s) {
  if (s == "STABLE") return Label::STABLE;
  if (s == "UNSTABLE") return Label::UNSTABLE;
  if (s == "INDETERMINATE") return Label::INDETERMINATE;
  throw UsageError("unknown stability label '" + s + "'");
}

namespace {

void check_bound_args(double eta, double rho, double batch, double gamma) {
  if (!(eta > 0.0) || !(gamma > 0.0) || !(batch >= 1.0) || !(rho >= 0.0)) {
    throw ConfigError("stability bound: need eta > 0, gamma > 0, B >= 1, rho >= 0");
  }
}

}  // namespace

StabilityVerdict sam_stability_bound(double eta, double rho, double batch, double gamma,
                                     double frobenius_sq) {
  check_bound_args(eta, rho, batch, gamma);
  StabilityVerdict v;
  v.eta = eta;
  v.rho = rho;
  v.batch = batch;
  v.gamma = gamma;
  v.frobenius_sq = frobenius_sq;
  v.bound_lhs = frobenius_sq * (1.0 + rho * rho * gamma * frobenius_sq / batch);
  v.bound_rhs = batch / (eta * eta * gamma);
  v.predicted = v.bound_lhs > v.bound_rhs ? Label::UNSTABLE : Label::STABLE;
  return v;
}

double sam_stability_threshold(double eta, double rho, double batch, double gamma) {
  check_bound_args(eta, rho, batch, gamma);
  const double r = batch / (eta * eta * gamma);
  const double k = rho * rho * gamma / batch;
  if (k == 0.0) return r;
  // positive root of k F² + F − r = 0, written to avoid cancellation
  return 2.0 * r / (1.0 + std::sqrt(1.0 + 4.0 * k * r));
}

double escape_constant(double eta, double rho, double batch, double gamma, double frobenius_sq) {
  check_bound_args(eta, rho, batch, gamma);
  const double u = gamma * frobenius_sq / batch;
  return eta * eta * u * (1.0 + rho * rho * u);
}

nlohmann::json to_json(const StabilityVerdict& v) {
  nlohmann::json j{{"eta", v.eta},
                   {"rho", v.rho},
                   {"batch", v.batch},
                   {"gamma", v.gamma},
                   {"frobenius_sq", v.frobenius_sq},
                   {"bound_lhs", v.bound_lhs},
                   {"bound_rhs", v.bound_rhs},
                   {"predicted", to_string(v.predicted)},
                   {"final_mean_loss", std::isfinite(v.final_mean_loss) ? nlohmann::json(v.final_mean_loss)
                                                                        : nlohmann::json(nullptr)},
                   {"overflow", v.overflow}};
  j["empirical_rate"] = v.empirical_rate && std::isfinite(*v.empirical_rate)
                            ? nlohmann::json(*v.empirical_rate)
                            : nlohmann::json(nullptr);
  j["empirical"] = v.empirical ? nlohmann::json(to_string(*v.empirical)) : nlohmann::json(nullptr);
  return j;
}

StabilityVerdict verdict_from_json(const nlohmann::json& j) {
  StabilityVerdict v;
  v.eta = j.at("eta").get<double>();
  v.rho = j.at("rho").get<double>();
  v.batch = j.at("batch").get<double>();
  v.gamma = j.at("gamma").get<double>();
  v.frobenius_sq = j.at("frobenius_sq").get<double>();
  v.bound_lhs = j.at("bound_lhs").get<double>();
  v.bound_rhs = j.at("bound_rhs").get<double>();
  v.predicted = label_from_string(j.at("predicted").get<std::string>());
  v.final_mean_loss = j.at("final_mean_loss").is_null() ? kInf : j.at("final_mean_loss").get<double>();
  v.overflow = j.at("overflow").get<bool>();
  if (!j.at("empirical_rate").is_null()) v.empirical_rate = j.at("empirical_rate").get<double>();
  if (!j.at("empirical").is_null()) v.empirical = label_from_string(j.at("empirical").get<std::string>());
  return v;
}

// --- escape rate -------------------------------------------------------------

EscapeFit fit_escape_rate(const std::vector<double>& trace) {
  if (trace.size() < 8) throw UsageError("fit_escape_rate: trace needs at least 8 points");
  std::size_t end = 0;
  while (end < trace.size() && std::isfinite(trace[end]) && trace[end] < kOverflowCap) ++end;
  if (end < 2) throw NumericalError("fit_escape_rate: fewer than two points below the overflow cap");
  std::size_t begin = end - 1;
  while (begin > 0 && trace[begin - 1] <= trace[begin]) --begin;
  if (end - begin < 2) begin = 0;

  const double n = static_cast<double>(end - begin);
  double mt = 0.0, my = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    if (!(trace[i] > 0.0)) {
      throw NumericalError("fit_escape_rate: non-positive loss at index " + std::to_string(i));
    }
    mt += static_cast<double>(i);
    my += std::log(trace[i]);
  }
  mt /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double dt = static_cast<double>(i) - mt;
    sxy += dt * (std::log(trace[i]) - my);
    sxx += dt * dt;
  }
  EscapeFit fit;
  fit.slope = sxy / sxx;
  fit.rate = std::exp(fit.slope);
  fit.window_begin = begin;
  fit.window_end = end;
  return fit;
}

// --- channel dynamics --------------------------------------------------------

ParamVector channel_sam_step(const models::QuadraticModel& model, const NoiseChannel& channel,
                             const ParamVector& theta, double eta, double rho, Rng& rng) {
  const Matrix& g = model.curvature();
  const ParamVector& star = model.minimum();
  auto noisy_grad = [&](const ParamVector& at) {
    ParamVector grad = g * (at - star);
    if (channel.mode() == NoiseMode::LOSS_SCALED_GAUSSIAN) {
      grad += channel.sample_at_loss(quad_loss(model, at), rng);
    } else {
      grad += channel.sample(model, at, rng);
    }
    return grad;
  };
  const ParamVector probe = theta + rho * noisy_grad(theta);
  return theta - eta * noisy_grad(probe);
}

MonteCarloRun simulate_channel_sam(const models::QuadraticModel& model,
                                   const NoiseChannel& channel, double eta, double rho,
                                   int trials, int steps, double initial_loss,
                                   std::uint64_t seed, bool keep_trials) {
  if (trials < 1 || steps < 0) throw ConfigError("simulation: trials >= 1 and steps >= 0 required");
  if (!(initial_loss > 0.0)) throw ConfigError("simulation: initial loss must be > 0");
  if (!(eta > 0.0) || !(rho >= 0.0)) throw ConfigError("simulation: eta > 0 and rho >= 0 required");

  const auto p = static_cast<Eigen::Index>(model.dim());
  std::vector<std::vector<double>> traces(static_cast<std::size_t>(trials));
  MonteCarloRun run;
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
    run.trial_seeds.push_back(s);
    Rng rng(s);
    ParamVector d = standard_normal(p, rng);
    const double curv = d.dot(model.curvature() * d);
    if (!(curv > 0.0)) throw ConfigError("simulation: start direction has zero curvature");
    ParamVector theta = model.minimum() + std::sqrt(2.0 * initial_loss / curv) * d;

    auto& tr = traces[static_cast<std::size_t>(i)];
    tr.reserve(static_cast<std::size_t>(steps) + 1);
    tr.push_back(quad_loss(model, theta));
    bool blown = false;
    for (int t = 0; t < steps; ++t) {
      if (!blown) {
        theta = channel_sam_step(model, channel, theta, eta, rho, rng);
        const double l = quad_loss(model, theta);
        if (!std::isfinite(l) || l >= kTrialBlowup) {
          blown = true;
          run.overflow = true;
        } else {
          tr.push_back(l);
          continue;
        }
      }
      tr.push_back(kInf);
    }
  }

  run.mean_loss.resize(static_cast<std::size_t>(steps) + 1);
  std::vector<double> column(static_cast<std::size_t>(trials));
  for (int t = 0; t <= steps; ++t) {
    bool inf = false;
    for (int i = 0; i < trials; ++i) {
      column[static_cast<std::size_t>(i)] = traces[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
      inf = inf || !std::isfinite(column[static_cast<std::size_t>(i)]);
    }
    run.mean_loss[static_cast<std::size_t>(t)] = inf ? kInf : pairwise_mean(column);
  }
  if (keep_trials) run.trial_loss = std::move(traces);
  return run;
}

StabilityVerdict classify_stability(const models::QuadraticModel& model,
                                    const optim::OptimizerConfig& optimizer,
                                    const NoiseChannel& channel, const ClassifyOptions& options) {
  optimizer.validate();
  if (options.horizon < 8) throw ConfigError("classify_stability: horizon must be >= 8");
  StabilityVerdict v =
      sam_stability_bound(optimizer.lr, optimizer.rho, static_cast<double>(channel.batch()),
                          channel.scale(), model.frobenius_sq());
  const auto run = simulate_channel_sam(model, channel, optimizer.lr, optimizer.rho, options.trials,
                                        options.horizon, options.initial_loss, options.seed);
  const double l0 = options.initial_loss;
  v.final_mean_loss = run.mean_loss.back();
  v.overflow = run.overflow;
  if (!std::isfinite(v.final_mean_loss) || v.final_mean_loss > 1e3 * l0) {
    v.empirical = Label::UNSTABLE;
  } else if (v.final_mean_loss < 10.0 * l0) {
    v.empirical = Label::STABLE;
  } else {
    v.empirical = Label::INDETERMINATE;
  }
  try {
    v.empirical_rate = fit_escape_rate(run.mean_loss).rate;
  } catch (const NumericalError&) {
    v.empirical_rate = kInf;  // overflowed before two points were recorded
  }
  return v;
}

namespace {

std::vector<double> ratio_curve(const std::vector<std::vector<double>>& traces,
                                const std::vector<std::size_t>& pick, double l0) {
  const std::size_t steps = traces.front().size() - 1;
  std::vector<double> curve{l0};
  std::vector<double> ratios;
  for (std::size_t t = 0; t < steps; ++t) {
    ratios.clear();
    for (std::size_t i : pick) {
      const double a = traces[i][t], b = traces[i][t + 1];
      if (std::isfinite(a) && std::isfinite(b)) ratios.push_back(b / a);
    }
    curve.push_back(ratios.empty() ? kInf : curve.back() * pairwise_mean(ratios));
  }
  return curve;
}

}  // namespace

EscapeRateEstimate estimate_escape_rate(const models::QuadraticModel& model,
                                        const NoiseChannel& channel, double eta, double rho,
                                        int trials, int steps, double initial_loss,
                                        std::uint64_t seed, int bootstrap) {
  if (steps < 8) throw ConfigError("escape rate: steps must be >= 8");
  const auto run = simulate_channel_sam(model, channel, eta, rho, trials, steps, initial_loss,
                                        seed, true);
  EscapeRateEstimate e;
  e.trials = trials;
  e.steps = steps;
  e.mean_loss = run.mean_loss;
  e.naive_rate = fit_escape_rate(run.mean_loss).rate;
  e.predicted_lower = escape_constant(eta, rho, static_cast<double>(channel.batch()),
                                      channel.scale(), model.frobenius_sq());

  std::vector<std::size_t> all(static_cast<std::size_t>(trials));
  std::iota(all.begin(), all.end(), std::size_t{0});
  e.ratio_curve = ratio_curve(run.trial_loss, all, initial_loss);
  e.rate = fit_escape_rate(e.ratio_curve).rate;

  if (bootstrap > 1) {
    Rng rng(mix_seed(seed, 0xB0075723ULL));
    std::vector<double> rates;
    std::vector<std::size_t> pick(all.size());
    for (int b = 0; b < bootstrap; ++b) {
      for (auto& k : pick) k = static_cast<std::size_t>(rng.below(all.size()));
      rates.push_back(fit_escape_rate(ratio_curve(run.trial_loss, pick, initial_loss)).rate);
    }
    const double mean = pairwise_mean(rates);
    double ss = 0.0;
    for (double r : rates) ss += (r - mean) * (r - mean);
    e.sigma = std::sqrt(ss / static_cast<double>(rates.size() - 1));
  }
  return e;
}

// --- norm vs loss ------------------------------------------------------------

LemmaB1Curves lemma_b1_demo(int steps, int trials, std::uint64_t seed) {
  if (steps < 0 || trials < 1) throw ConfigError("lemma_b1_demo: steps >= 0 and trials >= 1 required");
  const auto cols = static_cast<std::size_t>(steps) + 1;
  std::vector<std::vector<double>> norm(cols, std::vector<double>(static_cast<std::size_t>(trials)));
  std::vector<std::vector<double>> loss(cols, std::vector<double>(static_cast<std::size_t>(trials)));
  for (int i = 0; i < trials; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const double t1 = 1.0;
    double t2 = 1.0;
    for (std::size_t t = 0; t < cols; ++t) {
      if (t > 0) t2 += rng.normal();
      norm[t][static_cast<std::size_t>(i)] = t1 * t1 + t2 * t2;
      loss[t][static_cast<std::size_t>(i)] = 0.5 * t1 * t1;
    }
  }
  LemmaB1Curves c;
  for (std::size_t t = 0; t < cols; ++t) {
    const double m = pairwise_mean(norm[t]);
    double ss = 0.0;
    for (double x : norm[t]) ss += (x - m) * (x - m);
    c.mean_norm_sq.push_back(m);
    c.mean_loss.push_back(pairwise_mean(loss[t]));
    c.sd_norm_sq.push_back(trials > 1 ? std::sqrt(ss / (trials - 1)) : 0.0);
  }
  return c;
}

}  // namespace samlab::noise
