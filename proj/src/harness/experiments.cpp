#include "samlab/harness.hpp"

#include "samlab/curvature.hpp"
#include "samlab/landscape.hpp"
#include "samlab/models.hpp"
#include "samlab/noise.hpp"
#include "samlab/optimizers.hpp"
#include "samlab/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace samlab::harness {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double num(const json& p, const char* key) { return p.at(key).get<double>(); }
long integer(const json& p, const char* key) {
  const double v = p.at(key).get<double>();
  if (v != std::floor(v)) throw ConfigError(std::string("config: ") + key + " must be an integer");
  return static_cast<long>(v);
}
std::vector<double> numbers(const json& p, const char* key) {
  try {
    return p.at(key).get<std::vector<double>>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: ") + key + " must be an array of numbers");
  }
}

// JSON has no NaN; non-finite metrics are written as null.
json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

RunSummary start(const ExperimentConfig& config) {
  RunSummary s;
  s.kind = config.kind;
  s.config = config.to_json();
  return s;
}

std::vector<double> iota_d(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i);
  return v;
}

std::vector<double> linspace(double lo, double hi, long count) {
  if (count < 1) throw ConfigError("config: grid counts must be >= 1");
  std::vector<double> v(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    v[static_cast<std::size_t>(i)] =
        count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return v;
}

// ---- two-phase toy -------------------------------------------------------

struct ToyOutcome {
  optim::TrajectoryRecord sam;
  optim::TrajectoryRecord sgd;
  long switch_step = 0;
  json metrics;
};

// First step at which full-batch GD has reached the plateau rule.
long sgd_plateau(const models::Model& model, ParamVector theta, double lr, const json& p) {
  const double floor_loss = num(p, "plateau_loss");
  const double rel = num(p, "plateau_rel");
  const long window = integer(p, "plateau_window");
  const long budget = integer(p, "max_sgd_steps");
  if (window < 1) throw ConfigError("config: plateau_window must be >= 1");
  const auto batch = full_batch(model.sample_count());
  std::vector<double> hist;
  for (long t = 0; t <= budget; ++t) {
    const double l = model.full_loss(theta);
    if (!std::isfinite(l)) throw ConfigError("two-phase: SGD diverged before reaching a plateau");
    hist.push_back(l);
    if (l < floor_loss) return t;
    if (t >= window) {
      const double prev = hist[static_cast<std::size_t>(t - window)];
      if (prev > 0.0 && (prev - l) / prev < rel) return t;
    }
    theta = optim::sgd_step(model, theta, batch, lr);
  }
  throw ConfigError("two-phase: SGD did not reach the plateau within max_sgd_steps");
}

ToyOutcome toy_two_phase(const json& p, std::uint64_t seed) {
  const models::ToyModel model;
  const auto t0 = numbers(p, "theta0");
  if (t0.size() != 2) throw ConfigError("config: theta0 must have two entries");
  const ParamVector theta0{{t0[0], t0[1]}};
  const double lr = num(p, "lr");

  ToyOutcome out;
  out.switch_step = sgd_plateau(model, theta0, lr, p);
  optim::SwitchSchedule sched;
  sched.switch_step = out.switch_step;
  sched.total_steps = out.switch_step + integer(p, "post_steps");
  sched.before = {optim::Family::SGD, lr};
  sched.after.family = optim::family_from_string(p.at("after_family").get<std::string>());
  sched.after.lr = lr;
  sched.after.rho = num(p, "rho");
  sched.validate();

  optim::RunOptions opts;
  opts.probes = {
      {"u", 1, [](const ParamVector& th) { return th[0]; }},
      {"v", 1, [](const ParamVector& th) { return th[1]; }},
      {"sharpness", 1, [](const ParamVector& th) { return std::pow(std::tanh(th[0]), 2); }},
  };
  out.sam = optim::run_schedule(model, theta0, sched, seed, opts);
  auto pure = sched;
  pure.switch_step = pure.total_steps;
  out.sgd = optim::run_schedule(model, theta0, pure, seed, opts);
  if (out.sam.diverged || out.sgd.diverged) {
    throw NumericalError("two-phase: run diverged: " + out.sam.failure + out.sgd.failure);
  }

  const auto& u = out.sam.probes.at("u");
  const auto& v = out.sam.probes.at("v");
  const auto& sharp = out.sam.probes.at("sharpness");
  const auto k = static_cast<std::size_t>(out.switch_step);
  const double loss_switch = out.sam.loss[k];
  double max_loss = loss_switch;
  double max_v = 0.0;
  double min_u = std::abs(u[k]);
  bool sign_kept = true;
  for (std::size_t i = k; i < out.sam.size(); ++i) {
    max_loss = std::max(max_loss, out.sam.loss[i]);
    max_v = std::max(max_v, std::abs(v[i]));
    min_u = std::min(min_u, std::abs(u[i]));
    sign_kept = sign_kept && (u[i] > 0.0) == (u[k] > 0.0);
  }
  const ParamVector& sam_end = out.sam.final_theta;
  const ParamVector& sgd_end = out.sgd.final_theta;
  const double sharp_sam = std::pow(std::tanh(sam_end[0]), 2);
  const double sharp_sgd = std::pow(std::tanh(sgd_end[0]), 2);
  const double rise = loss_switch > 0.0 ? max_loss / loss_switch : kNaN;
  const bool loss_escape = max_loss > num(p, "escape_factor") * loss_switch;
  const double sharp_change = (sharp_sam - sharp[k]) / sharp[k];
  const bool sharp_escape = sharp_change < -num(p, "sharpness_drop");
  const bool same_valley = max_v < num(p, "valley_guard") && sign_kept && min_u >= num(p, "u_floor");

  out.metrics = {
      {"switch_step", out.switch_step},
      {"total_steps", sched.total_steps},
      {"after_family", optim::to_string(sched.after.family)},
      {"loss_at_switch", loss_switch},
      {"max_loss_after_switch", max_loss},
      {"loss_rise_factor", finite_or_null(rise)},
      {"escape_by_loss", loss_escape},
      {"escape_by_sharpness", sharp_escape},
      {"escaped", loss_escape || sharp_escape},
      {"sharpness_at_switch", sharp[k]},
      {"sharpness_sam_end", sharp_sam},
      {"sharpness_sgd_end", sharp_sgd},
      {"sharpness_relative_change", sharp_change},
      {"max_abs_v_after_switch", max_v},
      {"min_abs_u_after_switch", min_u},
      {"same_valley", same_valley},
      {"flatter", sharp_sam < sharp_sgd},
      {"v_end_small", std::abs(sam_end[1]) < 1e-3},
      {"theta_sam_end", {sam_end[0], sam_end[1]}},
      {"theta_sgd_end", {sgd_end[0], sgd_end[1]}},
      {"final_loss_sam", out.sam.loss.back()},
      {"final_loss_sgd", out.sgd.loss.back()},
  };
  return out;
}

LinePlot trajectory_plot(const optim::TrajectoryRecord& a, const optim::TrajectoryRecord& b,
                         const std::string& probe, const std::string& title, bool log_y) {
  auto series = [&](const optim::TrajectoryRecord& r, const std::string& name) {
    Series s{name, {}, {}};
    for (std::size_t i = 0; i < r.size(); ++i) {
      s.x.push_back(static_cast<double>(r.step[i]));
      s.y.push_back(probe == "loss" ? r.loss[i] : r.probes.at(probe)[i]);
    }
    return s;
  };
  return {title, "step", probe, log_y, {series(a, "SGD then switch"), series(b, "SGD only")}};
}

// ---- switch sweep ----------------------------------------------------------

struct SweepPoint {
  std::string direction;
  double proportion = 0.0;
  long switch_step = 0;
  double sharpness = kNaN;
  double train_loss = kNaN;
  double heldout_loss = kNaN;
  bool diverged = false;
  std::string failure;
};

}  // namespace

RunSummary run_two_phase_toy(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  s.trial_seeds = {mix_seed(config.seed, 0)};
  auto out = toy_two_phase(config.params, s.trial_seeds[0]);
  s.metrics = out.metrics;
  s.tables["trajectory"] = out.sam.to_csv();
  s.tables["sgd_baseline"] = out.sgd.to_csv();
  s.figures["loss"] = svg_line_plot(trajectory_plot(out.sam, out.sgd, "loss", "Training loss", true));
  s.figures["sharpness"] =
      svg_line_plot(trajectory_plot(out.sam, out.sgd, "sharpness", "Sharpness tanh^2(u)", false));
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_interpolation(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const json& p = config.params;
  auto a = numbers(p, "theta_a");
  auto b = numbers(p, "theta_b");
  s.trial_seeds = {mix_seed(config.seed, 0)};
  if (a.empty() != b.empty()) throw UsageError("interpolation: give both checkpoints or neither");
  std::string source = "checkpoints";
  if (a.empty()) {
    const auto toy = toy_two_phase(p.at("toy"), s.trial_seeds[0]);
    a = toy.metrics["theta_sam_end"].get<std::vector<double>>();
    b = toy.metrics["theta_sgd_end"].get<std::vector<double>>();
    source = "two_phase_toy";
  }
  if (a.size() != b.size()) throw UsageError("interpolation: checkpoint dimensions differ");
  if (a.size() != 2) throw UsageError("interpolation: toy checkpoints must have two entries");
  const models::ToyModel model;
  const ParamVector ta = Eigen::Map<const ParamVector>(a.data(), 2);
  const ParamVector tb = Eigen::Map<const ParamVector>(b.data(), 2);
  const auto prof = curvature::interpolation_probe(model, ta, tb, static_cast<int>(integer(p, "grid_size")),
                                                   num(p, "h"), num(p, "margin"));
  const double barrier = prof.barrier();
  const double mono = prof.monotonicity();
  s.metrics = {
      {"source", source},
      {"theta_a", a},
      {"theta_b", b},
      {"barrier", barrier},
      {"monotonicity", mono},
      {"h", prof.h},
      {"loss_a", prof.losses[prof.index_of(0.0)]},
      {"loss_b", prof.losses[prof.index_of(1.0)]},
      {"second_diff_a", prof.second_diffs[prof.index_of(0.0)]},
      {"second_diff_b", prof.second_diffs[prof.index_of(1.0)]},
      {"no_barrier", barrier <= 1e-6},
      {"curvature_increasing", mono >= 0.9},
  };
  s.tables["profile"] = curvature::to_csv(prof);
  s.figures["profile_loss"] =
      svg_line_plot({"Loss along the path", "lambda", "loss", false, {{"L", prof.lambdas, prof.losses}}});
  s.figures["profile_curvature"] = svg_line_plot(
      {"Second difference along the path", "lambda", "L''", false, {{"L''", prof.lambdas, prof.second_diffs}}});
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_switch_sweep(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const json& p = config.params;
  const long total = integer(p, "total_steps");
  const auto batch = static_cast<std::size_t>(integer(p, "batch"));
  optim::OptimizerConfig sgd{optim::Family::SGD, num(p, "lr"), 0.0, batch};
  sgd.momentum = num(p, "momentum");
  sgd.weight_decay = num(p, "weight_decay");
  optim::OptimizerConfig sam = sgd;
  sam.family = optim::family_from_string(p.at("sam_family").get<std::string>());
  sam.rho = num(p, "rho");
  sgd.validate();
  sam.validate();

  struct Plan {
    std::string direction;
    double proportion;
    long switch_step;
    const optim::OptimizerConfig* before;
    const optim::OptimizerConfig* after;
  };
  std::vector<Plan> plans;
  for (double q : numbers(p, "sgd_to_sam")) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("config: proportions must lie in [0, 1]");
    plans.push_back({"SGD_TO_SAM", q, std::lround((1.0 - q) * static_cast<double>(total)), &sgd, &sam});
  }
  for (double q : numbers(p, "sam_to_sgd")) {
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("config: proportions must lie in [0, 1]");
    plans.push_back({"SAM_TO_SGD", q, std::lround(q * static_cast<double>(total)), &sam, &sgd});
  }

  io::CsvTable table;
  table.header = {"trial",        "direction",    "proportion",         "switch_step", "final_sharpness",
                  "train_loss",   "heldout_loss", "generalization_gap", "diverged",    "failure"};
  std::vector<std::vector<SweepPoint>> per_trial;
  for (int trial = 0; trial < config.trials; ++trial) {
    const std::uint64_t ts = mix_seed(config.seed, static_cast<std::uint64_t>(trial));
    s.trial_seeds.push_back(ts);
    auto data = std::make_shared<const models::SyntheticDataset>(models::make_synthetic_dataset(
        ts, static_cast<std::size_t>(integer(p, "n")), static_cast<std::size_t>(integer(p, "d")),
        static_cast<std::size_t>(integer(p, "teacher_hidden"))));
    const auto heldout = models::make_heldout(*data, static_cast<std::size_t>(integer(p, "heldout")), ts);
    const models::MlpModel model(static_cast<std::size_t>(integer(p, "hidden")), data);
    const ParamVector theta0 = models::mlp_random_init(model.shape(), num(p, "init_scale"), mix_seed(ts, 3));

    std::vector<SweepPoint> points;
    for (const auto& plan : plans) {
      SweepPoint pt;
      pt.direction = plan.direction;
      pt.proportion = plan.proportion;
      pt.switch_step = plan.switch_step;
      optim::SwitchSchedule sched{total, plan.switch_step, *plan.before, *plan.after};
      const auto rec = optim::run_schedule(model, theta0, sched, ts);
      if (rec.diverged) {
        pt.diverged = true;
        pt.failure = rec.failure;
      } else {
        try {
          pt.sharpness = curvature::spectral_norm(model, rec.final_theta, num(p, "power_tol"),
                                                  static_cast<int>(integer(p, "power_max_iters")),
                                                  mix_seed(ts, 4))
                             .spectral_norm;
          pt.train_loss = model.full_loss(rec.final_theta);
          pt.heldout_loss = model.loss_on(rec.final_theta, heldout);
        } catch (const NumericalError& e) {
          pt.diverged = true;
          pt.failure = e.what();
        }
      }
      table.add_row({io::fmt(trial), pt.direction, io::fmt(pt.proportion), io::fmt(static_cast<long long>(pt.switch_step)),
                     io::fmt(pt.sharpness), io::fmt(pt.train_loss), io::fmt(pt.heldout_loss),
                     io::fmt(pt.heldout_loss - pt.train_loss), pt.diverged ? "1" : "0", pt.failure});
      points.push_back(pt);
    }
    per_trial.push_back(std::move(points));
  }

  // Mean over trials for each plan entry; failed points are excluded from the mean.
  std::vector<SweepPoint> mean = per_trial.front();
  for (std::size_t i = 0; i < plans.size(); ++i) {
    double sh = 0.0, tr = 0.0, ho = 0.0;
    int ok = 0;
    for (const auto& pts : per_trial) {
      if (pts[i].diverged) continue;
      sh += pts[i].sharpness;
      tr += pts[i].train_loss;
      ho += pts[i].heldout_loss;
      ++ok;
    }
    mean[i].diverged = ok == 0;
    mean[i].sharpness = ok ? sh / ok : kNaN;
    mean[i].train_loss = ok ? tr / ok : kNaN;
    mean[i].heldout_loss = ok ? ho / ok : kNaN;
  }
  auto find = [&](const std::string& dir, double q) -> const SweepPoint* {
    for (const auto& pt : mean) {
      if (pt.direction == dir && std::abs(pt.proportion - q) < 1e-12) return &pt;
    }
    return nullptr;
  };
  auto sharp_of = [](const SweepPoint* pt) { return pt ? pt->sharpness : kNaN; };
  const double pure_sgd = sharp_of(find("SGD_TO_SAM", 0.0));
  const double pure_sam = sharp_of(find("SGD_TO_SAM", 1.0));
  const double p01 = sharp_of(find("SGD_TO_SAM", 0.1));
  const double p08 = sharp_of(find("SAM_TO_SGD", 0.8));

  json curves = json::object();
  for (const std::string dir : {"SGD_TO_SAM", "SAM_TO_SGD"}) {
    json c = {{"proportion", json::array()}, {"sharpness", json::array()}, {"generalization_gap", json::array()}};
    for (const auto& pt : mean) {
      if (pt.direction != dir) continue;
      c["proportion"].push_back(pt.proportion);
      c["sharpness"].push_back(finite_or_null(pt.sharpness));
      c["generalization_gap"].push_back(finite_or_null(pt.heldout_loss - pt.train_loss));
    }
    curves[dir] = c;
  }
  int failures = 0;
  for (const auto& pts : per_trial) {
    for (const auto& pt : pts) failures += pt.diverged ? 1 : 0;
  }
  const double r_sam = p01 / pure_sam;
  const double r_sgd = p01 / pure_sgd;
  const double r_back = p08 / pure_sgd;
  s.metrics = {
      {"curves", curves},
      {"sharpness_pure_sgd", finite_or_null(pure_sgd)},
      {"sharpness_pure_sam", finite_or_null(pure_sam)},
      {"sharpness_sgd_to_sam_0.1", finite_or_null(p01)},
      {"sharpness_sam_to_sgd_0.8", finite_or_null(p08)},
      {"ratio_p01_to_pure_sam", finite_or_null(r_sam)},
      {"ratio_p01_to_pure_sgd", finite_or_null(r_sgd)},
      {"ratio_p08_to_pure_sgd", finite_or_null(r_back)},
      {"sgd_to_sam_close_to_sam", std::abs(r_sam - 1.0) <= 0.1},
      {"sgd_to_sam_below_half_sgd", r_sgd <= 0.5},
      {"sam_to_sgd_close_to_sgd", std::abs(r_back - 1.0) <= 0.2},
      {"failed_points", failures},
  };
  s.tables["sweep"] = table;

  LinePlot sharp{"Final sharpness vs SAM proportion", "SAM proportion", "spectral norm", false, {}};
  LinePlot gap{"Generalization gap vs SAM proportion", "SAM proportion", "heldout - train loss", false, {}};
  for (const std::string dir : {"SGD_TO_SAM", "SAM_TO_SGD"}) {
    Series a{dir, {}, {}}, g{dir, {}, {}};
    for (const auto& pt : mean) {
      if (pt.direction != dir) continue;
      a.x.push_back(pt.proportion);
      a.y.push_back(pt.sharpness);
      g.x.push_back(pt.proportion);
      g.y.push_back(pt.heldout_loss - pt.train_loss);
    }
    sharp.series.push_back(a);
    gap.series.push_back(g);
  }
  s.figures["sharpness_vs_proportion"] = svg_line_plot(sharp);
  s.figures["gap_vs_proportion"] = svg_line_plot(gap);
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_stability_diagram(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const json& p = config.params;
  const long dim = integer(p, "dim");
  const long batch = integer(p, "batch");
  if (dim < 1 || batch < 1) throw ConfigError("config: dim and batch must be >= 1");
  const double gamma = num(p, "gamma");
  const auto model = models::QuadraticModel::diagonal(
      std::vector<double>(static_cast<std::size_t>(dim), num(p, "curvature")));
  const auto channel = noise::NoiseChannel::loss_scaled(model.curvature(), static_cast<std::size_t>(batch), gamma);
  const auto etas = linspace(num(p, "eta_min"), num(p, "eta_max"), integer(p, "eta_count"));
  const auto rhos = linspace(num(p, "rho_min"), num(p, "rho_max"), integer(p, "rho_count"));
  const double frob = model.frobenius_sq();
  const double bd = static_cast<double>(batch);

  io::CsvTable table;
  table.header = {"eta",       "rho",       "bound_lhs",       "bound_rhs",      "predicted",
                  "empirical", "agree",     "final_mean_loss", "empirical_rate", "overflow"};
  GridPlot pred{"Predicted stability", "eta", "rho", etas, rhos, {}, {{"STABLE", "#4c9a2a"}, {"UNSTABLE", "#c0392b"}}};
  GridPlot emp{"Empirical stability", "eta", "rho", etas, rhos, {},
               {{"STABLE", "#4c9a2a"}, {"UNSTABLE", "#c0392b"}, {"INDETERMINATE", "#f1c40f"}}};
  int counted = 0, agreed = 0, indeterminate = 0;
  int sgd_counted = 0, sgd_agreed = 0;
  bool sgd_row_matches_bound = true;
  bool sam_below_sgd = true;
  const double eta_sgd = std::sqrt(bd / (gamma * frob));
  std::size_t cell = 0;
  for (double rho : rhos) {
    std::vector<std::string> prow, erow;
    for (double eta : etas) {
      noise::ClassifyOptions opts;
      opts.trials = config.trials;
      opts.horizon = static_cast<int>(integer(p, "horizon"));
      opts.initial_loss = num(p, "initial_loss");
      opts.seed = mix_seed(config.seed, cell++);
      s.trial_seeds.push_back(opts.seed);
      const optim::OptimizerConfig oc{optim::Family::SAM_INDEP, eta, rho, static_cast<std::size_t>(batch)};
      const auto v = noise::classify_stability(model, oc, channel, opts);
      const bool indet = *v.empirical == noise::Label::INDETERMINATE;
      const bool agree = !indet && *v.empirical == v.predicted;
      if (indet) {
        ++indeterminate;
      } else {
        ++counted;
        agreed += agree ? 1 : 0;
      }
      if (rho == 0.0) {
        const bool stable_by_formula = frob <= bd / (eta * eta * gamma);
        sgd_row_matches_bound = sgd_row_matches_bound &&
                                ((v.predicted == noise::Label::STABLE) == stable_by_formula) &&
                                ((eta <= eta_sgd) == stable_by_formula);
        if (!indet) {
          ++sgd_counted;
          sgd_agreed += agree ? 1 : 0;
        }
      } else {
        sam_below_sgd = sam_below_sgd &&
                        noise::sam_stability_threshold(eta, rho, bd, gamma) < bd / (eta * eta * gamma);
      }
      prow.push_back(noise::to_string(v.predicted));
      erow.push_back(noise::to_string(*v.empirical));
      table.add_row({io::fmt(eta), io::fmt(rho), io::fmt(v.bound_lhs), io::fmt(v.bound_rhs),
                     noise::to_string(v.predicted), noise::to_string(*v.empirical), agree ? "1" : "0",
                     io::fmt(v.final_mean_loss), io::fmt(v.empirical_rate.value_or(kNaN)),
                     v.overflow ? "1" : "0"});
    }
    pred.cells.push_back(prow);
    emp.cells.push_back(erow);
  }
  const double eta_mid = etas[etas.size() / 2];
  const double rho_mid = rhos[rhos.size() / 2];
  const double agreement = counted ? static_cast<double>(agreed) / counted : kNaN;
  s.metrics = {
      {"cells", etas.size() * rhos.size()},
      {"counted_cells", counted},
      {"agreeing_cells", agreed},
      {"indeterminate_cells", indeterminate},
      {"agreement_rate", finite_or_null(agreement)},
      {"frobenius_sq", frob},
      {"sgd_boundary_eta", eta_sgd},
      {"sgd_row_matches_bound", sgd_row_matches_bound},
      {"sgd_row_agreement", sgd_counted ? json(static_cast<double>(sgd_agreed) / sgd_counted) : json(nullptr)},
      {"sam_threshold_below_sgd", sam_below_sgd},
      {"threshold_scaling_2b_rho0", noise::sam_stability_threshold(eta_mid, 0.0, 2 * bd, gamma) /
                                        noise::sam_stability_threshold(eta_mid, 0.0, bd, gamma)},
      {"threshold_scaling_2b_mid_rho", noise::sam_stability_threshold(eta_mid, rho_mid, 2 * bd, gamma) /
                                           noise::sam_stability_threshold(eta_mid, rho_mid, bd, gamma)},
  };
  s.tables["phase_diagram"] = table;
  s.figures["predicted"] = svg_grid_plot(pred);
  s.figures["empirical"] = svg_grid_plot(emp);
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_convergence_check(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const json& p = config.params;
  const double mu = num(p, "mu");
  const double big_l = num(p, "L");
  const double sigma2 = num(p, "sigma2");
  const double bd = num(p, "batch");
  const double eta = num(p, "lr");
  const double rho = num(p, "rho");
  const long steps = integer(p, "steps");
  const double l0 = num(p, "initial_loss");
  if (!(mu > 0.0) || !(big_l >= mu)) throw ConfigError("convergence: need 0 < mu <= L");
  if (!(sigma2 >= 0.0) || !(bd >= 1.0) || bd != std::floor(bd)) {
    throw ConfigError("convergence: need sigma2 >= 0 and an integer batch >= 1");
  }
  const double eta_cap = std::min(1.0 / big_l, sigma2 > 0.0 ? mu * bd / (2.0 * big_l * sigma2) : 1.0 / big_l);
  const double rho_cap = std::min({1.0 / big_l, sigma2 > 0.0 ? mu * bd / (4.0 * big_l * sigma2) : 1.0 / big_l,
                                   eta * mu * mu / (24.0 * big_l * big_l)});
  char why[256];
  if (!(eta > 0.0) || eta > eta_cap) {
    std::snprintf(why, sizeof why,
                  "convergence: lr %.6g violates the hypothesis lr <= min{1/L, mu B/(2 L sigma2)} = %.6g",
                  eta, eta_cap);
    throw ConfigError(why);
  }
  if (!(rho >= 0.0) || rho > rho_cap) {
    std::snprintf(why, sizeof why,
                  "convergence: rho %.6g violates the hypothesis rho <= min{1/L, mu B/(4 L sigma2), "
                  "lr mu^2/(24 L^2)} = %.6g",
                  rho, rho_cap);
    throw ConfigError(why);
  }

  const auto model = models::QuadraticModel::diagonal({mu, big_l});
  // Batch-1 noise with E|xi|^2 = sigma2 L(theta) needs 2 c Tr G = sigma2.
  const double c = sigma2 / (2.0 * (mu + big_l));
  const auto channel = noise::NoiseChannel::loss_scaled(model.curvature(), static_cast<std::size_t>(bd), c);
  const auto run = noise::simulate_channel_sam(model, channel, eta, rho, config.trials,
                                               static_cast<int>(steps), l0, config.seed, true);
  s.trial_seeds = run.trial_seeds;

  io::CsvTable table;
  table.header = {"step", "mean_loss", "std_error", "bound", "holds"};
  bool all_hold = true;
  double worst = -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(config.trials);
  std::vector<double> col(static_cast<std::size_t>(config.trials));
  std::vector<double> xs, means, bounds;
  for (long t = 0; t <= steps; ++t) {
    for (int i = 0; i < config.trials; ++i) {
      col[static_cast<std::size_t>(i)] = run.trial_loss[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
    }
    const double m = pairwise_mean(col);
    double ss = 0.0;
    for (double x : col) ss += (x - m) * (x - m);
    const double se = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
    const double bound = std::pow(1.0 - eta * mu / 2.0, static_cast<double>(t)) * l0;
    const bool holds = std::isfinite(m) && m <= bound + 3.0 * se;
    all_hold = all_hold && holds;
    if (std::isfinite(m)) worst = std::max(worst, (m - bound) / bound);
    table.add_row({io::fmt(static_cast<long long>(t)), io::fmt(m), io::fmt(se), io::fmt(bound), holds ? "1" : "0"});
    xs.push_back(static_cast<double>(t));
    means.push_back(m);
    bounds.push_back(bound);
  }
  s.metrics = {
      {"eta_cap", eta_cap},
      {"rho_cap", rho_cap},
      {"noise_scale", c},
      {"bound_holds_all_steps", all_hold},
      {"max_relative_excess", worst},
      {"final_mean_loss", finite_or_null(run.mean_loss.back())},
      {"final_bound", bounds.back()},
  };
  s.tables["convergence"] = table;
  s.figures["convergence"] = svg_line_plot(
      {"Mean loss vs theoretical bound", "step", "loss", true, {{"mean loss", xs, means}, {"bound", xs, bounds}}});
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_landscape(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const json& p = config.params;
  const double a = num(p, "a");
  const double b = num(p, "b");
  const auto land = landscape::subquadratic_example(a, num(p, "epsilon"), b);
  const auto bounds = landscape::admissible_bounds(land);
  const long grid = integer(p, "grid_points");
  const long steps = integer(p, "steps");

  io::CsvTable grid_table;
  grid_table.header = {"eta", "rho", "theta0", "stayed_in_valley", "max_excursion", "first_exit_step"};
  int grid_exits = 0, grid_runs = 0, skipped_etas = 0;
  for (double eta : numbers(p, "etas")) {
    if (!(eta > 0.0) || eta > bounds.eta_max) {
      ++skipped_etas;
      continue;
    }
    const double rho = bounds.rho_max(eta, a);
    for (long k = 0; k < grid; ++k) {
      const double theta0 = -b + 2.0 * b * static_cast<double>(k + 1) / static_cast<double>(grid + 1);
      const auto rep = landscape::fullbatch_sam_1d(land, theta0, eta, rho, steps, false).second;
      ++grid_runs;
      grid_exits += rep.stayed_in_valley ? 0 : 1;
      grid_table.add_row({io::fmt(eta), io::fmt(rho), io::fmt(theta0), rep.stayed_in_valley ? "1" : "0",
                          io::fmt(rep.max_excursion),
                          rep.first_exit_step ? io::fmt(static_cast<long long>(*rep.first_exit_step)) : ""});
    }
  }

  io::CsvTable rand_table;
  rand_table.header = {"instance", "family", "a",  "b", "epsilon", "eta", "rho", "theta0",
                       "stayed_in_valley", "max_excursion"};
  const auto ra = numbers(p, "random_a");
  const auto rb = numbers(p, "random_b");
  const auto re = numbers(p, "random_epsilon");
  if (ra.size() != 2 || rb.size() != 2 || re.size() != 2) throw ConfigError("config: random ranges need [lo, hi]");
  int rand_exits = 0;
  for (int i = 0; i < config.trials; ++i) {
    const std::uint64_t ts = mix_seed(config.seed, static_cast<std::uint64_t>(i));
    s.trial_seeds.push_back(ts);
    Rng rng(ts);
    const double ia = rng.uniform(ra[0], ra[1]);
    const double ib = rng.uniform(rb[0], rb[1]);
    const double ie = rng.uniform(re[0], re[1]);
    const bool example = i % 2 == 0;
    const auto l = example ? landscape::subquadratic_example(ia, ie, ib) : landscape::logcosh_landscape(ia, ib);
    const auto bl = landscape::admissible_bounds(l);
    const double eta = rng.uniform() * bl.eta_max;
    const double rho = rng.uniform() * bl.rho_max(eta, ia);
    const double theta0 = rng.uniform(-1.0, 1.0) * ib;
    if (eta <= 0.0 || std::abs(theta0) >= ib) continue;
    const auto rep = landscape::fullbatch_sam_1d(l, theta0, eta, rho, integer(p, "random_steps"), false).second;
    rand_exits += rep.stayed_in_valley ? 0 : 1;
    rand_table.add_row({io::fmt(i), l.name(), io::fmt(ia), io::fmt(ib), example ? io::fmt(ie) : "",
                        io::fmt(eta), io::fmt(rho), io::fmt(theta0), rep.stayed_in_valley ? "1" : "0",
                        io::fmt(rep.max_excursion)});
  }

  // Quadratic valley: USAM escapes above 2/(a(1+a rho)) and contracts below it.
  const double qa = num(p, "quadratic_a");
  const double qrho = num(p, "quadratic_rho");
  const double q0 = num(p, "quadratic_theta0");
  const auto quad = landscape::quadratic_landscape(qa, 1.0);
  const double threshold = landscape::quadratic_escape_threshold(qa, qrho);
  const long qsteps = integer(p, "quadratic_steps");
  const auto esc = landscape::fullbatch_sam_1d(quad, q0, num(p, "eta_escape"), qrho, qsteps);
  const auto con = landscape::fullbatch_sam_1d(quad, q0, num(p, "eta_contract"), qrho, qsteps);
  const auto edge = landscape::fullbatch_sam_1d(quad, q0, threshold, qrho, integer(p, "boundary_steps"));
  double edge_dev = 0.0;
  for (double th : edge.first.theta) edge_dev = std::max(edge_dev, std::abs(std::abs(th) / std::abs(q0) - 1.0));
  const bool escaped = !esc.second.stayed_in_valley;
  const bool contracted = con.second.stayed_in_valley && std::abs(con.first.theta.back()) < std::abs(q0);

  s.metrics = {
      {"bounds", landscape::to_json(bounds)},
      {"grid_runs", grid_runs},
      {"grid_exits", grid_exits},
      {"etas_outside_hypothesis", skipped_etas},
      {"random_instances", config.trials},
      {"random_exits", rand_exits},
      {"quadratic_threshold", threshold},
      {"quadratic_escaped", escaped},
      {"quadratic_escape_step", esc.second.first_exit_step ? json(*esc.second.first_exit_step) : json(nullptr)},
      {"quadratic_contracted", contracted},
      {"quadratic_final_abs_theta", std::abs(con.first.theta.back())},
      {"boundary_magnitude_max_deviation", edge_dev},
  };
  s.tables["containment_grid"] = grid_table;
  s.tables["containment_random"] = rand_table;
  s.tables["landscape_curve"] = landscape::curve_csv(land);
  s.tables["quadratic_escape"] = landscape::trajectory_csv(esc.first);
  s.tables["quadratic_contract"] = landscape::trajectory_csv(con.first);

  const auto curve = landscape::curve_csv(land);
  Series lc{"L(z)", {}, {}};
  for (std::size_t i = 0; i < curve.rows.size(); ++i) {
    lc.x.push_back(curve.number(i, 0));
    lc.y.push_back(curve.number(i, 1));
  }
  s.figures["landscape"] = svg_line_plot({"Sub-quadratic valley", "z", "loss", false, {lc}});
  auto abs_series = [](const landscape::Trajectory1D& t, const std::string& name) {
    Series out{name, iota_d(t.theta.size()), {}};
    for (double th : t.theta) out.y.push_back(std::abs(th));
    return out;
  };
  s.figures["quadratic_escape"] = svg_line_plot({"USAM on a quadratic valley", "step", "|theta|", true,
                                                 {abs_series(esc.first, "eta escape"),
                                                  abs_series(con.first, "eta contract")}});
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_lemma_b1(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const long steps = integer(config.params, "steps");
  const auto curves = noise::lemma_b1_demo(static_cast<int>(steps), config.trials, config.seed);
  for (int i = 0; i < config.trials; ++i) s.trial_seeds.push_back(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
  io::CsvTable table;
  table.header = {"step", "mean_loss", "mean_norm_sq", "sd_norm_sq", "expected_norm_sq"};
  double loss_dev = 0.0;
  for (std::size_t t = 0; t < curves.mean_loss.size(); ++t) {
    loss_dev = std::max(loss_dev, std::abs(curves.mean_loss[t] - 0.5));
    table.add_row({io::fmt(t), io::fmt(curves.mean_loss[t]), io::fmt(curves.mean_norm_sq[t]),
                   io::fmt(curves.sd_norm_sq[t]), io::fmt(2.0 + static_cast<double>(t))});
  }
  const double m = curves.mean_norm_sq.back();
  const double se = curves.sd_norm_sq.back() / std::sqrt(static_cast<double>(config.trials));
  const double expected = 2.0 + static_cast<double>(steps);
  s.metrics = {
      {"max_loss_deviation", loss_dev},
      {"loss_constant", loss_dev == 0.0},
      {"final_mean_norm_sq", m},
      {"final_std_error", se},
      {"expected_norm_sq", expected},
      {"norm_within_3_sigma", std::abs(m - expected) <= 3.0 * se},
  };
  s.tables["lemma_b1"] = table;
  const auto xs = iota_d(curves.mean_loss.size());
  std::vector<double> ex;
  for (double x : xs) ex.push_back(2.0 + x);
  s.figures["norm"] = svg_line_plot({"Parameter norm grows while loss stays flat", "step", "value", false,
                                     {{"E|theta|^2", xs, curves.mean_norm_sq}, {"2 + t", xs, ex},
                                      {"E L", xs, curves.mean_loss}}});
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_escape_rate(const ExperimentConfig& config) {
  const auto t_start = std::chrono::steady_clock::now();
  RunSummary s = start(config);
  const json& p = config.params;
  const double a = num(p, "a");
  const long batch = integer(p, "batch");
  const double gamma = num(p, "gamma");
  const double eta = num(p, "lr");
  const double rho = num(p, "rho");
  if (batch < 1) throw ConfigError("config: batch must be >= 1");
  const auto model = models::QuadraticModel::diagonal({a});
  const auto channel = noise::NoiseChannel::loss_scaled(model.curvature(), static_cast<std::size_t>(batch), gamma);
  const auto est = noise::estimate_escape_rate(model, channel, eta, rho, config.trials,
                                               static_cast<int>(integer(p, "steps")), num(p, "initial_loss"),
                                               config.seed, static_cast<int>(integer(p, "bootstrap")));
  for (int i = 0; i < config.trials; ++i) s.trial_seeds.push_back(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
  const double bd = static_cast<double>(batch);
  const double lower = noise::escape_constant(eta, rho, bd, gamma, a * a);
  const double s2 = gamma / bd;
  const double ra = 1.0 + rho * a;
  const double exact = 1.0 - 2.0 * eta * a * ra + eta * eta * a * a * (1.0 + s2) * (ra * ra + rho * rho * a * a * s2);
  s.metrics = {
      {"rate", est.rate},
      {"sigma", est.sigma},
      {"naive_rate", est.naive_rate},
      {"predicted_lower", lower},
      {"one_step_factor", exact},
      {"above_lower_bound", est.rate >= lower - 3.0 * est.sigma},
      {"matches_one_step_factor", std::abs(est.rate - exact) <= 3.0 * est.sigma},
  };
  io::CsvTable table;
  table.header = {"step", "mean_loss", "ratio_curve"};
  for (std::size_t t = 0; t < est.mean_loss.size(); ++t) {
    table.add_row({io::fmt(t), io::fmt(est.mean_loss[t]),
                   io::fmt(t < est.ratio_curve.size() ? est.ratio_curve[t] : kNaN)});
  }
  s.tables["escape"] = table;
  const auto xs = iota_d(est.mean_loss.size());
  std::vector<double> lb;
  for (double x : xs) lb.push_back(num(p, "initial_loss") * std::pow(lower, x));
  s.figures["escape"] = svg_line_plot({"Mean loss growth", "step", "loss", true,
                                       {{"ratio-product", iota_d(est.ratio_curve.size()), est.ratio_curve},
                                        {"mean loss", xs, est.mean_loss}, {"lower bound", xs, lb}}});
  s.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return s;
}

RunSummary run_experiment(const ExperimentConfig& config) {
  switch (config.kind) {
    case ExperimentKind::TWO_PHASE_TOY: return run_two_phase_toy(config);
    case ExperimentKind::SWITCH_SWEEP_MLP: return run_switch_sweep(config);
    case ExperimentKind::STABILITY_DIAGRAM: return run_stability_diagram(config);
    case ExperimentKind::LANDSCAPE_1D: return run_landscape(config);
    case ExperimentKind::CONVERGENCE_RATE: return run_convergence_check(config);
    case ExperimentKind::INTERPOLATION_PROBE: return run_interpolation(config);
    case ExperimentKind::LEMMA_B1: return run_lemma_b1(config);
    case ExperimentKind::ESCAPE_RATE: return run_escape_rate(config);
  }
  throw UsageError("unknown experiment kind");
}

}  // namespace samlab::harness
