// Acceptance run: one PASS/FAIL line per criterion.

#include "oracles.hpp"

#include "samlab/curvature.hpp"
#include "samlab/harness.hpp"
#include "samlab/models.hpp"
#include "samlab/optimizers.hpp"
#include "samlab/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

using namespace samlab;
using namespace samlab::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

int failures = 0;

void criterion(const char* id, const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_budget = budget_s <= 0 || secs < budget_s;
  const bool pass = o.pass && in_budget;
  if (!pass) ++failures;
  std::printf("%s %s %s: %s [%.2f s%s]\n", id, pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs,
              in_budget ? "" : ", over budget");
  std::fflush(stdout);
}

ParamVector random_vector(Rng& rng, Eigen::Index n, double scale) {
  ParamVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

bool flag(const json& m, const char* key) { return m.at(key).is_boolean() && m.at(key).get<bool>(); }
double val(const json& m, const char* key) {
  return m.at(key).is_number() ? m.at(key).get<double>() : std::nan("");
}

std::map<ExperimentKind, RunSummary> runs;

const RunSummary& run_default(ExperimentKind kind) {
  auto it = runs.find(kind);
  if (it == runs.end()) it = runs.emplace(kind, run_experiment(default_config(kind))).first;
  return it->second;
}

}  // namespace

int main() {
  criterion("AC1", "gradient fidelity", 10, [] {
    Rng rng(101);
    models::ToyModel toy;
    auto data = std::make_shared<models::SyntheticDataset>(models::make_synthetic_dataset(5, 40, 5, 4));
    models::MlpModel mlp(8, data);
    Matrix a = Matrix::Zero(4, 4);
    for (Eigen::Index i = 0; i < 16; ++i) a.data()[i] = rng.normal();
    models::QuadraticModel quad(a * a.transpose(), random_vector(rng, 4, 1.0));
    const auto one = full_batch(1);
    double worst[3] = {0, 0, 0};
    for (int k = 0; k < 100; ++k) {
      const ParamVector t = random_vector(rng, 2, 1.5);
      worst[0] = std::max(worst[0], oracle::rel_err(toy.loss_grad(t, one).grad,
                                                    oracle::fd_gradient([&](const ParamVector& x) { return toy.loss(x, one); }, t)));
      const ParamVector q = random_vector(rng, 4, 1.0);
      worst[1] = std::max(worst[1], oracle::rel_err(quad.loss_grad(q, one).grad,
                                                    oracle::fd_gradient([&](const ParamVector& x) { return quad.loss(x, one); }, q)));
      const ParamVector m = models::mlp_random_init(mlp.shape(), 1.0, rng.next_u64());
      std::vector<std::size_t> batch;
      for (int i = 0; i < 10; ++i) batch.push_back(rng.below(40));
      worst[2] = std::max(worst[2], oracle::rel_err(mlp.loss_grad(m, batch).grad,
                                                    oracle::fd_gradient([&](const ParamVector& x) { return mlp.loss(x, batch); }, m)));
    }
    const double w = std::max({worst[0], worst[1], worst[2]});
    return Outcome{w <= 1e-5, fmt("worst relative error toy %.2e, quadratic %.2e, mlp %.2e over 100 checks each",
                                  worst[0], worst[1], worst[2])};
  });

  criterion("AC2", "sharpness probes", 30, [] {
    const auto q = models::QuadraticModel::diagonal({3.0, 1.0, 0.5});
    const ParamVector at = ParamVector::Zero(3);
    const double top = curvature::spectral_norm(q, at, 1e-10, 1000, 7).spectral_norm;
    const double tr = curvature::hutchinson_trace(q, at, 10000, 8);
    const double fr = curvature::frobenius_sq(q, at, 10000, 9);
    bool ok = std::abs(top - 3.0) <= 1e-6 && std::abs(tr - 4.5) <= 0.02 * 4.5 && std::abs(fr - 10.25) <= 0.02 * 10.25;
    const models::ToyModel toy;
    double worst = 0.0;
    for (double u : {0.5, 1.0, 2.0}) {
      const double s = curvature::spectral_norm(toy, ParamVector{{u, 0.0}}, 1e-12, 1000, 3).spectral_norm;
      worst = std::max(worst, std::abs(s - std::pow(std::tanh(u), 2)));
    }
    ok = ok && worst <= 1e-6;
    return Outcome{ok, fmt("||H||=%.9g trace=%.5g frob=%.5g toy max|err|=%.1e", top, tr, fr, worst)};
  });

  criterion("AC3", "quadratic escape threshold", 5, [] {
    const auto cfg = ExperimentConfig::from_json(
        {{"schema_version", 1}, {"kind", "LANDSCAPE_1D"}, {"trials", 1},
         {"params", {{"grid_points", 1}, {"steps", 1}, {"random_steps", 1}}}});
    const auto m = run_landscape(cfg).metrics;
    const double th = val(m, "quadratic_threshold");
    const bool ok = flag(m, "quadratic_escaped") && flag(m, "quadratic_contracted") &&
                    std::abs(th - 2.0 / 1.05) <= 1e-15 && val(m, "boundary_magnitude_max_deviation") <= 1e-12;
    return Outcome{ok, fmt("threshold %.15g, escape at 1.91 (step %g), contract at 1.90, boundary drift %.1e",
                           th, val(m, "quadratic_escape_step"), val(m, "boundary_magnitude_max_deviation"))};
  });

  criterion("AC4", "valley containment", 120, [] {
    const auto& s = run_default(ExperimentKind::LANDSCAPE_1D);
    const auto& m = s.metrics;
    double eta_max_used = 0.0;
    for (double e : s.config["params"]["etas"].get<std::vector<double>>()) eta_max_used = std::max(eta_max_used, e);
    const bool ok = m["grid_exits"].get<int>() == 0 && m["random_exits"].get<int>() == 0 &&
                    m["grid_runs"].get<int>() == 50 * static_cast<int>(s.config["params"]["etas"].size()) &&
                    m["etas_outside_hypothesis"].get<int>() == 0 && m["random_instances"].get<int>() == 200 &&
                    s.config["params"]["steps"].get<long>() == 100000 && eta_max_used == 20.0;
    return Outcome{ok, fmt("%g grid runs (eta up to %g, 1e5 steps) with %g exits; 200 random instances with %g exits",
                           m["grid_runs"].get<double>(), eta_max_used, m["grid_exits"].get<double>(),
                           m["random_exits"].get<double>())};
  });

  criterion("AC5", "escape rate", 60, [] {
    const auto& m = run_default(ExperimentKind::ESCAPE_RATE).metrics;
    const double rate = val(m, "rate"), sigma = val(m, "sigma"), c = val(m, "predicted_lower");
    const bool ok = std::abs(c - 1.4436) <= 1e-12 && rate + 3.0 * sigma >= c;
    return Outcome{ok, fmt("fitted rate %.4f +- %.4f (100 trials), lower bound C = %.4f, one-step factor %.4f",
                           rate, sigma, c, val(m, "one_step_factor"))};
  });

  criterion("AC6", "stability thresholds", 300, [] {
    const auto& m = run_default(ExperimentKind::STABILITY_DIAGRAM).metrics;
    const double rate = val(m, "agreement_rate");
    const bool ok = m["cells"].get<int>() == 100 && rate >= 0.95 && flag(m, "sgd_row_matches_bound") &&
                    flag(m, "sam_threshold_below_sgd");
    return Outcome{ok, fmt("agreement %.3f over %g non-indeterminate cells, SGD boundary eta %.4g, 2B scaling %.4g",
                           rate, m["counted_cells"].get<double>(), val(m, "sgd_boundary_eta"),
                           val(m, "threshold_scaling_2b_rho0"))};
  });

  criterion("AC7", "convergence rate", 120, [] {
    const auto& s = run_default(ExperimentKind::CONVERGENCE_RATE);
    const auto& m = s.metrics;
    const bool ok = flag(m, "bound_holds_all_steps") && s.trial_seeds.size() == 200;
    return Outcome{ok, fmt("E[L_t] <= (1 - eta mu/2)^t L0 within 3 sigma at all %g recorded steps over 200 trials "
                           "(final mean %.3e, bound %.3e)",
                           static_cast<double>(s.tables.at("convergence").rows.size()), val(m, "final_mean_loss"),
                           val(m, "final_bound"))};
  });

  criterion("AC8", "two-phase toy", 10, [] {
    const auto& m = run_default(ExperimentKind::TWO_PHASE_TOY).metrics;
    const double v_end = std::abs(m["theta_sam_end"][1].get<double>());
    const double s_sam = std::pow(std::tanh(m["theta_sam_end"][0].get<double>()), 2);
    const double s_sgd = std::pow(std::tanh(m["theta_sgd_end"][0].get<double>()), 2);
    const bool transient = flag(m, "escape_by_loss") && val(m, "final_loss_sam") < val(m, "loss_at_switch");
    const bool ok = v_end < 1e-3 && s_sam < s_sgd && transient && flag(m, "same_valley");
    return Outcome{ok, fmt("|v_end| %.1e, sharpness SAM %.4f < SGD %.4f, loss rose x%.3g after the switch",
                           v_end, s_sam, s_sgd, val(m, "loss_rise_factor"))};
  });

  criterion("AC9", "interpolation probe", 5, [] {
    const auto& s = run_default(ExperimentKind::INTERPOLATION_PROBE);
    const auto& m = s.metrics;
    const bool ok = val(m, "barrier") <= 1e-6 && val(m, "monotonicity") >= 0.9 && val(m, "h") == 0.1;
    return Outcome{ok, fmt("barrier %.3g, Spearman(lambda, L'') %.3f, h %.2g", val(m, "barrier"),
                           val(m, "monotonicity"), val(m, "h"))};
  });

  criterion("AC10", "switch-sweep direction", 600, [] {
    const auto& m = run_default(ExperimentKind::SWITCH_SWEEP_MLP).metrics;
    const bool a = flag(m, "sgd_to_sam_close_to_sam");
    const bool b = flag(m, "sgd_to_sam_below_half_sgd");
    const bool c = flag(m, "sam_to_sgd_close_to_sgd");
    return Outcome{a && b && c,
                   fmt("SGD->SAM 0.1 / pure SAM = %.3f, / pure SGD = %.3f; SAM->SGD 0.8 / pure SGD = %.3f (need >= 0.8)",
                       val(m, "ratio_p01_to_pure_sam"), val(m, "ratio_p01_to_pure_sgd"),
                       val(m, "ratio_p08_to_pure_sgd"))};
  });

  criterion("AC11", "lemma demo", 10, [] {
    const auto& m = run_default(ExperimentKind::LEMMA_B1).metrics;
    const bool ok = flag(m, "loss_constant") && flag(m, "norm_within_3_sigma");
    return Outcome{ok, fmt("max |E L - 0.5| = %.1e, E|theta_10|^2 = %.4f +- %.4f (expected %.0f)",
                           val(m, "max_loss_deviation"), val(m, "final_mean_norm_sq"), val(m, "final_std_error"),
                           val(m, "expected_norm_sq"))};
  });

  criterion("AC12", "reproducibility", 0, [] {
    const fs::path root = fs::temp_directory_path() / "samlab_acceptance";
    fs::remove_all(root);
    int tables = 0, mismatched = 0;
    for (auto kind : all_kinds()) {
      RunSummary first = run_default(kind);
      const auto dir = emit_report(first, root);
      const auto again = run_experiment(load_config(dir / "config.json"));
      for (const auto& [name, table] : again.tables) {
        ++tables;
        if (io::to_csv_text(table) != io::read_text_file(dir / first.files.at(name))) ++mismatched;
      }
    }
    fs::remove_all(root);

    // schedule endpoints against hand-rolled pure runs
    auto data = std::make_shared<models::SyntheticDataset>(models::make_synthetic_dataset(11, 64, 6, 4));
    const models::MlpModel model(12, data);
    const ParamVector theta0 = models::mlp_random_init(model.shape(), 0.5, 12);
    const optim::OptimizerConfig sgd{optim::Family::SGD, 0.3, 0.0, 16};
    const optim::OptimizerConfig sam{optim::Family::SAM, 0.3, 0.1, 16};
    const long total = 500;
    const auto pure_sgd = optim::run_schedule(model, theta0, {total, total, sgd, sam}, 77).final_theta;
    const auto pure_sam = optim::run_schedule(model, theta0, {total, 0, sgd, sam}, 77).final_theta;
    optim::BatchSampler s1(64, 16, 77), s2(64, 16, 77);
    ParamVector a = theta0, b = theta0;
    for (long t = 0; t < total; ++t) {
      a = optim::sgd_step(model, a, s1.next(), 0.3);
      b = optim::sam_step(model, b, s2.next(), 0.3, 0.1);
    }
    const bool endpoints = (a.array() == pure_sgd.array()).all() && (b.array() == pure_sam.array()).all();
    return Outcome{mismatched == 0 && endpoints && tables > 0,
                   fmt("%g of %g CSV tables byte-identical after re-running persisted configs; schedule endpoints bit-exact: ",
                       tables - mismatched, tables) + (endpoints ? "yes" : "no")};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
