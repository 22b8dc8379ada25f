#include "samlab/core.hpp"
#include "samlab/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

namespace h = samlab::harness;

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::string format = "csv";
  bool svg = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "Experiment config (JSON)");
  sub->add_option("--out", f.out, "Output root directory (default: config output_dir)");
  sub->add_option("--seed", f.seed, "Base seed");
  sub->add_option("--trials", f.trials, "Number of trials")->check(CLI::PositiveNumber);
  sub->add_option("--format", f.format, "Table format")->check(CLI::IsMember({"csv", "json"}));
  sub->add_flag("--svg", f.svg, "Also write SVG figures");
}

int run(h::ExperimentKind kind, const CommonFlags& f) {
  h::ExperimentConfig cfg = f.config.empty() ? h::default_config(kind) : h::load_config(f.config);
  if (cfg.kind != kind) {
    throw samlab::ConfigError("config kind " + h::to_string(cfg.kind) + " does not match the subcommand");
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.trials) cfg.trials = *f.trials;
  h::EmitOptions opts{h::format_from_string(f.format), f.svg};
  auto summary = h::run_experiment(cfg);
  const auto dir = h::emit_report(summary, f.out.empty() ? cfg.output_dir : f.out, opts);
  std::cout << dir.string() << '\n' << summary.metrics.dump(2) << '\n';
  return kOk;
}

int report(const std::string& run_dir) {
  const std::filesystem::path dir(run_dir);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(samlab::io::read_text_file(dir / "summary.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw samlab::ConfigError(std::string("summary.json is not valid JSON: ") + e.what());
  }
  const auto problems = h::validate_summary(doc, dir);
  for (const auto& p : problems) std::cerr << "invalid: " << p << '\n';
  if (!problems.empty()) return kConfig;
  std::cout << doc["kind"].get<std::string>() << '\n' << doc["metrics"].dump(2) << '\n';
  for (const auto& [name, path] : doc["files"].items()) {
    std::cout << "  " << name << ": " << path.get<std::string>() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"samlab: sharpness-aware minimization experiments"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, h::ExperimentKind>> commands = {
      {"two-phase", h::ExperimentKind::TWO_PHASE_TOY},
      {"switch-sweep", h::ExperimentKind::SWITCH_SWEEP_MLP},
      {"stability", h::ExperimentKind::STABILITY_DIAGRAM},
      {"landscape", h::ExperimentKind::LANDSCAPE_1D},
      {"converge", h::ExperimentKind::CONVERGENCE_RATE},
      {"interpolate", h::ExperimentKind::INTERPOLATION_PROBE},
      {"lemma-b1", h::ExperimentKind::LEMMA_B1},
      {"escape-rate", h::ExperimentKind::ESCAPE_RATE},
  };
  CommonFlags flags;
  std::vector<std::pair<CLI::App*, h::ExperimentKind>> subs;
  for (const auto& [name, kind] : commands) {
    auto* sub = app.add_subcommand(name, "Run the " + h::to_string(kind) + " experiment");
    add_common(sub, flags);
    subs.emplace_back(sub, kind);
  }
  std::string run_dir;
  auto* rep = app.add_subcommand("report", "Validate a run directory and print its metrics");
  rep->add_option("run_dir", run_dir, "Run directory containing summary.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (rep->parsed()) return report(run_dir);
    for (const auto& [sub, kind] : subs) {
      if (sub->parsed()) return run(kind, flags);
    }
  } catch (const samlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const samlab::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kConfig;
  } catch (const samlab::CapabilityError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const samlab::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const samlab::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  }
  return kConfig;
}
