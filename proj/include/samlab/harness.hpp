#pragma once

#include "samlab/io.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace samlab::harness {

inline constexpr int kSchemaVersion = 1;

enum class ExperimentKind {
  TWO_PHASE_TOY,
  SWITCH_SWEEP_MLP,
  STABILITY_DIAGRAM,
  LANDSCAPE_1D,
  CONVERGENCE_RATE,
  INTERPOLATION_PROBE,
  LEMMA_B1,
  ESCAPE_RATE,
};

std::string to_string(ExperimentKind k);
ExperimentKind kind_from_string(const std::string& s);
std::vector<ExperimentKind> all_kinds();

/// Kind-specific parameters with every default filled in.
nlohmann::json default_params(ExperimentKind kind);
/// Default trial count per kind (Monte-Carlo trials, random instances or seeds).
int default_trials(ExperimentKind kind);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::TWO_PHASE_TOY;
  std::uint64_t seed = 0;
  int trials = 1;
  std::string output_dir = "runs";
  nlohmann::json params = nlohmann::json::object();

  /// Complete, canonical form (schema_version, kind, seed, trials,
  /// output_dir, params).
  nlohmann::json to_json() const;
  /// Missing params take their defaults; unknown keys, a wrong
  /// schema_version or wrongly typed values raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// 16 hex digits of FNV-1a over the canonical JSON without output_dir.
  std::string hash() const;
};

ExperimentConfig default_config(ExperimentKind kind);
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunSummary {
  int schema_version = kSchemaVersion;
  ExperimentKind kind = ExperimentKind::TWO_PHASE_TOY;
  nlohmann::json config;
  double wall_time_s = 0.0;
  std::vector<std::uint64_t> trial_seeds;
  /// Headline numbers, verdicts and booleans; deterministic in the config.
  nlohmann::json metrics = nlohmann::json::object();
  /// Logical name -> path relative to the run directory (set by emit_report).
  std::map<std::string, std::string> files;

  // Artifacts held in memory until emit_report writes them.
  std::map<std::string, io::CsvTable> tables;
  std::map<std::string, std::string> figures;  // name -> SVG markup

  nlohmann::json to_json() const;
  static RunSummary from_json(const nlohmann::json& j);
};

/// Problems found in a summary document; empty when it is valid. With a
/// run directory every referenced file must also exist and be non-empty.
std::vector<std::string> validate_summary(const nlohmann::json& summary,
                                          const std::filesystem::path& run_dir = {});

RunSummary run_two_phase_toy(const ExperimentConfig& config);
RunSummary run_switch_sweep(const ExperimentConfig& config);
RunSummary run_stability_diagram(const ExperimentConfig& config);
RunSummary run_landscape(const ExperimentConfig& config);
RunSummary run_convergence_check(const ExperimentConfig& config);
RunSummary run_interpolation(const ExperimentConfig& config);
RunSummary run_lemma_b1(const ExperimentConfig& config);
RunSummary run_escape_rate(const ExperimentConfig& config);
RunSummary run_experiment(const ExperimentConfig& config);

enum class TableFormat { CSV, JSON };
TableFormat format_from_string(const std::string& s);

struct EmitOptions {
  TableFormat format = TableFormat::CSV;
  bool svg = false;
};

/// Writes <out_root>/<kind>-<hash>/ with config.json, summary.json,
/// tables/<name>.csv|json and, with svg set, figures/<name>.svg. Everything
/// goes to a staging directory first and is moved into place with one
/// rename, so a failure leaves no partial run directory. Throws IoError.
/// Returns the run directory and fills summary.files.
std::filesystem::path emit_report(RunSummary& summary, const std::filesystem::path& out_root,
                                  const EmitOptions& options = {});

// --- SVG -------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool log_y = false;
  std::vector<Series> series;
};

std::string svg_line_plot(const LinePlot& plot);

/// Colored cell grid; `cells[row][col]` is a label mapped through `colors`.
/// Rows run along y (bottom to top), columns along x.
struct GridPlot {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<std::vector<std::string>> cells;
  std::map<std::string, std::string> colors;
};

std::string svg_grid_plot(const GridPlot& plot);

/// Minimal XML well-formedness check: balanced and properly nested tags,
/// quoted attributes, escaped text, a single <svg> root element.
bool svg_well_formed(const std::string& text, std::string* error = nullptr);

}  // namespace samlab::harness
