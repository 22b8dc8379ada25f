#include "samlab/harness.hpp"

#include "samlab/core.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace samlab::harness {

using nlohmann::json;

namespace {

const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names = {
      {ExperimentKind::TWO_PHASE_TOY, "TWO_PHASE_TOY"},
      {ExperimentKind::SWITCH_SWEEP_MLP, "SWITCH_SWEEP_MLP"},
      {ExperimentKind::STABILITY_DIAGRAM, "STABILITY_DIAGRAM"},
      {ExperimentKind::LANDSCAPE_1D, "LANDSCAPE_1D"},
      {ExperimentKind::CONVERGENCE_RATE, "CONVERGENCE_RATE"},
      {ExperimentKind::INTERPOLATION_PROBE, "INTERPOLATION_PROBE"},
      {ExperimentKind::LEMMA_B1, "LEMMA_B1"},
      {ExperimentKind::ESCAPE_RATE, "ESCAPE_RATE"},
  };
  return names;
}

json toy_params() {
  return {
      {"theta0", {2.5, 0.3}},
      {"lr", 2.05},
      {"after_family", "USAM"},
      {"rho", 0.05},
      {"plateau_loss", 1e-8},
      {"plateau_rel", 1e-10},
      {"plateau_window", 100},
      {"max_sgd_steps", 200000},
      {"post_steps", 5000},
      {"valley_guard", 1.0},
      {"u_floor", 0.1},
      {"escape_factor", 1e3},
      {"sharpness_drop", 0.01},
  };
}

bool same_type(const json& want, const json& got) {
  if (want.is_number()) return got.is_number();
  return want.type() == got.type();
}

// Overlays `user` on `defaults`, rejecting unknown keys and type changes.
void merge_into(json& defaults, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key)) throw ConfigError("config: unknown key " + where + "." + key);
    json& slot = defaults[key];
    if (!same_type(slot, value)) {
      throw ConfigError("config: " + where + "." + key + " has type " +
                        std::string(value.type_name()) + ", expected " + slot.type_name());
    }
    if (slot.is_object()) {
      merge_into(slot, value, where + "." + key);
    } else {
      slot = value;
    }
  }
}

}  // namespace

std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kind_names()) {
    if (kind == k) return name;
  }
  throw UsageError("unknown experiment kind");
}

ExperimentKind kind_from_string(const std::string& s) {
  std::string up = s;
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return c == '-' ? '_' : static_cast<char>(std::toupper(c)); });
  for (const auto& [kind, name] : kind_names()) {
    if (name == up) return kind;
  }
  throw ConfigError("unknown experiment kind: " + s);
}

std::vector<ExperimentKind> all_kinds() {
  std::vector<ExperimentKind> out;
  for (const auto& entry : kind_names()) out.push_back(entry.first);
  return out;
}

json default_params(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::TWO_PHASE_TOY:
      return toy_params();
    case ExperimentKind::INTERPOLATION_PROBE:
      return {
          {"theta_a", json::array()},
          {"theta_b", json::array()},
          {"toy", toy_params()},
          {"grid_size", 61},
          {"h", 0.1},
          {"margin", 0.25},
      };
    case ExperimentKind::SWITCH_SWEEP_MLP:
      return {
          {"n", 256},
          {"d", 10},
          {"teacher_hidden", 8},
          {"hidden", 32},
          {"init_scale", 0.5},
          {"heldout", 1024},
          {"lr", 0.5},
          {"batch", 32},
          {"total_steps", 40000},
          {"rho", 0.2},
          {"sam_family", "SAM"},
          {"momentum", 0.0},
          {"weight_decay", 0.0},
          {"sgd_to_sam", {0.0, 0.1, 0.2, 0.5, 1.0}},
          {"sam_to_sgd", {0.0, 0.2, 0.5, 0.8, 1.0}},
          {"power_tol", 1e-6},
          {"power_max_iters", 2000},
      };
    case ExperimentKind::STABILITY_DIAGRAM:
      return {
          {"dim", 32},
          {"batch", 32},
          {"curvature", 1.0},
          {"gamma", 1.0},
          {"eta_min", 0.5},
          {"eta_max", 1.5},
          {"eta_count", 10},
          {"rho_min", 0.0},
          {"rho_max", 0.1},
          {"rho_count", 10},
          {"horizon", 500},
          {"initial_loss", 1e-6},
      };
    case ExperimentKind::LANDSCAPE_1D:
      return {
          {"a", 1.0},
          {"epsilon", 0.1},
          {"b", 1.0},
          {"etas", {0.5, 2.0, 5.0, 10.0, 20.0}},
          {"grid_points", 50},
          {"steps", 100000},
          {"random_steps", 100000},
          {"random_a", {0.5, 2.0}},
          {"random_b", {0.5, 2.0}},
          {"random_epsilon", {0.02, 0.5}},
          {"quadratic_a", 1.0},
          {"quadratic_rho", 0.05},
          {"eta_escape", 1.91},
          {"eta_contract", 1.90},
          {"quadratic_theta0", 0.01},
          {"quadratic_steps", 10000},
          {"boundary_steps", 1000},
      };
    case ExperimentKind::CONVERGENCE_RATE:
      return {
          {"mu", 0.5},
          {"L", 2.0},
          {"sigma2", 1.0},
          {"batch", 4},
          {"lr", 0.25},
          {"rho", 5e-4},
          {"steps", 100},
          {"initial_loss", 1.0},
      };
    case ExperimentKind::LEMMA_B1:
      return {{"steps", 10}};
    case ExperimentKind::ESCAPE_RATE:
      return {
          {"a", 1.0},
          {"batch", 1},
          {"gamma", 1.0},
          {"lr", 1.2},
          {"rho", 0.05},
          {"steps", 40},
          {"initial_loss", 1e-6},
          {"bootstrap", 200},
      };
  }
  throw UsageError("unknown experiment kind");
}

int default_trials(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::STABILITY_DIAGRAM: return 16;
    case ExperimentKind::LANDSCAPE_1D: return 200;
    case ExperimentKind::CONVERGENCE_RATE: return 200;
    case ExperimentKind::LEMMA_B1: return 10000;
    case ExperimentKind::ESCAPE_RATE: return 100;
    default: return 1;
  }
}

json ExperimentConfig::to_json() const {
  return {
      {"schema_version", kSchemaVersion},
      {"kind", to_string(kind)},
      {"seed", seed},
      {"trials", trials},
      {"output_dir", output_dir},
      {"params", params},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const std::vector<std::string> allowed = {"schema_version", "kind", "seed", "trials",
                                                   "output_dir", "params"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("config: unknown key " + key);
    }
  }
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != kSchemaVersion) {
    throw ConfigError("config: schema_version must be " + std::to_string(kSchemaVersion));
  }
  if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("config: kind is required");

  ExperimentConfig c;
  c.kind = kind_from_string(j["kind"].get<std::string>());
  c.trials = default_trials(c.kind);
  c.params = default_params(c.kind);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("config: seed must be an unsigned integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("trials")) {
    if (!j["trials"].is_number_integer() || j["trials"].get<long long>() < 1) {
      throw ConfigError("config: trials must be an integer >= 1");
    }
    c.trials = j["trials"].get<int>();
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("config: output_dir must be a string");
    c.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("params")) merge_into(c.params, j["params"], "params");
  return c;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.trials = default_trials(kind);
  c.params = default_params(kind);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = io::read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

}  // namespace samlab::harness
