#include "samlab/harness.hpp"

#include "samlab/core.hpp"

#include <cctype>
#include <fstream>
#include <system_error>
#include <unistd.h>

namespace samlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

json RunSummary::to_json() const {
  json f = json::object();
  for (const auto& [name, path] : files) f[name] = path;
  return {
      {"schema_version", schema_version},
      {"kind", harness::to_string(kind)},
      {"config", config},
      {"wall_time_s", wall_time_s},
      {"trial_seeds", trial_seeds},
      {"metrics", metrics},
      {"files", f},
  };
}

RunSummary RunSummary::from_json(const json& j) {
  const auto problems = validate_summary(j);
  if (!problems.empty()) throw ConfigError("summary: " + problems.front());
  RunSummary s;
  s.schema_version = j["schema_version"].get<int>();
  s.kind = kind_from_string(j["kind"].get<std::string>());
  s.config = j["config"];
  s.wall_time_s = j["wall_time_s"].get<double>();
  s.trial_seeds = j["trial_seeds"].get<std::vector<std::uint64_t>>();
  s.metrics = j["metrics"];
  for (const auto& [name, path] : j["files"].items()) s.files[name] = path.get<std::string>();
  return s;
}

std::vector<std::string> validate_summary(const json& j, const fs::path& run_dir) {
  std::vector<std::string> out;
  if (!j.is_object()) return {"summary must be an object"};
  static const std::vector<std::string> keys = {"schema_version", "kind",    "config", "wall_time_s",
                                                "trial_seeds",    "metrics", "files"};
  for (const auto& k : keys) {
    if (!j.contains(k)) out.push_back("missing key " + k);
  }
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) out.push_back("unknown key " + k);
  }
  if (!out.empty()) return out;

  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion) {
    out.push_back("schema_version must be " + std::to_string(kSchemaVersion));
  }
  if (!j["kind"].is_string()) {
    out.push_back("kind must be a string");
  } else {
    try {
      kind_from_string(j["kind"].get<std::string>());
    } catch (const ConfigError&) {
      out.push_back("unknown kind " + j["kind"].get<std::string>());
    }
  }
  try {
    const auto cfg = ExperimentConfig::from_json(j["config"]);
    if (j["kind"].is_string() && to_string(cfg.kind) != j["kind"].get<std::string>()) {
      out.push_back("config kind does not match summary kind");
    }
  } catch (const ConfigError& e) {
    out.push_back(std::string("config invalid: ") + e.what());
  }
  if (!j["wall_time_s"].is_number() || j["wall_time_s"].get<double>() < 0.0) {
    out.push_back("wall_time_s must be a non-negative number");
  }
  if (!j["trial_seeds"].is_array()) {
    out.push_back("trial_seeds must be an array");
  } else {
    for (const auto& s : j["trial_seeds"]) {
      if (!s.is_number_unsigned()) {
        out.push_back("trial_seeds entries must be unsigned integers");
        break;
      }
    }
  }
  if (!j["metrics"].is_object()) out.push_back("metrics must be an object");
  if (!j["files"].is_object()) {
    out.push_back("files must be an object");
    return out;
  }
  for (const auto& [name, path] : j["files"].items()) {
    if (!path.is_string()) {
      out.push_back("file entry " + name + " must be a string");
      continue;
    }
    const fs::path rel(path.get<std::string>());
    if (rel.is_absolute() || rel.empty() || *rel.begin() == "..") {
      out.push_back("file entry " + name + " must be a relative path inside the run directory");
      continue;
    }
    if (!run_dir.empty()) {
      std::error_code ec;
      const auto size = fs::file_size(run_dir / rel, ec);
      if (ec) {
        out.push_back("file " + rel.string() + " does not exist");
      } else if (size == 0) {
        out.push_back("file " + rel.string() + " is empty");
      }
    }
  }
  return out;
}

TableFormat format_from_string(const std::string& s) {
  std::string low;
  for (char c : s) low += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (low == "csv") return TableFormat::CSV;
  if (low == "json") return TableFormat::JSON;
  throw UsageError("unknown format '" + s + "' (expected csv or json)");
}

namespace {

json table_json(const io::CsvTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back(r);
  return {{"columns", t.header}, {"rows", rows}};
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

}  // namespace

fs::path emit_report(RunSummary& summary, const fs::path& out_root, const EmitOptions& options) {
  const auto config = ExperimentConfig::from_json(summary.config);
  const std::string name = lower(to_string(summary.kind)) + "-" + config.hash();
  const fs::path final_dir = out_root / name;
  const fs::path staging = out_root / (".staging-" + name + "-" + std::to_string(::getpid()));

  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw IoError("cannot create output directory '" + out_root.string() + "': " + ec.message());
  fs::remove_all(staging, ec);
  if (!fs::create_directory(staging, ec) || ec) {
    throw IoError("cannot create staging directory in '" + out_root.string() + "'");
  }

  try {
    std::map<std::string, std::string> files;
    fs::create_directory(staging / "tables");
    for (const auto& [table, data] : summary.tables) {
      std::string rel;
      if (options.format == TableFormat::CSV) {
        rel = "tables/" + table + ".csv";
        write_file(staging / rel, io::to_csv_text(data));
      } else {
        rel = "tables/" + table + ".json";
        write_file(staging / rel, table_json(data).dump(2) + "\n");
      }
      files[table] = rel;
    }
    if (options.svg && !summary.figures.empty()) {
      fs::create_directory(staging / "figures");
      for (const auto& [fig, svg] : summary.figures) {
        std::string err;
        if (!svg_well_formed(svg, &err)) throw UsageError("figure " + fig + " is malformed: " + err);
        const std::string rel = "figures/" + fig + ".svg";
        write_file(staging / rel, svg);
        files["figure:" + fig] = rel;
      }
    }
    write_file(staging / "config.json", config.to_json().dump(2) + "\n");
    files["config"] = "config.json";
    summary.files = files;
    const json doc = summary.to_json();
    write_file(staging / "summary.json", doc.dump(2) + "\n");
    const auto problems = validate_summary(doc, staging);
    if (!problems.empty()) throw IoError("summary failed validation: " + problems.front());

    fs::remove_all(final_dir, ec);
    fs::rename(staging, final_dir, ec);
    if (ec) throw IoError("cannot move run into '" + final_dir.string() + "': " + ec.message());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  return final_dir;
}

}  // namespace samlab::harness
