#include "empl/report.hpp"

#include <map>

#include "binary.hpp"
#include "empl/checkpoint.hpp"
#include "empl/dump.hpp"
#include "empl/errors.hpp"

namespace empl::io {

Json report_head(std::string_view command, const ExperimentConfig& cfg,
                 std::optional<std::uint64_t> seed_override) {
  Json head;
  head["report_format_version"] = kReportFormatVersion;
  head["code_version"] = std::string(kCodeVersion);
  head["config_schema_version"] = kConfigSchemaVersion;
  head["dump_format_version"] = kDumpFormatVersion;
  head["checkpoint_format_version"] = kCheckpointFormatVersion;
  head["command"] = std::string(command);
  head["seed_override"] = seed_override ? Json(*seed_override) : Json(nullptr);
  Json config = Json::object();
  for (const auto& [key, value] : config_entries(cfg)) config[key] = value;
  head["config"] = std::move(config);
  head["defaults_applied"] = cfg.defaults_applied;
  return head;
}

Json to_json(const GapStats& stats) {
  Json j;
  j["n"] = stats.n;
  j["magnitude_mean"] = stats.magnitude_mean;
  j["magnitude_std"] = stats.magnitude_std;
  j["direction_defined"] = stats.direction_defined;
  if (stats.direction_defined) {
    j["direction_mean"] = stats.direction_mean;
    j["direction_std"] = stats.direction_std;
  } else {
    j["direction_mean"] = nullptr;
    j["direction_std"] = nullptr;
  }
  j["direction_skipped"] = stats.direction_skipped;
  return j;
}

Json to_json(const BatteryResult& battery, double tolerance) {
  std::map<std::string, const BatteryCase*> worst_by_family;
  for (const auto& c : battery.cases) {
    auto& slot = worst_by_family[c.family];
    if (slot == nullptr || c.report.max_rel_error > slot->report.max_rel_error) slot = &c;
  }
  Json families = Json::object();
  for (const char* name : {"cosine", "ce", "energy", "empl_loss"}) {
    const auto it = worst_by_family.find(name);
    if (it == worst_by_family.end()) continue;
    const BatteryCase& c = *it->second;
    families[name] = {{"max_rel_error", c.report.max_rel_error},
                      {"config", c.config},
                      {"coordinate", c.report.worst_coordinate},
                      {"dimension", c.dimension}};
  }
  const BatteryCase& worst = battery.worst();
  Json j;
  j["cases"] = battery.cases.size();
  j["tolerance"] = tolerance;
  j["passed"] = battery.passed(tolerance);
  j["worst"] = {{"family", worst.family},
                {"config", worst.config},
                {"coordinate", worst.report.worst_coordinate},
                {"max_rel_error", worst.report.max_rel_error}};
  j["families"] = std::move(families);
  return j;
}

void write_report(const Json& report, const std::filesystem::path& path) {
  detail::write_file_atomic(path, report.dump(2) + "\n");
}

Json read_report(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what(), e.byte);
  }
}

ExperimentConfig config_from_report(const Json& report) {
  if (!report.contains("config") || !report["config"].is_object()) {
    throw InvalidInputError("report has no config block");
  }
  std::string text;
  for (const auto& [key, value] : report["config"].items()) {
    text += key + " = " + value.get<std::string>() + "\n";
  }
  return parse_config(text);
}

}  // namespace empl::io
