#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>

#include "empl/config.hpp"
#include "empl/gap.hpp"
#include "empl/gradcheck.hpp"
#include "json.hpp"

namespace empl::io {

inline constexpr std::string_view kCodeVersion = "0.3.0";
inline constexpr int kReportFormatVersion = 1;

using Json = nlohmann::ordered_json;

// Common head of every report: versions, the subcommand, the seed override
// (null when absent), the full effective config and the keys that took their
// default. Nothing here depends on the clock, so equal runs give equal bytes.
Json report_head(std::string_view command, const ExperimentConfig& cfg,
                 std::optional<std::uint64_t> seed_override);

Json to_json(const GapStats& stats);
Json to_json(const BatteryResult& battery, double tolerance);

// Pretty-printed with two-space indent and a trailing newline, written via a
// temporary file and rename.
void write_report(const Json& report, const std::filesystem::path& path);
Json read_report(const std::filesystem::path& path);

// Rebuilds the config from a report's "config" block.
ExperimentConfig config_from_report(const Json& report);

}  // namespace empl::io
