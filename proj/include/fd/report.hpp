// Report export: CSV, a JSON mirror, and an SVG chart per report set.
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fd/harness.hpp"

namespace fd::harness {

nlohmann::json to_json(const RunReport& rep);
RunReport report_from_json(const nlohmann::json& j);

std::string reports_csv(const std::vector<RunReport>& reports);
std::string reports_svg(const std::vector<RunReport>& reports, const std::string& title);

// Writes <stem>.csv / <stem>.json / <stem>.svg into dir for the requested
// formats, plus <stem>_raw.json with the full event data for re-export.
void export_report(const std::vector<RunReport>& reports, const std::string& dir,
                   const std::string& stem, const std::vector<std::string>& formats);

// Re-export from a previously written <stem>_raw.json.
std::vector<RunReport> load_reports(const std::string& raw_json_path);

}  // namespace fd::harness
