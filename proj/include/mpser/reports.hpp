#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpser/metrics.hpp"

namespace mpser {

/// One evaluated episode plus provenance; serialized as one JSON line.
struct ReportRow {
  std::string method;
  EpisodeReport episode;
  std::uint64_t digest = 0;
};

void write_reports_jsonl(const std::string& path, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_reports_jsonl(const std::string& path);

/// Table-1-style summary: one line per method, metrics as percentages with
/// one decimal, two-level averaged (seeds within annotator, then annotators).
std::string render_method_table(const std::vector<ReportRow>& rows);

/// Plot-ready sweep: method <tab> shots <tab> maF1 <tab> miF1 <tab> UA, one
/// row per (method, shot count), averaged like the method table.
void write_shot_sweep_tsv(const std::string& path, const std::vector<ReportRow>& rows);

}  // namespace mpser
