#include "mpser/reports.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"
#include "mpser/errors.hpp"

using nlohmann::json;

namespace mpser {

void write_reports_jsonl(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report file '" + path + "'");
  for (const ReportRow& r : rows) {
    json j;
    j["method"] = r.method;
    j["annotator"] = r.episode.annotator;
    j["scenario"] = r.episode.scenario;
    j["seed"] = r.episode.seed;
    j["shots"] = r.episode.shots;
    j["maF1"] = r.episode.maf1;
    j["miF1"] = r.episode.mif1;
    j["UA"] = r.episode.ua;
    j["config_digest"] = r.digest;
    out << j.dump() << "\n";
  }
}

std::vector<ReportRow> read_reports_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report file '" + path + "'");
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      ReportRow r;
      r.method = j.at("method").get<std::string>();
      r.episode.annotator = j.at("annotator").get<std::string>();
      r.episode.scenario = j.at("scenario").get<std::string>();
      r.episode.seed = j.at("seed").get<std::uint64_t>();
      r.episode.shots = j.at("shots").get<std::size_t>();
      r.episode.maf1 = j.at("maF1").get<double>();
      r.episode.mif1 = j.at("miF1").get<double>();
      r.episode.ua = j.at("UA").get<double>();
      r.digest = j.at("config_digest").get<std::uint64_t>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError("report '" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

namespace {

std::string pct(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%5.1f", 100.0 * v);
  return buf;
}

std::vector<std::string> method_order(const std::vector<ReportRow>& rows) {
  std::vector<std::string> order;
  for (const ReportRow& r : rows) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) {
      order.push_back(r.method);
    }
  }
  return order;
}

Metrics method_mean(const std::vector<ReportRow>& rows, const std::string& method) {
  std::vector<EpisodeReport> episodes;
  for (const ReportRow& r : rows) {
    if (r.method == method) episodes.push_back(r.episode);
  }
  return aggregate(episodes).back().mean;
}

}  // namespace

std::string render_method_table(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractError("no report rows to render");
  std::string out = "method        maF1   miF1     UA\n";
  for (const std::string& method : method_order(rows)) {
    const Metrics m = method_mean(rows, method);
    char line[80];
    std::snprintf(line, sizeof line, "%-12s %s  %s  %s\n", method.c_str(), pct(m.maf1).c_str(),
                  pct(m.mif1).c_str(), pct(m.ua).c_str());
    out += line;
  }
  return out;
}

void write_shot_sweep_tsv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sweep file '" + path + "'");
  out << "method\tshots\tmaF1\tmiF1\tUA\n";
  for (const std::string& method : method_order(rows)) {
    std::map<std::size_t, std::vector<ReportRow>> by_shots;
    for (const ReportRow& r : rows) {
      if (r.method == method) by_shots[r.episode.shots].push_back(r);
    }
    for (const auto& [shots, group] : by_shots) {
      const Metrics m = method_mean(group, method);
      char line[120];
      std::snprintf(line, sizeof line, "%s\t%zu\t%.3f\t%.3f\t%.3f\n", method.c_str(), shots,
                    100.0 * m.maf1, 100.0 * m.mif1, 100.0 * m.ua);
      out << line;
    }
  }
}

}  // namespace mpser
