#include "mpser/metrics.hpp"

#include <algorithm>

#include "mpser/errors.hpp"

namespace mpser {

ConfusionCounts confusion(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& gold) {
  if (preds.size() != gold.size()) {
    throw ContractError("score: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(gold.size()) + " gold label sets");
  }
  if (preds.empty()) throw ContractError("score: empty sample set");
  const std::size_t classes = gold[0].classes();

  ConfusionCounts cc;
  cc.tp.assign(classes, 0);
  cc.fp.assign(classes, 0);
  cc.fn.assign(classes, 0);
  cc.tn.assign(classes, 0);
  cc.samples = preds.size();

  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].classes() != classes || gold[i].classes() != classes) {
      throw ContractError("score: inconsistent class count at sample " + std::to_string(i));
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const bool p = preds[i].positive(c);
      const bool g = gold[i].positive(c);
      if (p && g)
        ++cc.tp[c];
      else if (p && !g)
        ++cc.fp[c];
      else if (!p && g)
        ++cc.fn[c];
      else
        ++cc.tn[c];
    }
  }
  return cc;
}

Metrics score(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& gold) {
  const ConfusionCounts cc = confusion(preds, gold);
  const std::size_t classes = cc.tp.size();

  Metrics m;
  std::size_t active = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t denom = 2 * cc.tp[c] + cc.fp[c] + cc.fn[c];
    if (cc.tp[c] + cc.fp[c] + cc.fn[c] > 0) {
      ++active;
      m.maf1 += denom == 0 ? 0.0 : 2.0 * static_cast<double>(cc.tp[c]) / static_cast<double>(denom);
    }
    tp += cc.tp[c];
    fp += cc.fp[c];
    fn += cc.fn[c];
    m.ua += static_cast<double>(cc.tp[c] + cc.tn[c]) / static_cast<double>(cc.samples);
  }
  m.maf1 = active == 0 ? 0.0 : m.maf1 / static_cast<double>(active);
  const std::size_t pooled = 2 * tp + fp + fn;
  m.mif1 = pooled == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(pooled);
  m.ua /= static_cast<double>(classes);
  return m;
}

std::vector<AggregateRow> aggregate(const std::vector<EpisodeReport>& reports) {
  if (reports.empty()) throw ContractError("aggregate: no reports");
  const std::string& scenario = reports[0].scenario;

  std::vector<std::string> order;
  std::vector<std::vector<const EpisodeReport*>> groups;
  for (const EpisodeReport& r : reports) {
    if (r.scenario != scenario) {
      throw ContractError("aggregate: mixed scenario tags '" + scenario + "' and '" +
                          r.scenario + "'");
    }
    auto it = std::find(order.begin(), order.end(), r.annotator);
    if (it == order.end()) {
      order.push_back(r.annotator);
      groups.emplace_back();
      groups.back().push_back(&r);
    } else {
      groups[static_cast<std::size_t>(it - order.begin())].push_back(&r);
    }
  }

  std::vector<AggregateRow> rows;
  Metrics overall;
  for (std::size_t g = 0; g < order.size(); ++g) {
    AggregateRow row;
    row.annotator = order[g];
    row.episodes = groups[g].size();
    for (const EpisodeReport* r : groups[g]) {
      row.mean.maf1 += r->maf1;
      row.mean.mif1 += r->mif1;
      row.mean.ua += r->ua;
    }
    const double n = static_cast<double>(row.episodes);
    row.mean.maf1 /= n;
    row.mean.mif1 /= n;
    row.mean.ua /= n;
    overall.maf1 += row.mean.maf1;
    overall.mif1 += row.mean.mif1;
    overall.ua += row.mean.ua;
    rows.push_back(std::move(row));
  }

  AggregateRow total;
  total.annotator = "overall";
  total.episodes = reports.size();
  const double n = static_cast<double>(order.size());
  total.mean = {overall.maf1 / n, overall.mif1 / n, overall.ua / n};
  rows.push_back(std::move(total));
  return rows;
}

}  // namespace mpser
