#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpser/model.hpp"

namespace mpser {

/// Per-class confusion tallies over a sample set. TP+FP+FN+TN equals the
/// sample count for every class.
struct ConfusionCounts {
  std::vector<std::size_t> tp, fp, fn, tn;
  std::size_t samples = 0;
};

ConfusionCounts confusion(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& gold);

struct Metrics {
  double maf1 = 0.0;
  double mif1 = 0.0;
  double ua = 0.0;
};

/// Multi-label scores in [0, 1]:
///   per-class F1 = 2TP/(2TP+FP+FN), 0 on empty denominator;
///   maF1 averages classes with TP+FP+FN > 0 (vacuous classes excluded);
///   miF1 is F1 of pooled counts;
///   UA is the mean over all classes of per-class binary accuracy.
Metrics score(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& gold);

/// Metrics for one adaptation episode plus its provenance.
struct EpisodeReport {
  double maf1 = 0.0;
  double mif1 = 0.0;
  double ua = 0.0;
  std::uint64_t seed = 0;
  std::string annotator;
  std::string scenario;  // "seen" | "unseen" | "synth"
  std::size_t shots = 0;
};

struct AggregateRow {
  std::string annotator;  // annotator id, or "overall" for the final row
  std::size_t episodes = 0;
  Metrics mean;
};

/// Two-level mean: per annotator over its episodes, then unweighted over
/// annotators (the final "overall" row). Annotators keep first-appearance
/// order. Mixing scenario tags in one aggregation is a contract violation.
std::vector<AggregateRow> aggregate(const std::vector<EpisodeReport>& reports);

}  // namespace mpser
