#pragma once

// Brute-force scoring oracle shared by the unit and acceptance suites:
// independent per-class counting loops and from-scratch formula evaluation.

#include <cstddef>
#include <vector>

#include "mpser/metrics.hpp"
#include "mpser/model.hpp"

namespace mpser::testing {

inline Metrics brute_force_score(const std::vector<LabelSet>& preds,
                                 const std::vector<LabelSet>& gold) {
  const std::size_t classes = gold[0].classes();
  const std::size_t n = preds.size();
  double maf1 = 0.0, ua = 0.0;
  std::size_t active = 0, tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = preds[i].positive(c), g = gold[i].positive(c);
      tp += (p && g);
      fp += (p && !g);
      fn += (!p && g);
      tn += (!p && !g);
    }
    if (tp + fp + fn > 0) {
      ++active;
      maf1 += (2 * tp + fp + fn) == 0
                  ? 0.0
                  : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
    ua += static_cast<double>(tp + tn) / static_cast<double>(n);
  }
  Metrics m;
  m.maf1 = active == 0 ? 0.0 : maf1 / static_cast<double>(active);
  m.mif1 = (2 * tp_all + fp_all + fn_all) == 0
               ? 0.0
               : 2.0 * static_cast<double>(tp_all) /
                     static_cast<double>(2 * tp_all + fp_all + fn_all);
  m.ua = ua / static_cast<double>(classes);
  return m;
}

}  // namespace mpser::testing
