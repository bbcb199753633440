// Copyright 2026 The ssflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "ssflow/error.hpp"
#include "ssflow/flowinit.hpp"

namespace ssflow {

struct FlowMetrics {
  double epe = 0.0;         // mean end-point error
  double acc_strict = 0.0;  // error < 0.05 or relative error < 5%
  double acc_relax = 0.0;   // error < 0.1 or relative error < 10%
  double outliers = 0.0;    // error > 0.3 or relative error > 10%
  std::size_t n_evaluated = 0;

  std::string to_line() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epe=%.6f as=%.6f ar=%.6f out=%.6f n=%zu", epe, acc_strict, acc_relax, outliers,
                  n_evaluated);
    return buf;
  }
};

// ||pred - gt|| / ||gt||, with 0/0 = 0 and x/0 = +inf.
inline double relative_error(double error, double gt_norm) {
  if (gt_norm == 0.0) return error == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return error / gt_norm;
}

// Metrics over the masked points. The mask is visited in ascending index
// order, so the result does not depend on how the mask is ordered.
inline FlowMetrics evaluate(const FlowField& pred, const FlowField& gt, std::vector<std::size_t> mask) {
  if (pred.size() != gt.size()) {
    throw DimensionError("evaluate: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(gt.size()) + " ground-truth flows");
  }
  if (mask.empty()) throw ContractError("evaluate: empty evaluation mask");
  std::sort(mask.begin(), mask.end());
  double sum = 0.0;
  std::size_t strict = 0, relax = 0, out = 0;
  for (std::size_t i : mask) {
    if (i >= pred.size()) throw ContractError("evaluate: mask index " + std::to_string(i) + " out of range");
    const double e = norm(pred[i] - gt[i]);
    const double rel = relative_error(e, norm(gt[i]));
    sum += e;
    if (e < 0.05 || rel < 0.05) ++strict;
    if (e < 0.1 || rel < 0.1) ++relax;
    if (e > 0.3 || rel > 0.1) ++out;
  }
  const double n = static_cast<double>(mask.size());
  FlowMetrics m;
  m.epe = sum / n;
  m.acc_strict = static_cast<double>(strict) / n;
  m.acc_relax = static_cast<double>(relax) / n;
  m.outliers = static_cast<double>(out) / n;
  m.n_evaluated = mask.size();
  return m;
}

// Indices 0..n-1 that are not labeled.
inline std::vector<std::size_t> exclude_labels_mask(std::size_t n, const LabelSet& labels) {
  std::vector<bool> labeled(n, false);
  for (std::size_t i : labels.indices) {
    if (i >= n) throw ContractError("exclude_labels_mask: label index " + std::to_string(i) + " out of range");
    labeled[i] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!labeled[i]) out.push_back(i);
  }
  if (out.empty()) throw ContractError("exclude_labels_mask: every point is labeled, nothing to evaluate");
  return out;
}

}  // namespace ssflow
