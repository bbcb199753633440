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
#include <cstdint>
#include <vector>

#include "ssflow/diffcore.hpp"
#include "ssflow/flowinit.hpp"
#include "ssflow/geometry.hpp"
#include "ssflow/random.hpp"

namespace ssflow::testing {

inline PointSet random_cloud(Rng& rng, std::size_t n, double extent = 1.0) {
  PointSet p;
  for (std::size_t i = 0; i < n; ++i) {
    p.coords.push_back({uniform(rng, -extent, extent), uniform(rng, -extent, extent), uniform(rng, -extent, extent)});
  }
  return p;
}

inline FlowField random_flow(Rng& rng, std::size_t n, double scale = 1.0) {
  FlowField f(n);
  for (auto& v : f) v = {uniform(rng, -scale, scale), uniform(rng, -scale, scale), uniform(rng, -scale, scale)};
  return f;
}

inline ad::Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t = ad::Tensor::matrix(r, c);
  for (double& v : t.data) v = uniform(rng, lo, hi);
  return t;
}

// m distinct sorted indices out of n.
inline std::vector<std::size_t> random_subset(Rng& rng, std::size_t n, std::size_t m) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t k = 0; k < m; ++k) std::swap(pool[k], pool[k + uniform_index(rng, n - k)]);
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace ssflow::testing
