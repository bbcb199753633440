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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssflow/binary_io.hpp"
#include "ssflow/error.hpp"
#include "ssflow/flowinit.hpp"
#include "ssflow/geometry.hpp"

namespace ssflow {

// Two consecutive frames of one scene, optionally with ground-truth flow
// over P and a labeled subset of it.
struct ScenePair {
  PointSet p;
  PointSet q;
  std::optional<FlowField> flow;
  std::optional<LabelSet> labels;
  std::string id;

  void validate() const {
    if (flow && flow->size() != p.size()) {
      throw ContractError("scene " + id + ": " + std::to_string(flow->size()) + " flows for " +
                          std::to_string(p.size()) + " points");
    }
    if (labels) {
      if (!flow) throw ContractError("scene " + id + ": labels require ground-truth flow");
      labels->validate(p.size());
    }
  }

  // Replaces the label set, reading label flows out of the ground truth.
  void set_labels(std::vector<std::size_t> indices) {
    if (!flow) throw ContractError("scene " + id + ": labels require ground-truth flow");
    labels = LabelSet::from_field(std::move(indices), *flow);
    labels->validate(p.size());
  }
};

// Binary layout: "SSFL", u16 version (1), u8 flags (bit0 flow, bit1 labels),
// u32 n, P and Q as n x 3 f64, optional flow n x 3 f64, optional u32 label
// count followed by u32 indices. Little-endian throughout.
inline constexpr std::uint16_t kSceneVersion = 1;
inline constexpr std::uint8_t kSceneHasFlow = 0x1;
inline constexpr std::uint8_t kSceneHasLabels = 0x2;

inline void write_scene(const ScenePair& scene, std::ostream& os) {
  scene.validate();
  if (scene.p.size() != scene.q.size()) {
    throw FormatError("scene " + scene.id + ": binary format requires |P| == |Q|");
  }
  os.write("SSFL", 4);
  binio::write<std::uint16_t>(os, kSceneVersion);
  std::uint8_t flags = 0;
  if (scene.flow) flags |= kSceneHasFlow;
  if (scene.labels) flags |= kSceneHasLabels;
  binio::write<std::uint8_t>(os, flags);
  binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(scene.p.size()));
  auto write_rows = [&](const std::vector<Vec3>& rows) {
    for (const auto& r : rows) {
      for (double v : r) binio::write_f64(os, v);
    }
  };
  write_rows(scene.p.coords);
  write_rows(scene.q.coords);
  if (scene.flow) write_rows(*scene.flow);
  if (scene.labels) {
    binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(scene.labels->size()));
    for (std::size_t i : scene.labels->indices) binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(i));
  }
  if (!os) throw FormatError("failed writing scene " + scene.id);
}

inline ScenePair read_scene(std::istream& is) {
  binio::expect_magic(is, "SSFL");
  const auto version = binio::read<std::uint16_t>(is, "scene version");
  if (version != kSceneVersion) throw FormatError("unsupported scene version " + std::to_string(version));
  const auto flags = binio::read<std::uint8_t>(is, "scene flags");
  if (flags & ~(kSceneHasFlow | kSceneHasLabels)) throw FormatError("unknown scene flag bits");
  const std::uint32_t n = binio::read<std::uint32_t>(is, "point count");
  auto read_rows = [&](const char* what) {
    std::vector<Vec3> rows(n);
    for (auto& r : rows) {
      for (double& v : r) v = binio::read_f64(is, what);
    }
    return rows;
  };
  ScenePair scene;
  scene.p = PointSet(read_rows("P"));
  scene.q = PointSet(read_rows("Q"));
  if (flags & kSceneHasFlow) scene.flow = read_rows("flow");
  if (flags & kSceneHasLabels) {
    if (!scene.flow) throw FormatError("scene has labels but no flow");
    const auto count = binio::read<std::uint32_t>(is, "label count");
    std::vector<std::size_t> idx(count);
    for (auto& i : idx) i = binio::read<std::uint32_t>(is, "label index");
    scene.set_labels(std::move(idx));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after scene");
  return scene;
}

inline void save_scene(const ScenePair& scene, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_scene(scene, os);
  os.close();
  if (!os) throw FormatError("failed writing " + path);
}

inline ScenePair load_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  try {
    ScenePair s = read_scene(is);
    s.id = path;
    return s;
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// Every *.ssfl file directly inside `dir`, in lexicographic path order.
inline std::vector<std::string> scene_files(const std::string& dir) {
  std::error_code ec;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) throw FormatError("cannot list " + dir + ": " + ec.message());
  std::vector<std::string> out;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == ".ssfl") out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<ScenePair> load_scene_dir(const std::string& dir) {
  std::vector<ScenePair> scenes;
  for (const auto& path : scene_files(dir)) scenes.push_back(load_scene(path));
  return scenes;
}

inline constexpr const char* kCsvHeader = "px,py,pz,qx,qy,qz,fx,fy,fz,labeled";

// One row per point; flow columns are left empty when the scene carries no
// flow. Values are printed with 17 significant digits.
inline void write_scene_csv(const ScenePair& scene, std::ostream& os) {
  scene.validate();
  if (scene.p.size() != scene.q.size()) throw FormatError("CSV export requires |P| == |Q|");
  const std::vector<bool> labeled = scene.labels ? scene.labels->mask(scene.p.size()) : std::vector<bool>(scene.p.size());
  os << kCsvHeader << '\n';
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  for (std::size_t i = 0; i < scene.p.size(); ++i) {
    for (int c = 0; c < 3; ++c) { put(scene.p[i][c]); os << ','; }
    for (int c = 0; c < 3; ++c) { put(scene.q[i][c]); os << ','; }
    for (int c = 0; c < 3; ++c) {
      if (scene.flow) put((*scene.flow)[i][c]);
      os << ',';
    }
    os << (labeled[i] ? 1 : 0) << '\n';
  }
}

inline ScenePair read_scene_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw FormatError("CSV header must be '" + std::string(kCsvHeader) + "'");
  ScenePair scene;
  FlowField flow;
  std::vector<std::size_t> labeled;
  bool any_flow = false, any_missing_flow = false;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 10) {
      throw FormatError("CSV row " + std::to_string(row + 1) + ": expected 10 columns, got " +
                        std::to_string(cells.size()));
    }
    auto num = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw FormatError("CSV row " + std::to_string(row + 1) + ": bad number '" + s + "'");
      }
    };
    scene.p.coords.push_back({num(cells[0]), num(cells[1]), num(cells[2])});
    scene.q.coords.push_back({num(cells[3]), num(cells[4]), num(cells[5])});
    if (cells[6].empty() && cells[7].empty() && cells[8].empty()) {
      any_missing_flow = true;
      flow.push_back({0, 0, 0});
    } else {
      any_flow = true;
      flow.push_back({num(cells[6]), num(cells[7]), num(cells[8])});
    }
    if (cells[9] == "1") {
      labeled.push_back(row);
    } else if (cells[9] != "0") {
      throw FormatError("CSV row " + std::to_string(row + 1) + ": labeled must be 0 or 1");
    }
    ++row;
  }
  if (any_flow && any_missing_flow) throw FormatError("CSV: flow columns must be all present or all empty");
  if (any_flow) scene.flow = std::move(flow);
  if (!labeled.empty()) scene.set_labels(std::move(labeled));
  return scene;
}

}  // namespace ssflow
