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

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssflow/binary_io.hpp"
#include "ssflow/diffcore/tensor.hpp"
#include "ssflow/error.hpp"

namespace ssflow::ad {

// Named trainable tensors, each with a gradient slot of identical shape and
// the Adam moment estimates. Iteration order is insertion order, which is
// also the checkpoint record order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor first_moment;
    Tensor second_moment;
  };

  Tensor& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    Entry e;
    e.name = name;
    e.grad = Tensor(init.shape);
    e.first_moment = Tensor(init.shape);
    e.second_moment = Tensor(init.shape);
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DimensionError("missing parameter '" + name + "'");
    return it->second;
  }

  Entry& at(const std::string& name) { return entries_[index_of(name)]; }
  const Entry& at(const std::string& name) const { return entries_[index_of(name)]; }
  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(0.0);
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  // Same names, shapes and values (moments and step are not compared).
  bool same_values(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.value.shape != b.value.shape || a.value.data != b.value.data) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update over every parameter. Gradients are left in place; the
// caller zeroes them before the next accumulation.
inline void adam_step(ParamStore& params, const AdamOptions& opt) {
  if (!(opt.lr > 0.0)) throw ContractError("adam: learning rate must be positive");
  for (const auto& e : params.entries()) {
    if (!e.grad.all_finite()) throw NumericError("adam: non-finite gradient for parameter '" + e.name + "'");
  }
  const std::uint64_t t = params.step() + 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (auto& e : params.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad.data[i];
      double& m = e.first_moment.data[i];
      double& v = e.second_moment.data[i];
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      e.value.data[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
  params.set_step(t);
}

// Checkpoint layout: "SSFW", u16 version, then until EOF one record per
// parameter: u16 name length, UTF-8 name, u8 rank, u32 dims, f64 payload.
// Everything little-endian.
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(const ParamStore& params, std::ostream& os) {
  os.write("SSFW", 4);
  binio::write<std::uint16_t>(os, kCheckpointVersion);
  for (const auto& e : params.entries()) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("parameter name too long: " + e.name);
    }
    binio::write<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    binio::write<std::uint8_t>(os, static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape) binio::write<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : e.value.data) binio::write_f64(os, v);
  }
  if (!os) throw FormatError("failed writing checkpoint");
}

inline ParamStore load_checkpoint(std::istream& is) {
  binio::expect_magic(is, "SSFW");
  const auto version = binio::read<std::uint16_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  ParamStore params;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = binio::read<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (is.gcount() != len) throw FormatError("truncated parameter name");
    const auto rank = binio::read<std::uint8_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = binio::read<std::uint32_t>(is, "dimension");
    Tensor t(shape);
    for (auto& v : t.data) v = binio::read_f64(is, "payload");
    params.add(name, std::move(t));
  }
  return params;
}

inline void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  save_checkpoint(params, os);
  os.close();
  if (!os) throw FormatError("failed writing " + path);
}

inline ParamStore load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  try {
    return load_checkpoint(is);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// Copies values from `source` into `target`, requiring identical names and
// shapes. Used to load a checkpoint into a freshly initialized model.
inline void assign_values(ParamStore& target, const ParamStore& source) {
  if (target.size() != source.size()) {
    throw ArtifactMismatch("checkpoint has " + std::to_string(source.size()) +
                           " parameters, model expects " + std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& t = target.entry(i);
    const auto& s = source.entry(i);
    if (t.name != s.name || t.value.shape != s.value.shape) {
      throw ArtifactMismatch("checkpoint parameter '" + s.name + "' " + shape_string(s.value.shape) +
                             " does not match model parameter '" + t.name + "' " +
                             shape_string(t.value.shape));
    }
    t.value = s.value;
  }
}

}  // namespace ssflow::ad
