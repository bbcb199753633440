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

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ssflow/diffcore/params.hpp"
#include "ssflow/diffcore/tensor.hpp"
#include "ssflow/error.hpp"

namespace ssflow::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// tape that produced it is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode recording of one forward pass. A tape is built, differentiated
// once and discarded; nothing persists across passes except the ParamStore
// gradients it accumulates into.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  // Leaf that receives a gradient but is not owned by a ParamStore.
  Var input(Tensor value) {
    Var v = push(std::move(value), true, nullptr);
    nodes_[v.id].is_leaf = true;
    return v;
  }

  // Leaf bound to a named parameter. Repeated requests for the same name
  // return the same node.
  Var parameter(ParamStore& store, const std::string& name) {
    const std::size_t idx = store.index_of(name);
    for (const auto& binding : bindings_) {
      if (binding.store == &store && binding.index == idx) return Var{this, binding.node};
    }
    Var v = push(store.entry(idx).value, true, nullptr);
    nodes_[v.id].is_leaf = true;
    bindings_.push_back({&store, idx, v.id});
    return v;
  }

  Var push(Tensor value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape != n.value.shape || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape);
    return n.grad;
  }

  // Gradient of the last backward() target with respect to `v`; zeros when
  // `v` did not influence it.
  Tensor grad(Var v) {
    const Node& n = nodes_[v.id];
    if (n.grad.size() != n.value.size()) return Tensor(n.value.shape);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: variable belongs to another tape");
    if (value(loss.id).size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_string(value(loss.id).shape));
    }
    if (backward_done_) throw ContractError("backward: tape already differentiated");
    backward_done_ = true;
    grad_ref(loss.id).data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.size() != n.value.size()) continue;
      n.backward(*this, i);
    }
    for (const auto& binding : bindings_) {
      const Node& n = nodes_[binding.node];
      if (n.grad.size() != n.value.size()) continue;
      auto& g = binding.store->entry(binding.index).grad;
      for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += n.grad.data[k];
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    Backward backward;
  };
  struct Binding {
    ParamStore* store;
    std::size_t index;
    std::size_t node;
  };

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Operations. Every op takes rank-2 views (rank 0/1 are treated as 1 x n).

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap view(const Tensor& t) {
  return ConstMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MutMap view(Tensor& t) {
  return MutMap(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (v.tape == nullptr) throw ContractError("operation on an unbound variable");
    if (t && v.tape != t) throw ContractError("operation mixes variables from different tapes");
    t = v.tape;
  }
  return *t;
}

inline bool any_grad(Tape& t, std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (t.requires_grad(v.id)) return true;
  }
  return false;
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value().shape) + " vs " +
                         shape_string(b.value().shape));
  }
}

inline void accumulate(Tape& t, std::size_t id, const Tensor& g, double scale = 1.0) {
  if (!t.requires_grad(id)) return;
  Tensor& dst = t.grad_ref(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += scale * g.data[i];
}

}  // namespace detail

inline constexpr double kLeakySlope = 0.1;

enum class Activation { kLeakyRelu, kRelu, kTanh, kIdentity };

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    detail::accumulate(tp, a, g);
    detail::accumulate(tp, b, g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    detail::accumulate(tp, a, g);
    detail::accumulate(tp, b, g, -1.0);
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_ref(a);
      const Tensor& vb = tp.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * vb.data[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_ref(b);
      const Tensor& va = tp.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tape& t = detail::same_tape({a});
  Tensor out = a.value();
  for (double& v : out.data) v *= c;
  return t.push(std::move(out), t.requires_grad(a.id), [a = a.id, c](Tape& tp, std::size_t self) {
    detail::accumulate(tp, a, tp.grad_ref(self), c);
  });
}

// Adds the 1 x d row `b` to every row of `a`.
inline Var add_row(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  if (b.value().size() != a.cols()) {
    throw DimensionError("add_row: row of width " + std::to_string(b.value().size()) +
                         " cannot broadcast over " + shape_string(a.value().shape));
  }
  Tensor out = a.value();
  const std::size_t d = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out.data[r * d + c] += b.value().data[c];
  }
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a = a.id, b = b.id, d](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    detail::accumulate(tp, a, g);
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i % d] += g.data[i];
    }
  });
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.value().shape) + " x " + shape_string(b.value().shape));
  }
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  detail::view(out).noalias() = detail::view(a.value()) * detail::view(b.value());
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a = a.id, b = b.id](Tape& tp, std::size_t self) {
    const auto g = detail::view(tp.grad_ref(self));
    if (tp.requires_grad(a)) detail::view(tp.grad_ref(a)).noalias() += g * detail::view(tp.value(b)).transpose();
    if (tp.requires_grad(b)) detail::view(tp.grad_ref(b)).noalias() += detail::view(tp.value(a)).transpose() * g;
  });
}

// x W^T for x: n x in, W: out x in.
inline Var linear(Var x, Var w) {
  Tape& t = detail::same_tape({x, w});
  if (x.cols() != w.cols()) {
    throw DimensionError("linear: input width " + std::to_string(x.cols()) + " does not match weight " +
                         shape_string(w.value().shape));
  }
  Tensor out = Tensor::matrix(x.rows(), w.rows());
  detail::view(out).noalias() = detail::view(x.value()) * detail::view(w.value()).transpose();
  return t.push(std::move(out), detail::any_grad(t, {x, w}), [x = x.id, w = w.id](Tape& tp, std::size_t self) {
    const auto g = detail::view(tp.grad_ref(self));
    if (tp.requires_grad(x)) detail::view(tp.grad_ref(x)).noalias() += g * detail::view(tp.value(w));
    if (tp.requires_grad(w)) detail::view(tp.grad_ref(w)).noalias() += g.transpose() * detail::view(tp.value(x));
  });
}

inline Var linear(Var x, Var w, Var bias) { return add_row(linear(x, w), bias); }

inline Var activate(Var x, Activation act) {
  if (act == Activation::kIdentity) return x;
  Tape& t = detail::same_tape({x});
  Tensor out = x.value();
  switch (act) {
    case Activation::kLeakyRelu:
      for (double& v : out.data) v = v > 0.0 ? v : kLeakySlope * v;
      break;
    case Activation::kRelu:
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::kTanh:
      for (double& v : out.data) v = std::tanh(v);
      break;
    case Activation::kIdentity:
      break;
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(x.id), [x = x.id, act, out_id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(x);
    const Tensor& in = tp.value(x);
    const Tensor& y = tp.value(out_id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 1.0;
      switch (act) {
        case Activation::kLeakyRelu: d = in.data[i] > 0.0 ? 1.0 : kLeakySlope; break;
        case Activation::kRelu: d = in.data[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::kTanh: d = 1.0 - y.data[i] * y.data[i]; break;
        case Activation::kIdentity: break;
      }
      gx.data[i] += g.data[i] * d;
    }
  });
}

// out[r] = x[index[r]]; the backward pass scatter-adds.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  Tape& t = detail::same_tape({x});
  const std::size_t d = x.cols();
  const std::size_t n = x.rows();
  Tensor out = Tensor::matrix(index.size(), d);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) + " out of range " + std::to_string(n));
    }
    std::copy_n(x.value().data.begin() + static_cast<std::ptrdiff_t>(index[r] * d), d,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return t.push(std::move(out), t.requires_grad(x.id), [x = x.id, idx, d](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(x);
    for (std::size_t r = 0; r < idx->size(); ++r) {
      const std::size_t src = (*idx)[r];
      for (std::size_t c = 0; c < d; ++c) gx.data[src * d + c] += g.data[r * d + c];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t n = parts.front().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  bool req = false;
  for (const Var& p : parts) {
    detail::same_tape({parts.front(), p});
    if (p.rows() != n) throw DimensionError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    total += p.cols();
    req = req || t.requires_grad(p.id);
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(p.value().data.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
  }
  return t.push(std::move(out), req, [ids, widths, n, total](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (tp.requires_grad(ids[k])) {
        Tensor& gp = tp.grad_ref(ids[k]);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < w; ++c) gp.data[r * w + c] += g.data[r * total + off + c];
        }
      }
      off += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t d = parts.front().cols();
  std::vector<std::size_t> ids, sizes;
  std::size_t rows = 0;
  bool req = false;
  for (const Var& p : parts) {
    detail::same_tape({parts.front(), p});
    if (p.cols() != d) throw DimensionError("concat_rows: column count mismatch");
    ids.push_back(p.id);
    sizes.push_back(p.value().size());
    rows += p.rows();
    req = req || t.requires_grad(p.id);
  }
  Tensor out = Tensor::matrix(rows, d);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  return t.push(std::move(out), req, [ids, sizes](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor& gp = tp.grad_ref(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp.data[i] += g.data[off + i];
      }
      off += sizes[k];
    }
  });
}

// Columns [begin, end) of `a`.
inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = detail::same_tape({a});
  const std::size_t n = a.rows(), d = a.cols();
  if (begin > end || end > d) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of width " +
                         std::to_string(d));
  }
  const std::size_t w = end - begin;
  Tensor out = Tensor::matrix(n, w);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.value().data.begin() + static_cast<std::ptrdiff_t>(r * d + begin), w,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return t.push(std::move(out), t.requires_grad(a.id), [a = a.id, n, d, w, begin](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& ga = tp.grad_ref(a);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < w; ++c) ga.data[r * d + begin + c] += g.data[r * w + c];
    }
  });
}

// Column-wise max over consecutive row segments [offsets[s], offsets[s+1]).
// An empty segment yields a zero row. Ties go to the lowest row.
inline Var segment_max(Var x, const std::vector<std::size_t>& offsets) {
  Tape& t = detail::same_tape({x});
  if (offsets.empty() || offsets.back() != x.rows()) {
    throw DimensionError("segment_max: offsets do not cover " + std::to_string(x.rows()) + " rows");
  }
  const std::size_t segments = offsets.size() - 1;
  const std::size_t d = x.cols();
  Tensor out = Tensor::matrix(segments, d);
  auto argmax = std::make_shared<std::vector<std::size_t>>(segments * d, std::numeric_limits<std::size_t>::max());
  const Tensor& in = x.value();
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t begin = offsets[s];
    const std::size_t end = offsets[s + 1];
    if (begin == end) continue;
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t best = begin;
      double best_value = in.data[begin * d + c];
      for (std::size_t r = begin + 1; r < end; ++r) {
        const double v = in.data[r * d + c];
        if (v > best_value) {
          best_value = v;
          best = r;
        }
      }
      out.data[s * d + c] = best_value;
      (*argmax)[s * d + c] = best;
    }
  }
  return t.push(std::move(out), t.requires_grad(x.id), [x = x.id, argmax, d](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& gx = tp.grad_ref(x);
    for (std::size_t i = 0; i < argmax->size(); ++i) {
      const std::size_t r = (*argmax)[i];
      if (r == std::numeric_limits<std::size_t>::max()) continue;
      gx.data[r * d + i % d] += g.data[i];
    }
  });
}

// Max-pooled edge layer. Edge e of segment s has the pre-activation
//   a[center[e]] + b[neighbor[e]] + wp * delta[e] + bias
// and out[s] = act(max over the segment), which equals the max of the
// activated values because every activation here is non-decreasing. Ties go
// to the lowest edge; an empty segment yields 0. Only the winning edges
// receive gradient.
inline Var edge_max_pool(Var a, Var b, Var delta, Var wp, Var bias, const std::vector<std::size_t>& center,
                         const std::vector<std::size_t>& neighbor, const std::vector<std::size_t>& offsets,
                         Activation act) {
  Tape& t = detail::same_tape({a, b, delta, wp, bias});
  const std::size_t w = a.cols(), dd = delta.cols(), edges = center.size();
  if (b.cols() != w || wp.rows() != w || wp.cols() != dd || bias.value().size() != w) {
    throw DimensionError("edge_max_pool: inconsistent widths a " + shape_string(a.value().shape) + ", b " +
                         shape_string(b.value().shape) + ", wp " + shape_string(wp.value().shape) + ", bias " +
                         shape_string(bias.value().shape));
  }
  if (neighbor.size() != edges || delta.rows() != edges || offsets.empty() || offsets.back() != edges) {
    throw DimensionError("edge_max_pool: edge lists disagree (" + std::to_string(edges) + " centers, " +
                         std::to_string(neighbor.size()) + " neighbors, " + std::to_string(delta.rows()) +
                         " delta rows)");
  }
  for (std::size_t e = 0; e < edges; ++e) {
    if (center[e] >= a.rows() || neighbor[e] >= b.rows()) throw DimensionError("edge_max_pool: index out of range");
  }
  const std::size_t segments = offsets.size() - 1;
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  Tensor out = Tensor::matrix(segments, w);
  std::vector<std::size_t> arg(segments * w, kNone);
  const double* pa = a.value().data.data();
  const double* pb = b.value().data.data();
  const double* pd = delta.value().data.data();
  const double* pw = wp.value().data.data();
  const double* pc = bias.value().data.data();
  // wp transposed so that the per-edge update runs along contiguous k.
  std::vector<double> wt(dd * w);
  for (std::size_t k = 0; k < w; ++k) {
    for (std::size_t c = 0; c < dd; ++c) wt[c * w + k] = pw[k * dd + c];
  }
  std::vector<double> best(w), pre(w);
  auto edge_pre = [&](std::size_t e) {
    const double* ra = pa + center[e] * w;
    const double* rb = pb + neighbor[e] * w;
    for (std::size_t k = 0; k < w; ++k) pre[k] = ra[k] + rb[k] + pc[k];
    for (std::size_t c = 0; c < dd; ++c) {
      const double x = pd[e * dd + c];
      const double* col = wt.data() + c * w;
      for (std::size_t k = 0; k < w; ++k) pre[k] += col[k] * x;
    }
  };
  for (std::size_t s = 0; s < segments; ++s) {
    std::size_t* sa = arg.data() + s * w;
    if (offsets[s] == offsets[s + 1]) continue;
    edge_pre(offsets[s]);
    std::copy(pre.begin(), pre.end(), best.begin());
    std::fill(sa, sa + w, offsets[s]);
    for (std::size_t e = offsets[s] + 1; e < offsets[s + 1]; ++e) {
      edge_pre(e);
      for (std::size_t k = 0; k < w; ++k) {
        if (pre[k] > best[k]) {
          best[k] = pre[k];
          sa[k] = e;
        }
      }
    }
    for (std::size_t k = 0; k < w; ++k) {
      if (sa[k] == kNone) continue;
      const double v = best[k];
      double y = v;
      switch (act) {
        case Activation::kLeakyRelu: y = v > 0.0 ? v : kLeakySlope * v; break;
        case Activation::kRelu: y = v > 0.0 ? v : 0.0; break;
        case Activation::kTanh: y = std::tanh(v); break;
        case Activation::kIdentity: break;
      }
      out(s, k) = y;
    }
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), detail::any_grad(t, {a, b, delta, wp, bias}),
                [a = a.id, b = b.id, dl = delta.id, wp = wp.id, c = bias.id, arg = std::move(arg), center, neighbor,
                 segments, w, dd, act, out_id](Tape& tp, std::size_t self) {
                  const Tensor& g = tp.grad_ref(self);
                  const Tensor& y = tp.value(out_id);
                  const Tensor& dv = tp.value(dl);
                  const Tensor& wv = tp.value(wp);
                  Tensor* ga = tp.requires_grad(a) ? &tp.grad_ref(a) : nullptr;
                  Tensor* gb = tp.requires_grad(b) ? &tp.grad_ref(b) : nullptr;
                  Tensor* gd = tp.requires_grad(dl) ? &tp.grad_ref(dl) : nullptr;
                  Tensor* gw = tp.requires_grad(wp) ? &tp.grad_ref(wp) : nullptr;
                  Tensor* gc = tp.requires_grad(c) ? &tp.grad_ref(c) : nullptr;
                  for (std::size_t s = 0; s < segments; ++s) {
                    for (std::size_t k = 0; k < w; ++k) {
                      const std::size_t e = arg[s * w + k];
                      if (e == kNone) continue;
                      const double yv = y.data[s * w + k];
                      double gv = g.data[s * w + k];
                      switch (act) {
                        case Activation::kLeakyRelu: gv *= yv > 0.0 ? 1.0 : kLeakySlope; break;
                        case Activation::kRelu: gv *= yv > 0.0 ? 1.0 : 0.0; break;
                        case Activation::kTanh: gv *= 1.0 - yv * yv; break;
                        case Activation::kIdentity: break;
                      }
                      if (ga) ga->data[center[e] * w + k] += gv;
                      if (gb) gb->data[neighbor[e] * w + k] += gv;
                      if (gc) gc->data[k] += gv;
                      for (std::size_t q = 0; q < dd; ++q) {
                        if (gw) gw->data[k * dd + q] += gv * dv.data[e * dd + q];
                        if (gd) gd->data[e * dd + q] += gv * wv.data[k * dd + q];
                      }
                    }
                  }
                });
}

// All pairwise row differences: out[i * m + j] = a[i] - b[j], for a: n x d
// and b: m x d.
inline Var pair_diff(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  if (a.cols() != b.cols()) {
    throw DimensionError("pair_diff: widths " + std::to_string(a.cols()) + " and " + std::to_string(b.cols()));
  }
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  Tensor out = Tensor::matrix(n * m, d);
  const double* pa = a.value().data.data();
  const double* pb = b.value().data.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double* dst = out.data.data() + (i * m + j) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] = pa[i * d + c] - pb[j * d + c];
    }
  }
  return t.push(std::move(out), detail::any_grad(t, {a, b}), [a = a.id, b = b.id, n, m, d](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    const bool ga_req = tp.requires_grad(a);
    const bool gb_req = tp.requires_grad(b);
    Tensor* ga = ga_req ? &tp.grad_ref(a) : nullptr;
    Tensor* gb = gb_req ? &tp.grad_ref(b) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double* src = g.data.data() + (i * m + j) * d;
        for (std::size_t c = 0; c < d; ++c) {
          if (ga) ga->data[i * d + c] += src[c];
          if (gb) gb->data[j * d + c] -= src[c];
        }
      }
    }
  });
}

// act(a[i] - b[j] + bias) for every pair, rows i-major; one pass instead of
// pair_diff, add_row and activate.
inline Var pair_diff_activate(Var a, Var b, Var bias, Activation act) {
  Tape& t = detail::same_tape({a, b, bias});
  if (a.cols() != b.cols() || bias.value().size() != a.cols()) {
    throw DimensionError("pair_diff_activate: widths " + std::to_string(a.cols()) + ", " + std::to_string(b.cols()) +
                         " and bias " + shape_string(bias.value().shape));
  }
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  Tensor out = Tensor::matrix(n * m, d);
  const double* pa = a.value().data.data();
  const double* pb = b.value().data.data();
  const double* pc = bias.value().data.data();
  std::vector<double> shifted(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) shifted[c] = pa[i * d + c] + pc[c];
    for (std::size_t j = 0; j < m; ++j) {
      double* dst = out.data.data() + (i * m + j) * d;
      const double* src = pb + j * d;
      switch (act) {
        case Activation::kLeakyRelu:
          for (std::size_t c = 0; c < d; ++c) {
            const double v = shifted[c] - src[c];
            dst[c] = v > 0.0 ? v : kLeakySlope * v;
          }
          break;
        case Activation::kRelu:
          for (std::size_t c = 0; c < d; ++c) dst[c] = std::max(shifted[c] - src[c], 0.0);
          break;
        case Activation::kTanh:
          for (std::size_t c = 0; c < d; ++c) dst[c] = std::tanh(shifted[c] - src[c]);
          break;
        case Activation::kIdentity:
          for (std::size_t c = 0; c < d; ++c) dst[c] = shifted[c] - src[c];
          break;
      }
    }
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), detail::any_grad(t, {a, b, bias}),
                [a = a.id, b = b.id, c = bias.id, n, m, d, act, out_id](Tape& tp, std::size_t self) {
                  // The derivative of each activation is recoverable from its output.
                  const Tensor& g = tp.grad_ref(self);
                  const Tensor& y = tp.value(out_id);
                  std::vector<double> row_sum(d), col_sum(m * d, 0.0);
                  for (std::size_t i = 0; i < n; ++i) {
                    std::fill(row_sum.begin(), row_sum.end(), 0.0);
                    for (std::size_t j = 0; j < m; ++j) {
                      const std::size_t base = (i * m + j) * d;
                      double* cs = col_sum.data() + j * d;
                      for (std::size_t k = 0; k < d; ++k) {
                        double dv = g.data[base + k];
                        const double yv = y.data[base + k];
                        switch (act) {
                          case Activation::kLeakyRelu: dv *= yv > 0.0 ? 1.0 : kLeakySlope; break;
                          case Activation::kRelu: dv *= yv > 0.0 ? 1.0 : 0.0; break;
                          case Activation::kTanh: dv *= 1.0 - yv * yv; break;
                          case Activation::kIdentity: break;
                        }
                        row_sum[k] += dv;
                        cs[k] += dv;
                      }
                    }
                    if (tp.requires_grad(a)) {
                      Tensor& ga = tp.grad_ref(a);
                      for (std::size_t k = 0; k < d; ++k) ga.data[i * d + k] += row_sum[k];
                    }
                    if (tp.requires_grad(c)) {
                      Tensor& gc = tp.grad_ref(c);
                      for (std::size_t k = 0; k < d; ++k) gc.data[k] += row_sum[k];
                    }
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_ref(b);
                    for (std::size_t k = 0; k < m * d; ++k) gb.data[k] -= col_sum[k];
                  }
                });
}

inline Var reshape(Var a, Shape shape) {
  Tape& t = detail::same_tape({a});
  if (shape_size(shape) != a.value().size()) {
    throw DimensionError("reshape: " + shape_string(a.value().shape) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), a.value().data);
  return t.push(std::move(out), t.requires_grad(a.id), [a = a.id](Tape& tp, std::size_t self) {
    detail::accumulate(tp, a, tp.grad_ref(self));
  });
}

// Row-wise softmax with max subtraction. Entries equal to -inf get weight 0;
// a row must contain at least one finite entry.
inline Var softmax_rows(Var a) {
  Tape& t = detail::same_tape({a});
  const std::size_t n = a.rows(), m = a.cols();
  if (m == 0) throw DimensionError("softmax_rows: zero columns");
  Tensor out = Tensor::matrix(n, m);
  const Tensor& in = a.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = in.data.data() + r * m;
    double* dst = out.data.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double total = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      dst[c] = std::exp(row[c] - mx);
      total += dst[c];
    }
    for (std::size_t c = 0; c < m; ++c) dst[c] /= total;
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a.id), [a = a.id, out_id, n, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& y = tp.value(out_id);
    Tensor& ga = tp.grad_ref(a);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += g.data[r * m + c] * y.data[r * m + c];
      for (std::size_t c = 0; c < m; ++c) {
        ga.data[r * m + c] += y.data[r * m + c] * (g.data[r * m + c] - dot);
      }
    }
  });
}

inline Var sum(Var a) {
  Tape& t = detail::same_tape({a});
  double total = 0.0;
  for (double v : a.value().data) total += v;
  return t.push(Tensor::scalar(total), t.requires_grad(a.id), [a = a.id](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self).data[0];
    for (double& v : tp.grad_ref(a).data) v += g;
  });
}

inline Var sum_squares(Var a) {
  Tape& t = detail::same_tape({a});
  double total = 0.0;
  for (double v : a.value().data) total += v * v;
  return t.push(Tensor::scalar(total), t.requires_grad(a.id), [a = a.id](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self).data[0];
    const Tensor& va = tp.value(a);
    Tensor& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += 2.0 * g * va.data[i];
  });
}

// Scalar sum_i weights[i] * a[i] for a constant weight tensor.
inline Var weighted_sum(Var a, Tensor weights) {
  Tape& t = detail::same_tape({a});
  if (weights.size() != a.value().size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(a.value().shape));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights.data[i] * a.value().data[i];
  auto w = std::make_shared<const Tensor>(std::move(weights));
  return t.push(Tensor::scalar(total), t.requires_grad(a.id), [a = a.id, w](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self).data[0];
    Tensor& ga = tp.grad_ref(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g * w->data[i];
  });
}

// Euclidean norm of each row, n x 1. The gradient at a zero row is taken
// as zero.
inline Var row_norms(Var a) {
  Tape& t = detail::same_tape({a});
  const std::size_t n = a.rows(), d = a.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += a.value().data[r * d + c] * a.value().data[r * d + c];
    out.data[r] = std::sqrt(s);
  }
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a.id), [a = a.id, out_id, n, d](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& norms = tp.value(out_id);
    const Tensor& va = tp.value(a);
    Tensor& ga = tp.grad_ref(a);
    for (std::size_t r = 0; r < n; ++r) {
      if (norms.data[r] == 0.0) continue;
      const double k = g.data[r] / norms.data[r];
      for (std::size_t c = 0; c < d; ++c) ga.data[r * d + c] += k * va.data[r * d + c];
    }
  });
}

}  // namespace ssflow::ad
