#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "boxrec/errors.hpp"
#include "boxrec/kernels.hpp"
#include "boxrec/rng.hpp"
#include "boxrec/tensor.hpp"

namespace boxrec::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kConcat,
  kSlice,
  kTranspose,
  kGatherRows,
  kReduceSum,
  kReduceMean,
  kReduceMin,
  kElementwiseMin,
  kElementwiseMax,
  kClamp,
  kRelu,
  kSigmoid,
  kTanh,
  kSoftmaxRows,
  kSquaredNorm,
  kDropoutMask,
};

const char* op_name(Op op);

// Append-only record of a forward computation. Building a node runs its
// forward immediately; backward() walks the record in reverse, accumulating
// gradients by addition. One graph per forward/backward pass, single writer.
template <typename T>
class Graph {
 public:
  // --- leaves -------------------------------------------------------------
  // sparse_grad leaves receive their gradient as per-row entries via
  // gather_rows only (used for the item table, whose dense gradient would be
  // wastefully large); they may not feed any other op.
  NodeId input(Tensor<T> value, bool requires_grad, bool sparse_grad = false) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.sparse_grad = sparse_grad;
    return push(std::move(n), /*check_finite=*/true);
  }
  NodeId constant(Tensor<T> value) { return input(std::move(value), false); }
  NodeId constant_scalar(T x) { return constant(Tensor<T>::scalar(x)); }

  // --- ops ----------------------------------------------------------------
  NodeId matmul(NodeId a, NodeId b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.cols != tb.rows)
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(ta) + " * " + shape_str(tb));
    Node n = make(Op::kMatmul, a, b);
    n.value = Tensor<T>(ta.rows, tb.cols);
    kernels::matmul(ta.data(), tb.data(), n.value.data(), ta.rows, ta.cols, tb.cols);
    return push(std::move(n));
  }

  // Elementwise when shapes match; also accepts a 1xN second operand against
  // an MxN first (row broadcast, used for biases).
  NodeId add(NodeId a, NodeId b) { return add_like(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return add_like(Op::kSub, a, b); }

  NodeId mul(NodeId a, NodeId b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (!ta.same_shape(tb))
      throw std::invalid_argument("mul: shape mismatch " + shape_str(ta) + " vs " + shape_str(tb));
    Node n = make(Op::kMul, a, b);
    n.value = ta;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value.v[i] *= tb.v[i];
    return push(std::move(n));
  }

  NodeId scale(NodeId a, T factor) {
    Node n = make(Op::kScale, a);
    n.scalar_a = factor;
    n.value = val(a);
    for (auto& x : n.value.v) x *= factor;
    return push(std::move(n));
  }

  NodeId neg(NodeId a) { return scale(a, T(-1)); }

  // axis 0 stacks rows, axis 1 lays blocks side by side.
  NodeId concat(int axis, std::span<const NodeId> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    std::size_t rows = val(parts[0]).rows, cols = val(parts[0]).cols;
    for (NodeId p : parts) {
      const auto& t = val(p);
      if (axis == 0) {
        if (t.cols != cols) throw std::invalid_argument("concat: column mismatch");
      } else if (t.rows != rows) {
        throw std::invalid_argument("concat: row mismatch");
      }
    }
    Node n;
    n.op = Op::kConcat;
    n.parents.assign(parts.begin(), parts.end());
    n.requires_grad = any_requires_grad(n.parents);
    n.iscalar = axis;
    if (axis == 0) {
      std::size_t total = 0;
      for (NodeId p : parts) total += val(p).rows;
      n.value = Tensor<T>(total, cols);
      std::size_t r = 0;
      for (NodeId p : parts) {
        const auto& t = val(p);
        std::copy(t.v.begin(), t.v.end(), n.value.v.begin() + r * cols);
        r += t.rows;
      }
    } else {
      std::size_t total = 0;
      for (NodeId p : parts) total += val(p).cols;
      n.value = Tensor<T>(rows, total);
      std::size_t c0 = 0;
      for (NodeId p : parts) {
        const auto& t = val(p);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy(t.v.begin() + r * t.cols, t.v.begin() + (r + 1) * t.cols,
                    n.value.v.begin() + r * total + c0);
        c0 += t.cols;
      }
    }
    return push(std::move(n));
  }
  NodeId concat(int axis, std::initializer_list<NodeId> parts) {
    return concat(axis, std::span<const NodeId>(parts.begin(), parts.size()));
  }

  // Half-open row/column ranges.
  NodeId slice(NodeId a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    const auto& t = val(a);
    if (r1 > t.rows || c1 > t.cols || r0 >= r1 || c0 >= c1)
      throw std::invalid_argument("slice: range out of bounds for " + shape_str(t));
    Node n = make(Op::kSlice, a);
    n.indices = {static_cast<std::uint32_t>(r0), static_cast<std::uint32_t>(r1),
                 static_cast<std::uint32_t>(c0), static_cast<std::uint32_t>(c1)};
    n.value = Tensor<T>(r1 - r0, c1 - c0);
    for (std::size_t r = r0; r < r1; ++r)
      std::copy(t.v.begin() + r * t.cols + c0, t.v.begin() + r * t.cols + c1,
                n.value.v.begin() + (r - r0) * n.value.cols);
    return push(std::move(n));
  }

  NodeId transpose(NodeId a) {
    const auto& t = val(a);
    Node n = make(Op::kTranspose, a);
    n.value = Tensor<T>(t.cols, t.rows);
    for (std::size_t r = 0; r < t.rows; ++r)
      for (std::size_t c = 0; c < t.cols; ++c) n.value.at(c, r) = t.at(r, c);
    return push(std::move(n));
  }

  // Embedding lookup: rows of `table` selected by id. Backward scatter-adds,
  // so a row picked twice receives its gradient twice.
  NodeId gather_rows(NodeId table, std::span<const std::uint32_t> ids) {
    const auto& t = val(table);
    for (std::uint32_t id : ids)
      if (id >= t.rows) throw std::invalid_argument("gather_rows: id " + std::to_string(id) + " out of range");
    Node n = make(Op::kGatherRows, table);
    n.indices.assign(ids.begin(), ids.end());
    n.value = Tensor<T>(ids.size(), t.cols);
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy(t.v.begin() + ids[i] * t.cols, t.v.begin() + (ids[i] + 1) * t.cols,
                n.value.v.begin() + i * t.cols);
    return push(std::move(n));
  }

  NodeId reduce_sum(NodeId a) {
    Node n = make(Op::kReduceSum, a);
    T s = T(0);
    for (T x : val(a).v) s += x;
    n.value = Tensor<T>::scalar(s);
    return push(std::move(n));
  }

  NodeId reduce_mean(NodeId a) {
    Node n = make(Op::kReduceMean, a);
    T s = T(0);
    for (T x : val(a).v) s += x;
    n.value = Tensor<T>::scalar(s / static_cast<T>(val(a).size()));
    return push(std::move(n));
  }

  // axis = -1: scalar minimum over all entries. axis = 0: per-column minimum
  // (1 x cols). Gradient goes to the lowest-index argmin on ties.
  NodeId reduce_min(NodeId a, int axis = -1) {
    const auto& t = val(a);
    Node n = make(Op::kReduceMin, a);
    n.iscalar = axis;
    if (axis == -1) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < t.size(); ++i)
        if (t.v[i] < t.v[arg]) arg = i;
      n.indices = {static_cast<std::uint32_t>(arg)};
      n.value = Tensor<T>::scalar(t.v[arg]);
    } else if (axis == 0) {
      n.value = Tensor<T>(1, t.cols);
      n.indices.resize(t.cols);
      for (std::size_t c = 0; c < t.cols; ++c) {
        std::size_t arg = 0;
        for (std::size_t r = 1; r < t.rows; ++r)
          if (t.at(r, c) < t.at(arg, c)) arg = r;
        n.indices[c] = static_cast<std::uint32_t>(arg);
        n.value.v[c] = t.at(arg, c);
      }
    } else {
      throw std::invalid_argument("reduce_min: axis must be -1 or 0");
    }
    for (std::uint32_t i : n.indices) branch_sig_.push_back(static_cast<std::int32_t>(i));
    return push(std::move(n));
  }

  // Ties route the gradient to the first argument.
  NodeId elementwise_min(NodeId a, NodeId b) { return min_max(Op::kElementwiseMin, a, b); }
  NodeId elementwise_max(NodeId a, NodeId b) { return min_max(Op::kElementwiseMax, a, b); }

  // Boundary values pass gradient (the interior branch wins ties).
  NodeId clamp(NodeId a, T lo, T hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    Node n = make(Op::kClamp, a);
    n.scalar_a = lo;
    n.scalar_b = hi;
    const auto& t = val(a);
    n.value = t;
    n.mask.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const T x = t.v[i];
      const std::uint8_t region = x < lo ? 0 : (x > hi ? 2 : 1);
      n.mask[i] = region;
      n.value.v[i] = region == 0 ? lo : (region == 2 ? hi : x);
      branch_sig_.push_back(region);
    }
    return push(std::move(n));
  }

  // Gradient at exactly zero is zero.
  NodeId relu(NodeId a) {
    Node n = make(Op::kRelu, a);
    const auto& t = val(a);
    n.value = t;
    n.mask.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const bool pos = t.v[i] > T(0);
      n.mask[i] = pos ? 1 : 0;
      if (!pos) n.value.v[i] = T(0);
      branch_sig_.push_back(pos ? 1 : 0);
    }
    return push(std::move(n));
  }

  NodeId sigmoid(NodeId a) {
    Node n = make(Op::kSigmoid, a);
    n.value = val(a);
    for (auto& x : n.value.v) x = T(1) / (T(1) + std::exp(-x));
    return push(std::move(n));
  }

  NodeId tanh(NodeId a) {
    Node n = make(Op::kTanh, a);
    n.value = val(a);
    for (auto& x : n.value.v) x = std::tanh(x);
    return push(std::move(n));
  }

  // Row-wise stable softmax of a 2-D tensor.
  NodeId softmax_rows(NodeId a) {
    const auto& t = val(a);
    if (t.rows == 0 || t.cols == 0) throw std::invalid_argument("softmax_rows: empty input");
    Node n = make(Op::kSoftmaxRows, a);
    n.value = Tensor<T>(t.rows, t.cols);
    for (std::size_t r = 0; r < t.rows; ++r) {
      T mx = t.at(r, 0);
      for (std::size_t c = 1; c < t.cols; ++c) mx = std::max(mx, t.at(r, c));
      T sum = T(0);
      for (std::size_t c = 0; c < t.cols; ++c) {
        const T e = std::exp(t.at(r, c) - mx);
        n.value.at(r, c) = e;
        sum += e;
      }
      for (std::size_t c = 0; c < t.cols; ++c) n.value.at(r, c) /= sum;
    }
    return push(std::move(n));
  }

  NodeId squared_norm(NodeId a) {
    Node n = make(Op::kSquaredNorm, a);
    T s = T(0);
    for (T x : val(a).v) s += x * x;
    n.value = Tensor<T>::scalar(s);
    return push(std::move(n));
  }

  // Inverted dropout with a caller-owned generator. Eval paths simply do not
  // emit this op.
  NodeId dropout_mask(NodeId a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout_mask: rate must be in [0,1)");
    Node n = make(Op::kDropoutMask, a);
    const auto& t = val(a);
    n.value = t;
    n.saved.resize(t.size());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < t.size(); ++i) {
      const bool keep = rng.next_double() >= rate;
      n.saved[i] = keep ? keep_scale : T(0);
      n.value.v[i] *= n.saved[i];
    }
    return push(std::move(n));
  }

  // --- access ---------------------------------------------------------------
  const Tensor<T>& val(NodeId id) const { return nodes_.at(id).value; }
  const Tensor<T>& grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.sparse_grad) throw std::logic_error("grad: node has sparse gradient; use sparse_grad_rows");
    return n.grad;
  }
  // Sorted (row, gradient) pairs for a sparse-grad leaf.
  std::vector<std::pair<std::uint32_t, std::vector<T>>> sparse_grad_rows(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (!n.sparse_grad) throw std::logic_error("sparse_grad_rows: node has a dense gradient");
    std::vector<std::pair<std::uint32_t, std::vector<T>>> out(n.sparse_rows.begin(), n.sparse_rows.end());
    return out;
  }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Branch decisions (relu signs, clamp regions, min/max picks, argmins) made
  // during the forward pass. Two evaluations whose signatures differ crossed a
  // non-differentiable boundary in between.
  const std::vector<std::int32_t>& branch_signature() const { return branch_sig_; }

  // --- backward -------------------------------------------------------------
  void backward(NodeId loss) {
    const Node& ln = nodes_.at(loss);
    if (ln.value.rows != 1 || ln.value.cols != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(ln.value));
    for (auto& n : nodes_) {
      if (n.requires_grad && !n.sparse_grad) {
        n.grad = Tensor<T>(n.value.rows, n.value.cols);
      }
      n.sparse_rows.clear();
    }
    if (!ln.requires_grad) return;
    nodes_[loss].grad.v[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) backward_node(static_cast<NodeId>(i));
  }

  // Test hook: multiplies the input gradient produced by one op kind, to show
  // the finite-difference checker catches a wrong backward rule.
  void inject_gradient_bug(Op op, T factor) {
    bug_op_ = op;
    bug_factor_ = factor;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> parents;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool sparse_grad = false;
    T scalar_a = T(0);
    T scalar_b = T(0);
    int iscalar = 0;                        // concat axis / reduce axis
    std::vector<std::uint32_t> indices;     // gather ids, argmins, slice range
    std::vector<std::uint8_t> mask;         // relu / clamp regions / min-max picks
    std::vector<T> saved;                   // dropout multipliers
    std::map<std::uint32_t, std::vector<T>> sparse_rows;
  };

  Node make(Op op, NodeId a, NodeId b = kNoNode) {
    Node n;
    n.op = op;
    n.parents.push_back(a);
    if (b != kNoNode) n.parents.push_back(b);
    n.requires_grad = any_requires_grad(n.parents);
    for (NodeId p : n.parents)
      if (nodes_.at(p).sparse_grad && op != Op::kGatherRows)
        throw std::logic_error("sparse-grad leaves may only feed gather_rows");
    return n;
  }

  bool any_requires_grad(const std::vector<NodeId>& ps) const {
    for (NodeId p : ps)
      if (nodes_.at(p).requires_grad) return true;
    return false;
  }

  NodeId push(Node n, bool check_finite = true) {
    if (check_finite) {
      for (T x : n.value.v) {
        if (!std::isfinite(static_cast<double>(x)))
          throw NumericFault(std::string("op '") + op_name(n.op) + "'");
      }
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId add_like(Op op, NodeId a, NodeId b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    const bool broadcast = tb.rows == 1 && ta.cols == tb.cols && ta.rows != 1;
    if (!ta.same_shape(tb) && !broadcast)
      throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " + shape_str(ta) +
                                  " vs " + shape_str(tb));
    Node n = make(op, a, b);
    n.value = ta;
    const T sign = op == Op::kSub ? T(-1) : T(1);
    for (std::size_t r = 0; r < ta.rows; ++r)
      for (std::size_t c = 0; c < ta.cols; ++c)
        n.value.at(r, c) += sign * (broadcast ? tb.at(0, c) : tb.at(r, c));
    return push(std::move(n));
  }

  NodeId min_max(Op op, NodeId a, NodeId b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (!ta.same_shape(tb))
      throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " + shape_str(ta) +
                                  " vs " + shape_str(tb));
    Node n = make(op, a, b);
    n.value = ta;
    n.mask.resize(ta.size());
    const bool is_min = op == Op::kElementwiseMin;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      const bool take_b = is_min ? (tb.v[i] < ta.v[i]) : (tb.v[i] > ta.v[i]);
      n.mask[i] = take_b ? 1 : 0;
      if (take_b) n.value.v[i] = tb.v[i];
      branch_sig_.push_back(take_b ? 1 : 0);
    }
    return push(std::move(n));
  }

  void backward_node(NodeId id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::kLeaf) return;
    const Tensor<T>& g = n.grad;
    const T bug = (bug_op_ == n.op) ? bug_factor_ : T(1);

    auto parent_grad = [&](std::size_t idx) -> Tensor<T>& { return nodes_[n.parents[idx]].grad; };
    auto parent_live = [&](std::size_t idx) { return nodes_[n.parents[idx]].requires_grad; };
    auto parent_val = [&](std::size_t idx) -> const Tensor<T>& { return nodes_[n.parents[idx]].value; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        const auto& a = parent_val(0);
        const auto& b = parent_val(1);
        if (parent_live(0)) {
          // dA += G * B^T
          Tensor<T> bt(b.cols, b.rows);
          for (std::size_t r = 0; r < b.rows; ++r)
            for (std::size_t c = 0; c < b.cols; ++c) bt.at(c, r) = b.at(r, c);
          Tensor<T> da(a.rows, a.cols);
          kernels::matmul(g.data(), bt.data(), da.data(), g.rows, g.cols, bt.cols);
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < da.size(); ++i) dst.v[i] += bug * da.v[i];
        }
        if (parent_live(1)) {
          // dB += A^T * G
          Tensor<T> at(a.cols, a.rows);
          for (std::size_t r = 0; r < a.rows; ++r)
            for (std::size_t c = 0; c < a.cols; ++c) at.at(c, r) = a.at(r, c);
          Tensor<T> db(b.rows, b.cols);
          kernels::matmul(at.data(), g.data(), db.data(), at.rows, at.cols, g.cols);
          auto& dst = parent_grad(1);
          for (std::size_t i = 0; i < db.size(); ++i) dst.v[i] += bug * db.v[i];
        }
        break;
      }
      case Op::kAdd:
      case Op::kSub: {
        const T sign = n.op == Op::kSub ? T(-1) : T(1);
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += bug * g.v[i];
        }
        if (parent_live(1)) {
          auto& dst = parent_grad(1);
          const auto& tb = parent_val(1);
          if (tb.rows == 1 && g.rows != 1) {
            for (std::size_t r = 0; r < g.rows; ++r)
              for (std::size_t c = 0; c < g.cols; ++c) dst.at(0, c) += bug * sign * g.at(r, c);
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += bug * sign * g.v[i];
          }
        }
        break;
      }
      case Op::kMul: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          const auto& b = parent_val(1);
          for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += bug * g.v[i] * b.v[i];
        }
        if (parent_live(1)) {
          auto& dst = parent_grad(1);
          const auto& a = parent_val(0);
          for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += bug * g.v[i] * a.v[i];
        }
        break;
      }
      case Op::kScale: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += bug * n.scalar_a * g.v[i];
        }
        break;
      }
      case Op::kConcat: {
        const int axis = n.iscalar;
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          const auto& pv = parent_val(pi);
          if (parent_live(pi)) {
            auto& dst = parent_grad(pi);
            if (axis == 0) {
              for (std::size_t i = 0; i < pv.size(); ++i) dst.v[i] += bug * g.v[offset * g.cols + i];
            } else {
              for (std::size_t r = 0; r < pv.rows; ++r)
                for (std::size_t c = 0; c < pv.cols; ++c) dst.at(r, c) += bug * g.at(r, offset + c);
            }
          }
          offset += axis == 0 ? pv.rows : pv.cols;
        }
        break;
      }
      case Op::kSlice: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          const std::size_t r0 = n.indices[0], c0 = n.indices[2];
          for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) dst.at(r0 + r, c0 + c) += bug * g.at(r, c);
        }
        break;
      }
      case Op::kTranspose: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t r = 0; r < g.rows; ++r)
            for (std::size_t c = 0; c < g.cols; ++c) dst.at(c, r) += bug * g.at(r, c);
        }
        break;
      }
      case Op::kGatherRows: {
        Node& table = nodes_[n.parents[0]];
        if (!table.requires_grad) break;
        const std::size_t cols = g.cols;
        for (std::size_t i = 0; i < n.indices.size(); ++i) {
          const std::uint32_t row = n.indices[i];
          if (table.sparse_grad) {
            auto& acc = table.sparse_rows[row];
            if (acc.empty()) acc.assign(cols, T(0));
            for (std::size_t c = 0; c < cols; ++c) acc[c] += bug * g.at(i, c);
          } else {
            for (std::size_t c = 0; c < cols; ++c) table.grad.at(row, c) += bug * g.at(i, c);
          }
        }
        break;
      }
      case Op::kReduceSum: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (auto& x : dst.v) x += bug * g.v[0];
        }
        break;
      }
      case Op::kReduceMean: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          const T s = g.v[0] / static_cast<T>(dst.size());
          for (auto& x : dst.v) x += bug * s;
        }
        break;
      }
      case Op::kReduceMin: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          if (n.iscalar == -1) {
            dst.v[n.indices[0]] += bug * g.v[0];
          } else {
            for (std::size_t c = 0; c < g.cols; ++c) dst.at(n.indices[c], c) += bug * g.v[c];
          }
        }
        break;
      }
      case Op::kElementwiseMin:
      case Op::kElementwiseMax: {
        for (int side = 0; side < 2; ++side) {
          if (!parent_live(side)) continue;
          auto& dst = parent_grad(side);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (n.mask[i] == side) dst.v[i] += bug * g.v[i];
        }
        break;
      }
      case Op::kClamp: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (n.mask[i] == 1) dst.v[i] += bug * g.v[i];
        }
        break;
      }
      case Op::kRelu: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (n.mask[i]) dst.v[i] += bug * g.v[i];
        }
        break;
      }
      case Op::kSigmoid: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = n.value.v[i];
            dst.v[i] += bug * g.v[i] * y * (T(1) - y);
          }
        }
        break;
      }
      case Op::kTanh: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const T y = n.value.v[i];
            dst.v[i] += bug * g.v[i] * (T(1) - y * y);
          }
        }
        break;
      }
      case Op::kSoftmaxRows: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t r = 0; r < g.rows; ++r) {
            T dot = T(0);
            for (std::size_t c = 0; c < g.cols; ++c) dot += g.at(r, c) * n.value.at(r, c);
            for (std::size_t c = 0; c < g.cols; ++c)
              dst.at(r, c) += bug * n.value.at(r, c) * (g.at(r, c) - dot);
          }
        }
        break;
      }
      case Op::kSquaredNorm: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          const auto& a = parent_val(0);
          for (std::size_t i = 0; i < a.size(); ++i) dst.v[i] += bug * T(2) * a.v[i] * g.v[0];
        }
        break;
      }
      case Op::kDropoutMask: {
        if (parent_live(0)) {
          auto& dst = parent_grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += bug * g.v[i] * n.saved[i];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::int32_t> branch_sig_;
  Op bug_op_ = Op::kLeaf;
  T bug_factor_ = T(1);
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kTranspose: return "transpose";
    case Op::kGatherRows: return "gather_rows";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kReduceMin: return "reduce_min";
    case Op::kElementwiseMin: return "elementwise_min";
    case Op::kElementwiseMax: return "elementwise_max";
    case Op::kClamp: return "clamp";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kSquaredNorm: return "squared_norm";
    case Op::kDropoutMask: return "dropout_mask";
  }
  return "unknown";
}

}  // namespace boxrec::ad
