#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msp/errors.hpp"

namespace msp {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw shape_error("tensor extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> values;
  bool requires_grad = false;
  std::vector<S> grad;  // published gradient; empty until backward runs
};

// Dense row-major tensor with value semantics over a shared payload.
// Values are immutable after creation except for parameter updates
// (values_mut, single writer) and the grad buffer.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = shape;
    t.node_->values.assign(static_cast<size_t>(numel_of(shape)), S(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(const Shape& shape, S value, bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& v : t.node_->values) v = value;
    return t;
  }

  static Tensor from_values(const Shape& shape, std::vector<S> values,
                            bool requires_grad = false) {
    if (static_cast<int64_t>(values.size()) != numel_of(shape)) {
      throw shape_error("value count does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = shape;
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }

  const std::vector<S>& values() const { return node_->values; }
  std::vector<S>& values_mut() { return node_->values; }
  const S* data() const { return node_->values.data(); }
  S* data_mut() { return node_->values.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (!has_grad()) throw value_error("tensor has no populated gradient");
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  S item() const {
    if (numel() != 1) {
      throw shape_error("item() requires a scalar tensor, got " +
                        shape_str(shape()));
    }
    return node_->values[0];
  }

  bool all_finite() const {
    for (S v : node_->values) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // Deep copy of the values (gradient buffer is not carried over).
  Tensor clone() const {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = node_->shape;
    t.node_->values = node_->values;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  bool same_shape(const Tensor& other) const {
    return node_->shape == other.node_->shape;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  TensorNode<S>* node() const { return node_.get(); }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Surfaces silent NaN/Inf propagation as an error.
template <typename S>
void validate_finite(const Tensor<S>& t, const std::string& what) {
  const auto& v = t.values();
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(static_cast<double>(v[i]))) {
      throw value_error(what + ": non-finite element at flat index " +
                        std::to_string(i));
    }
  }
}

// Ordered record of differentiable operations. Replayed strictly in reverse
// execution order by backward(). One tape is single-writer; disjoint tapes
// are independent and safe to use concurrently.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void note_output(const Tensor<S>& t) { seen_.insert(t.node()); }
  bool saw(const Tensor<S>& t) const { return seen_.count(t.node()) > 0; }

  void record(std::vector<Tensor<S>> refs, std::function<void(Tape&)> back) {
    steps_.push_back(Step{std::move(refs), std::move(back)});
  }

  // Tape-local gradient buffer for a node, zero-initialized on first use.
  std::vector<S>& grad_accum(TensorNode<S>* n) {
    auto it = grads_.find(n);
    if (it == grads_.end()) {
      it = grads_.emplace(n, std::vector<S>(n->values.size(), S(0))).first;
    }
    return it->second;
  }

  const std::vector<S>* grad_lookup(const TensorNode<S>* n) const {
    auto it = grads_.find(const_cast<TensorNode<S>*>(n));
    return it == grads_.end() ? nullptr : &it->second;
  }

  const std::vector<S>* local_grad(const Tensor<S>& t) const {
    return grad_lookup(t.node());
  }

  // Reverse sweep from a scalar loss. With publish=true the tape-local
  // gradients of every requires_grad tensor are accumulated into the
  // tensors' grad buffers; with publish=false they stay tape-local
  // (used for per-sample gradients inside a batch).
  void backward(const Tensor<S>& loss, bool publish = true) {
    if (consumed_) throw value_error("tape backward may only run once");
    if (loss.numel() != 1) {
      throw shape_error("backward requires a scalar loss, got " +
                        shape_str(loss.shape()));
    }
    if (!saw(loss)) {
      throw value_error("loss tensor was not produced under this tape");
    }
    consumed_ = true;
    grad_accum(loss.node())[0] = S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      it->back(*this);
    }
    if (publish) {
      for (auto& [node, g] : grads_) {
        if (!node->requires_grad) continue;
        if (node->grad.empty()) node->grad.assign(node->values.size(), S(0));
        for (size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
      }
    }
  }

  size_t step_count() const { return steps_.size(); }

 private:
  struct Step {
    std::vector<Tensor<S>> refs;  // keeps payloads alive for the sweep
    std::function<void(Tape&)> back;
  };

  std::vector<Step> steps_;
  std::unordered_set<const TensorNode<S>*> seen_;
  std::unordered_map<TensorNode<S>*, std::vector<S>> grads_;
  bool consumed_ = false;
};

template <typename S>
inline void backward(const Tensor<S>& loss, Tape<S>& tape) {
  tape.backward(loss, true);
}

}  // namespace msp
