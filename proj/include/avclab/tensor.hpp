#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor<T> is a shared handle to a graph node. Operations (ops.hpp) build
// the graph as they compute; Tensor::backward() runs the recorded backward
// rules in reverse topological order. Parameters are leaf tensors with
// requires_grad set; their .grad() accumulates across a forward/backward pass
// and is cleared explicitly by the optimizer.
//
// The same code instantiates at float (training) and double (wide-precision
// gradient checking).

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>

#include "avclab/common.hpp"

namespace avc {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    AVC_CHECK_ARG(d > 0, "tensor extents must be positive, got " << d);
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Global (per-thread) switch: when disabled, ops run forward-only and record
// nothing, which keeps evaluation passes cheap.
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    bool retain = false;  // keep value/grad alive through backward()'s cleanup
    std::vector<Tensor<T>> parents;
    std::function<void(Node&)> backprop;
  };

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : n_(std::make_shared<Node>()) {
    n_->shape = std::move(shape);
    n_->value.assign(size_t(shape_numel(n_->shape)), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : n_(std::make_shared<Node>()) {
    int64_t n = shape_numel(shape);
    AVC_CHECK_ARG(int64_t(data.size()) == n, "tensor data length " << data.size()
                                                                   << " does not match shape "
                                                                   << shape_str(shape));
    n_->shape = std::move(shape);
    n_->value = std::move(data);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t dim(size_t i) const { return n_->shape.at(i); }
  size_t ndim() const { return n_->shape.size(); }
  int64_t numel() const { return int64_t(n_->value.size()); }

  T* data() { return n_->value.data(); }
  const T* data() const { return n_->value.data(); }
  std::vector<T>& values() { return n_->value; }
  const std::vector<T>& values() const { return n_->value; }

  T& at(int64_t i) { return n_->value[size_t(i)]; }
  T at(int64_t i) const { return n_->value[size_t(i)]; }

  // Row-major element access for up to 4 dims (tests and small code paths).
  template <typename... Ix>
  T& operator()(Ix... ix) {
    return n_->value[size_t(flat_index({int64_t(ix)...}))];
  }
  template <typename... Ix>
  T operator()(Ix... ix) const {
    return n_->value[size_t(flat_index({int64_t(ix)...}))];
  }

  bool requires_grad() const { return n_ && n_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    n_->requires_grad = b;
    return *this;
  }
  Tensor& retain_grad() {
    n_->retain = true;
    return *this;
  }

  std::vector<T>& grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
    return n_->grad;
  }
  const std::vector<T>& grad_view() const { return n_->grad; }
  bool has_grad() const { return !n_->grad.empty(); }
  void zero_grad() { n_->grad.clear(); }

  Node* node() const { return n_.get(); }

  // Accumulate g into this tensor's gradient buffer.
  void accumulate_grad(const T* g, int64_t count) {
    auto& gr = grad();
    AVC_ASSERT(int64_t(gr.size()) == count, "gradient size mismatch");
    for (int64_t i = 0; i < count; ++i) gr[size_t(i)] += g[size_t(i)];
  }

  // Reverse-mode sweep from a scalar root. Intermediate nodes have their
  // buffers released as soon as their rule has run unless marked retain.
  // The traversal holds owning handles: releasing a closure mid-sweep must
  // not free a node that is still pending.
  void backward() {
    AVC_CHECK_ARG(numel() == 1, "backward() requires a scalar, got " << shape_str(shape()));
    std::vector<Tensor> order;
    {
      std::unordered_set<Node*> seen;
      struct Frame {
        Tensor t;
        size_t next_child;
      };
      std::vector<Frame> stack{{*this, 0}};
      seen.insert(n_.get());
      while (!stack.empty()) {
        Frame& f = stack.back();
        Node* nd = f.t.node();
        if (f.next_child < nd->parents.size()) {
          Tensor c = nd->parents[f.next_child++];
          if (c.defined() && !seen.count(c.node())) {
            seen.insert(c.node());
            stack.push_back({std::move(c), 0});
          }
        } else {
          order.push_back(f.t);
          stack.pop_back();
        }
      }
    }
    grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* nd = it->node();
      if (nd->backprop && !nd->grad.empty()) nd->backprop(*nd);
      bool leaf = nd->parents.empty();
      if (!leaf && !nd->retain) {
        nd->value.clear();
        nd->value.shrink_to_fit();
        nd->grad.clear();
        nd->grad.shrink_to_fit();
      }
      if (!leaf) {
        nd->backprop = nullptr;
        nd->parents.clear();
      }
    }
  }

  // Graph construction helper used by ops.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents,
                        std::function<void(Node&)> backprop) {
    Tensor out(std::move(shape));
    bool need = GradMode::enabled();
    if (need) {
      bool any = false;
      for (const auto& p : parents) any = any || p.requires_grad();
      need = any;
    }
    if (need) {
      out.n_->requires_grad = true;
      out.n_->parents = std::move(parents);
      out.n_->backprop = std::move(backprop);
    }
    return out;
  }

 private:
  int64_t flat_index(std::initializer_list<int64_t> ix) const {
    AVC_ASSERT(ix.size() == n_->shape.size(), "index rank mismatch");
    int64_t flat = 0;
    size_t d = 0;
    for (int64_t i : ix) {
      AVC_ASSERT(i >= 0 && i < n_->shape[d], "index out of range");
      flat = flat * n_->shape[d] + i;
      ++d;
    }
    return flat;
  }

  std::shared_ptr<Node> n_;
};

}  // namespace avc
