#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "seqdet/rng.hpp"

namespace seqdet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Thread-local autodiff switch. Ops record the graph only while enabled and
// at least one parent requires gradients.
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Allocator that skips zero-initialization for trivial types; buffers that
// are filled element-by-element pay for one write instead of two.
template <typename T>
struct DefaultInitAlloc : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAlloc<U>;
  };
  template <typename U>
  void construct(U* p) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using TensorBuffer = std::vector<T, DefaultInitAlloc<T>>;

template <typename T>
struct TensorNode {
  Shape shape;
  TensorBuffer<T> value;
  TensorBuffer<T> grad;  // allocated on first accumulation, kept across backward calls
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(const TensorNode<T>&)> backprop;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

// Dense n-d array with reverse-mode differentiation. Copying a Tensor copies
// the handle; the node (value, grad, graph edges) is shared.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = shape;
    t.node_->value.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  // Uninitialized storage; for op outputs where every element gets written.
  static Tensor uninit(const Shape& shape) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = shape;
    t.node_->value.resize(static_cast<size_t>(shape_numel(shape)));
    return t;
  }

  static Tensor full(const Shape& shape, T v, bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from_data(const Shape& shape, const std::vector<T>& data,
                          bool requires_grad = false) {
    require(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_str(shape));
    Tensor t = uninit(shape);
    std::copy(data.begin(), data.end(), t.node_->value.begin());
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& v : t.node_->value) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
    return t;
  }

  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& v : t.node_->value)
      v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(size_t i) const { return node_->shape[i]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  T& at(std::int64_t i) { return node_->value[static_cast<size_t>(i)]; }
  T at(std::int64_t i) const { return node_->value[static_cast<size_t>(i)]; }

  T item() const {
    require(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  const TensorBuffer<T>& grad() const { return node_->grad; }
  TensorBuffer<T>& grad_ref() { return node_->grad; }
  T* grad_data() { return node_->grad_data(); }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Leaf tensor sharing nothing with the graph; same values.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  Tensor clone_values() const { return detach(); }

  // Reverse-mode sweep from a scalar. Gradients accumulate into .grad of
  // every reachable tensor that requires them; repeated calls keep summing.
  void backward() const {
    require(numel() == 1, "backward() requires a scalar loss, got shape " + shape_str(shape()));
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    topo(node_.get(), seen, order);
    // interior buffers restart each sweep; leaf gradients keep accumulating
    for (TensorNode<T>* n : order)
      if (!n->parents.empty()) n->grad.clear();
    node_->grad_data()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<T>* n = *it;
      if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
  }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  static void topo(TensorNode<T>* root, std::unordered_set<TensorNode<T>*>& seen,
                   std::vector<TensorNode<T>*>& order) {
    // Iterative DFS; sequences can chain a few hundred nodes.
    struct Frame {
      TensorNode<T>* n;
      size_t next;
    };
    std::vector<Frame> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->parents.size()) {
        TensorNode<T>* p = f.n->parents[f.next++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorNode<T>> node_;
};

// Marks `out` as produced from `parents` with the given backward function.
template <typename T>
void attach_graph(Tensor<T>& out, std::vector<Tensor<T>> parents,
                  std::function<void(const TensorNode<T>&)> backprop) {
  if (!GradMode::enabled()) return;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  auto& node = *out.node();
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node());
  node.backprop = std::move(backprop);
}

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace seqdet
