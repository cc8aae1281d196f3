#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tfpose {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);
bool shapes_equal(const Shape& a, const Shape& b);

[[noreturn]] void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b);

template <typename T>
struct TensorNode;

template <typename T>
using TensorPtr = std::shared_ptr<TensorNode<T>>;

/// Gradient buffers for one backward pass, keyed by node identity.
///
/// Kept outside the graph nodes so several backward passes over graphs that
/// share parameter leaves (one graph per batch instance, possibly on
/// different threads) never write to shared state. Batch reduction then sums
/// the per-instance buffers in instance order, which makes the result
/// independent of the number of worker threads.
template <typename T>
class Gradients {
 public:
  /// Buffer for `node`, zero-initialized to the node's size on first access.
  std::vector<T>& of(const TensorNode<T>* node);
  const std::vector<T>* find(const TensorNode<T>* node) const;

  std::size_t buffer_count() const { return bufs_.size(); }

 private:
  std::unordered_map<const TensorNode<T>*, std::vector<T>> bufs_;
};

/// One node of the computation graph: a dense row-major array plus the
/// closure that pushes gradients to its parents.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<TensorPtr<T>> parents;
  std::function<void(const TensorNode<T>*, Gradients<T>&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  /// Value of a single-element tensor; throws otherwise.
  T scalar() const;
};

template <typename T>
TensorPtr<T> make_tensor(Shape shape, T fill = T(0));
template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data);
/// Leaf with requires_grad set (a trainable parameter or a grad-check input).
template <typename T>
TensorPtr<T> make_param(Shape shape, std::vector<T> data);

/// Thread-local autograd switch. With grads disabled, ops record neither
/// parents nor backward closures (inference mode).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Thread-local per-op non-finite detection. Every op output is scanned when
/// enabled; any NaN/Inf throws naming the op. Off by default (costly).
void set_finite_checks(bool on);
bool finite_checks_enabled();

template <typename T>
bool all_finite(const std::vector<T>& v);

/// Reverse-mode sweep from `root`, seeding d(root)/d(root) = seed
/// (or 1 for a scalar root). Gradients accumulate into `grads`.
template <typename T>
void backward(const TensorPtr<T>& root, Gradients<T>& grads);
template <typename T>
void backward(const TensorPtr<T>& root, const std::vector<T>& seed, Gradients<T>& grads);

/// Ordered collection of named trainable tensors. Creation order is the
/// canonical parameter order used by the optimizer and the checkpoint format.
template <typename T>
class ParamRegistry {
 public:
  TensorPtr<T> create(const std::string& name, Shape shape);
  void add(const std::string& name, TensorPtr<T> t);
  const std::vector<std::pair<std::string, TensorPtr<T>>>& items() const { return items_; }
  TensorPtr<T> find(const std::string& name) const;
  std::int64_t total_size() const;

 private:
  std::vector<std::pair<std::string, TensorPtr<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

/// Allocates the output node of an op. Parents and requires_grad are only
/// recorded when autograd is on and some parent needs gradients.
template <typename T>
TensorPtr<T> op_node(const char* op, Shape shape, std::vector<TensorPtr<T>> parents);

/// Optional per-op finite check; returns its argument.
template <typename T>
TensorPtr<T> finish(TensorPtr<T> t);

}  // namespace detail

}  // namespace tfpose
