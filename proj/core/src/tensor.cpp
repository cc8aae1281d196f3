#include "tfpose/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tfpose {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch between " + shape_to_string(a) +
                              " and " + shape_to_string(b));
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_finite_checks = false;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

template <typename T>
T TensorNode<T>::scalar() const {
  if (value.size() != 1) {
    throw std::logic_error(std::string("scalar() on tensor of shape ") + shape_to_string(shape));
  }
  return value[0];
}

template <typename T>
std::vector<T>& Gradients<T>::of(const TensorNode<T>* node) {
  auto it = bufs_.find(node);
  if (it == bufs_.end()) {
    it = bufs_.emplace(node, std::vector<T>(node->value.size(), T(0))).first;
  }
  return it->second;
}

template <typename T>
const std::vector<T>* Gradients<T>::find(const TensorNode<T>* node) const {
  auto it = bufs_.find(node);
  return it == bufs_.end() ? nullptr : &it->second;
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, T fill) {
  auto t = std::make_shared<TensorNode<T>>();
  const std::int64_t n = shape_numel(shape);
  t->shape = std::move(shape);
  t->value.assign(static_cast<std::size_t>(n), fill);
  return t;
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(data.size())) {
    throw std::invalid_argument("make_tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_to_string(shape));
  }
  auto t = std::make_shared<TensorNode<T>>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  return t;
}

template <typename T>
TensorPtr<T> make_param(Shape shape, std::vector<T> data) {
  auto t = make_tensor(std::move(shape), std::move(data));
  t->requires_grad = true;
  return t;
}

template <typename T>
void backward(const TensorPtr<T>& root, Gradients<T>& grads) {
  if (root->size() != 1) {
    throw std::logic_error("backward: implicit seed requires a scalar root, got " +
                           shape_to_string(root->shape));
  }
  backward(root, std::vector<T>{T(1)}, grads);
}

template <typename T>
void backward(const TensorPtr<T>& root, const std::vector<T>& seed, Gradients<T>& grads) {
  if (!root->requires_grad) {
    throw std::logic_error("backward: root does not require gradients");
  }
  if (static_cast<std::int64_t>(seed.size()) != root->size()) {
    throw std::invalid_argument("backward: seed length does not match root size");
  }

  // Iterative post-order DFS over parent edges; the reversed order visits
  // every node before any of its parents.
  std::vector<const TensorNode<T>*> order;
  std::unordered_set<const TensorNode<T>*> visited;
  std::vector<std::pair<const TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const TensorNode<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto& g0 = grads.of(root.get());
  for (std::size_t i = 0; i < seed.size(); ++i) g0[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const TensorNode<T>* node = *it;
    if (node->backward_fn) node->backward_fn(node, grads);
  }
}

template <typename T>
TensorPtr<T> ParamRegistry<T>::create(const std::string& name, Shape shape) {
  auto t = make_tensor<T>(std::move(shape), T(0));
  t->requires_grad = true;
  add(name, t);
  return t;
}

template <typename T>
void ParamRegistry<T>::add(const std::string& name, TensorPtr<T> t) {
  if (index_.count(name)) {
    throw std::logic_error("ParamRegistry: duplicate parameter name '" + name + "'");
  }
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
}

template <typename T>
TensorPtr<T> ParamRegistry<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].second;
}

template <typename T>
std::int64_t ParamRegistry<T>::total_size() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : items_) n += t->size();
  return n;
}

namespace detail {

template <typename T>
TensorPtr<T> op_node(const char* op, Shape shape, std::vector<TensorPtr<T>> parents) {
  auto out = std::make_shared<TensorNode<T>>();
  const std::int64_t n = shape_numel(shape);
  out->shape = std::move(shape);
  out->value.assign(static_cast<std::size_t>(n), T(0));
  out->op = op;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        out->requires_grad = true;
        break;
      }
    }
    if (out->requires_grad) out->parents = std::move(parents);
  }
  return out;
}

template <typename T>
TensorPtr<T> finish(TensorPtr<T> t) {
  if (finite_checks_enabled() && !all_finite(t->value)) {
    throw std::runtime_error(std::string("non-finite values in output of op '") + t->op + "'");
  }
  return t;
}

template TensorPtr<float> op_node<float>(const char*, Shape, std::vector<TensorPtr<float>>);
template TensorPtr<double> op_node<double>(const char*, Shape, std::vector<TensorPtr<double>>);
template TensorPtr<float> finish<float>(TensorPtr<float>);
template TensorPtr<double> finish<double>(TensorPtr<double>);

}  // namespace detail

template bool all_finite<float>(const std::vector<float>&);
template bool all_finite<double>(const std::vector<double>&);
template struct TensorNode<float>;
template struct TensorNode<double>;
template class Gradients<float>;
template class Gradients<double>;
template class ParamRegistry<float>;
template class ParamRegistry<double>;
template TensorPtr<float> make_tensor<float>(Shape, float);
template TensorPtr<double> make_tensor<double>(Shape, double);
template TensorPtr<float> make_tensor<float>(Shape, std::vector<float>);
template TensorPtr<double> make_tensor<double>(Shape, std::vector<double>);
template TensorPtr<float> make_param<float>(Shape, std::vector<float>);
template TensorPtr<double> make_param<double>(Shape, std::vector<double>);
template void backward<float>(const TensorPtr<float>&, Gradients<float>&);
template void backward<double>(const TensorPtr<double>&, Gradients<double>&);
template void backward<float>(const TensorPtr<float>&, const std::vector<float>&, Gradients<float>&);
template void backward<double>(const TensorPtr<double>&, const std::vector<double>&, Gradients<double>&);

}  // namespace tfpose
