#include "petbench/tensor.hpp"

#include <sstream>
#include <unordered_map>

namespace petbench {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape, Index size) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
  }
  if (numel(shape) != size) {
    throw ShapeError("shape " + to_string(shape) + " does not hold " + std::to_string(size) + " values");
  }
}

}  // namespace

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), S(0), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  Index n = numel(shape);
  return from(std::move(shape), Array<S>::Constant(n, value), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, Array<S> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, std::initializer_list<S> values, bool requires_grad) {
  Array<S> a(static_cast<Index>(values.size()));
  Index i = 0;
  for (S v : values) a[i++] = v;
  return from(std::move(shape), std::move(a), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
  return from({1}, Array<S>::Constant(1, value), requires_grad);
}

template <typename S>
Index Tensor<S>::dim(int d) const {
  int n = ndim();
  int i = d < 0 ? n + d : d;
  if (i < 0 || i >= n) {
    throw ShapeError("dimension " + std::to_string(d) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(i)];
}

template <typename S>
S Tensor<S>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename S>
ConstMatrixMap<S> Tensor<S>::matrix() const {
  Index cols = node_->shape.back();
  return ConstMatrixMap<S>(node_->value.data(), size() / cols, cols);
}

template <typename S>
Array<S>& Tensor<S>::mutable_grad() {
  if (!has_grad()) node_->grad = Array<S>::Zero(size());
  return node_->grad;
}

template <typename S>
void Tensor<S>::zero_grad() {
  if (has_grad()) node_->grad.setZero();
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
  return from(shape(), value(), false);
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename S>
Tensor<S> make_result(Shape shape, Array<S> value, const std::vector<Tensor<S>>& parents, const char* op,
                      BackwardFn<S> backward) {
  if (!value.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  any = any && g_grad_enabled;
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor<S>(std::move(node));
}

template <typename S>
Tensor<S> make_result(Shape shape, Array<S> value, std::initializer_list<Tensor<S>> parents, const char* op,
                      BackwardFn<S> backward) {
  return make_result(std::move(shape), std::move(value), std::vector<Tensor<S>>(parents), op, std::move(backward));
}

template <typename S>
Tape<S> Tape<S>::record(const Tensor<S>& root) {
  Tape tape;
  tape.root = root;
  std::unordered_map<const Node<S>*, bool> done;
  // Iterative post-order DFS; recurrent graphs are deep enough to make
  // recursion risky.
  std::vector<std::pair<const Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  done[root.node().get()] = false;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const Node<S>* parent = node->parents[next++].get();
      if (parent->requires_grad && !done.contains(parent)) {
        done[parent] = false;
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    done[node] = true;
    tape.nodes.push_back(node);
    stack.pop_back();
  }
  return tape;
}

namespace {

template <typename S>
std::unordered_map<const Node<S>*, Array<S>> run_backward(const Tensor<S>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw AutogradError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw AutogradError("backward on a loss detached from every parameter");

  Tape<S> tape = Tape<S>::record(loss);
  std::unordered_map<const Node<S>*, Array<S>> grads;
  grads.reserve(tape.nodes.size());
  grads[loss.node().get()] = Array<S>::Ones(1);

  std::vector<Array<S>*> slots;
  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    const Node<S>* node = *it;
    if (node->is_leaf()) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    slots.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Node<S>* parent = node->parents[i].get();
      if (!parent->requires_grad) continue;
      auto [slot, inserted] = grads.try_emplace(parent);
      if (inserted) slot->second = Array<S>::Zero(parent->value.size());
      slots[i] = &slot->second;
    }
    // unordered_map references stay valid across insertions.
    node->backward(found->second, std::span<Array<S>* const>(slots.data(), slots.size()));
    if (node != loss.node().get()) grads.erase(node);
  }
  return grads;
}

}  // namespace

template <typename S>
void backward(const Tensor<S>& loss) {
  auto grads = run_backward(loss);
  for (auto& [node, g] : grads) {
    if (!node->is_leaf()) continue;
    auto* leaf = const_cast<Node<S>*>(node);
    if (leaf->grad.size() != leaf->value.size()) {
      leaf->grad = std::move(g);
    } else {
      leaf->grad += g;
    }
  }
}

template <typename S>
std::vector<Array<S>> gradients(const Tensor<S>& loss, std::span<const Tensor<S>> wrt) {
  auto grads = run_backward(loss);
  std::vector<Array<S>> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto found = grads.find(t.node().get());
    out.push_back(found == grads.end() ? Array<S>::Zero(t.size()) : found->second);
  }
  return out;
}

#define PETBENCH_INSTANTIATE(S)                                                                                 \
  template class Tensor<S>;                                                                                      \
  template struct Tape<S>;                                                                                       \
  template Tensor<S> make_result(Shape, Array<S>, std::initializer_list<Tensor<S>>, const char*, BackwardFn<S>); \
  template Tensor<S> make_result(Shape, Array<S>, const std::vector<Tensor<S>>&, const char*, BackwardFn<S>);    \
  template void backward(const Tensor<S>&);                                                                      \
  template std::vector<Array<S>> gradients(const Tensor<S>&, std::span<const Tensor<S>>);

PETBENCH_INSTANTIATE(float)
PETBENCH_INSTANTIATE(double)

}  // namespace petbench
