#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace petbench {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename S>
using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatrixMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatrixMap = Eigen::Map<const RowMatrix<S>>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename S>
struct Node;

// Receives d(loss)/d(output) and adds the contribution for each parent into
// the matching slot. A slot is null when that parent needs no gradient.
template <typename S>
using BackwardFn = std::function<void(const Array<S>& out_grad, std::span<Array<S>* const> parent_grads)>;

template <typename S>
struct Node {
  Shape shape;
  Array<S> value;
  Array<S> grad;  // persistent only on leaves; empty until the first backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<S> backward;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
};

/// Dense row-major n-d array with an optional gradient. Copies share the
/// underlying node; an op result is never mutated after construction, only
/// leaf values are (by the optimizer, between forward passes).
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor from(Shape shape, Array<S> values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<S> values, bool requires_grad = false);
  static Tensor scalar(S value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  /// Extent of dimension `d`; negative values count from the back.
  Index dim(int d) const;
  Index size() const { return node_->value.size(); }

  const Array<S>& value() const { return node_->value; }
  Array<S>& mutable_value() { return node_->value; }
  S item() const;
  S operator[](Index flat) const { return node_->value[flat]; }

  /// 2-d view: all leading dims collapsed into rows, last dim as columns.
  ConstMatrixMap<S> matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array<S>& grad() const { return node_->grad; }
  Array<S>& mutable_grad();
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node<S>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

/// While alive, ops on this thread record no graph: results are constants
/// and intermediates are freed as soon as they go out of scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Builds an op result. When no parent requires a gradient (or a NoGradGuard
/// is active) the node is recorded as a constant and `backward` is dropped.
template <typename S>
Tensor<S> make_result(Shape shape, Array<S> value, std::initializer_list<Tensor<S>> parents, const char* op,
                      BackwardFn<S> backward);
template <typename S>
Tensor<S> make_result(Shape shape, Array<S> value, const std::vector<Tensor<S>>& parents, const char* op,
                      BackwardFn<S> backward);

/// Ordered record of the operations reachable from a root, parents first.
template <typename S>
struct Tape {
  Tensor<S> root;  // keeps every recorded node alive
  std::vector<const Node<S>*> nodes;

  static Tape record(const Tensor<S>& root);
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. Repeated calls add up.
template <typename S>
void backward(const Tensor<S>& loss);

/// d(loss)/d(t) for each t in `wrt`, leaving all stored gradients untouched.
template <typename S>
std::vector<Array<S>> gradients(const Tensor<S>& loss, std::span<const Tensor<S>> wrt);

}  // namespace petbench
