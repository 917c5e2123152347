#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "g2s/error.hpp"

namespace g2s {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

struct Node;

/// Storage behind a Tensor handle. Data is contiguous row-major.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;  // null for leaves
};

/// Hands out gradient accumulators for the inputs of a node during backward.
/// Returns nullptr for inputs that do not take part in differentiation, so
/// kernels can skip that work.
class GradSink {
 public:
  explicit GradSink(Node& node) : node_(node) {}
  std::vector<double>* operator[](std::size_t input);

 private:
  Node& node_;
};

using BackwardFn = std::function<void(const std::vector<double>& grad_out,
                                      const std::vector<double>& out,
                                      GradSink& sink)>;

/// One recorded operation on the graph.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  std::weak_ptr<TensorImpl> output;
  bool consumed = false;
};

/// Reference-counted handle to a dense real array with optional gradient.
/// Copies share storage; use clone() or detach() for independent data.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t d) const { return impl_->shape.at(d); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Mutable access bypasses the graph; only valid on leaves.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return impl_->data[flat]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return !impl_->grad_fn; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// New leaf holding a copy of the data, with no history.
  Tensor detach() const;
  Tensor clone() const;

  /// Reverse-mode sweep from this scalar; accumulates into leaf gradients.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Nodes reachable from a root in topological order (inputs before users).
struct Graph {
  std::vector<std::shared_ptr<Node>> nodes;

  static Graph collect(const Tensor& root);
};

/// While alive on a thread, operations do not record graph nodes.
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

/// Builds the output of an operation and records it when any input requires
/// grad. Building block for fused kernels defined outside the core.
Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace g2s
