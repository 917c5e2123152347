#include "g2s/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "g2s/rng.hpp"

namespace g2s {

namespace {

thread_local bool t_grad_enabled = true;

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::vector<double>* GradSink::operator[](std::size_t input) {
  auto& impl = node_.inputs.at(input);
  if (!impl->requires_grad) return nullptr;
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return &impl->grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(g2s::numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (data.size() != g2s::numel(shape)) {
    throw ShapeError("Tensor::from", {shape, {data.size()}},
                     "data length must equal product of extents");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> data(g2s::numel(shape));
  for (auto& v : data) v = stddev * rng.normal();
  return from(std::move(shape), std::move(data), requires_grad);
}

std::span<double> Tensor::mutable_data() {
  if (impl_->grad_fn) {
    throw std::logic_error("mutable_data: tensor is not a leaf");
  }
  return impl_->data;
}

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item", {impl_->shape}, "expected a single element");
  }
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool flag) {
  if (impl_->grad_fn && !flag) {
    throw std::logic_error("set_requires_grad: cannot clear on a non-leaf");
  }
  impl_->requires_grad = flag;
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  return from(impl_->shape, impl_->data, false);
}

Tensor Tensor::clone() const {
  return from(impl_->shape, impl_->data, impl_->requires_grad && is_leaf());
}

Graph Graph::collect(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.impl()->grad_fn) return g;
  std::unordered_set<const Node*> seen;
  // iterative post-order DFS
  struct Frame {
    Node* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  auto push = [&](const std::shared_ptr<Node>& n) {
    if (n->consumed) {
      throw std::logic_error(
          "backward: graph already consumed; run the forward pass again");
    }
    if (seen.insert(n.get()).second) stack.push_back({n.get(), 0});
  };
  std::vector<Node*> order;
  push(root.impl()->grad_fn);
  while (!stack.empty()) {
    auto& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      const auto& in = f.node->inputs[f.next++];
      if (in->requires_grad && in->grad_fn) push(in->grad_fn);
      continue;
    }
    order.push_back(f.node);
    stack.pop_back();
  }
  g.nodes.reserve(order.size());
  for (Node* n : order) g.nodes.push_back(n->output.lock()->grad_fn);
  return g;
}

void Tensor::backward() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("backward", {impl_->shape}, "root must be a scalar");
  }
  if (!impl_->requires_grad) return;
  if (!impl_->grad_fn) {
    if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
    impl_->grad[0] += 1.0;
    return;
  }
  Graph g = Graph::collect(*this);
  // intermediates are owned by their consumers' input lists, which are
  // released as the sweep proceeds
  std::vector<std::shared_ptr<TensorImpl>> outputs;
  outputs.reserve(g.nodes.size());
  for (const auto& n : g.nodes) outputs.push_back(n->output.lock());
  impl_->grad.assign(1, 1.0);
  for (std::size_t k = g.nodes.size(); k-- > 0;) {
    Node& node = *g.nodes[k];
    const auto& out = outputs[k];
    if (out && !out->grad.empty()) {
      GradSink sink(node);
      node.backward(out->grad, out->data, sink);
    }
    if (out) out->grad.clear();
    node.consumed = true;
    node.backward = nullptr;
    node.inputs.clear();
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (impl->data.size() != numel(impl->shape)) {
    throw ShapeError(op, {impl->shape, {impl->data.size()}},
                     "result length mismatch");
  }
  bool track = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  if (track) {
    auto node = std::make_shared<Node>();
    node->op = std::move(op);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    node->output = impl;
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace g2s
