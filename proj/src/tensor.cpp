#include "comet/tensor.hpp"

#include "comet/errors.hpp"

#include <sstream>
#include <unordered_set>

namespace comet {

namespace {
thread_local bool g_grad_mode = true;
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

Array& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Array::Zero(value.size());
  return grad;
}

void Node::accumulate(const Array& g) {
  if (g.size() != value.size())
    throw DimensionError("gradient size mismatch in op " + op);
  if (grad.size() != value.size())
    grad = g;
  else
    grad += g;
}

}  // namespace detail

Tensor::Tensor(Shape shape, Array values, bool requires_grad) {
  if (numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
  node_->op = "leaf";
}

Tensor Tensor::zeros(const Shape& shape) { return Tensor(shape, Array::Zero(numel(shape))); }

Tensor Tensor::constant(const Shape& shape, double value) {
  return Tensor(shape, Array::Constant(numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, Array::Constant(1, value)); }

Tensor Tensor::from(const Shape& shape, std::initializer_list<double> values) {
  Array a(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) a[i++] = v;
  return Tensor(shape, std::move(a));
}

Tensor Tensor::parameter(const Shape& shape, Array values) {
  return Tensor(shape, std::move(values), true);
}

const Shape& Tensor::shape() const { return node_->shape; }

Index Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(node_->shape));
  return node_->shape[axis];
}

Index Tensor::size() const { return node_->value.size(); }
const Array& Tensor::values() const { return node_->value; }
Array& Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (node_->value.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(node_->shape));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

Array Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Array::Zero(node_->value.size());
}

void Tensor::zero_grad() { node_->grad.resize(0); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }
Tensor Tensor::clone() const { return Tensor(node_->shape, node_->value, node_->requires_grad); }
const std::string& Tensor::op() const { return node_->op; }

Tensor Tensor::make_result(Shape shape, Array value, std::string op, std::vector<Tensor> inputs,
                           std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::move(op);
  bool needs = false;
  if (g_grad_mode)
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void Graph::backward() {
  if (order_.empty()) return;
  detail::Node* root = order_.back();
  root->accumulate(Array::Ones(root->value.size()));
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) {
      n->backward(*n);
      // Interior gradients are consumed; a later pass over a shared subgraph
      // must not see them again.
      n->grad.resize(0);
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward() requires a scalar loss");
  if (!loss.requires_grad()) return;
  Graph::trace(loss).backward();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

}  // namespace comet
