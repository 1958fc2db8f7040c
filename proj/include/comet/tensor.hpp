#pragma once

#include <Eigen/Dense>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace comet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Array value;
  Array grad;  // empty until the first gradient contribution arrives
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this->grad into the grads of `inputs`.
  std::function<void(Node&)> backward;

  void accumulate(const Array& g);
  Array& grad_buffer();
};

}  // namespace detail

/// Dense row-major (N,C,H,W-style) array of doubles that can take part in a
/// define-by-run autodiff graph. Copies share the same underlying node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape);
  static Tensor constant(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from(const Shape& shape, std::initializer_list<double> values);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(const Shape& shape, Array values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  Index dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  Index size() const;

  const Array& values() const;
  /// Mutable access to the data. Only meaningful for leaves (parameters and
  /// constants); editing an intermediate does not re-run the graph.
  Array& mutable_values();
  double item() const;
  double operator[](Index i) const { return values()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient buffer; zeros of the value's size when nothing accumulated.
  Array grad() const;
  void zero_grad();

  /// Same values, cut off from the graph.
  Tensor detach() const;
  /// Deep copy of the values (not the graph).
  Tensor clone() const;

  const std::string& op() const;
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Builds a graph node. `backward` is dropped when no input needs a
  /// gradient (or grad mode is off), so inference builds no graph.
  static Tensor make_result(Shape shape, Array value, std::string op,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the nodes reachable from a root.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  /// Nodes in topological order: inputs before consumers, root last.
  const std::vector<detail::Node*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds d(root)/d(root) = 1 and runs each backward rule once, in reverse
  /// topological order.
  void backward();

 private:
  std::vector<detail::Node*> order_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// tensor of the graph that requires them.
void backward(const Tensor& loss);

/// While alive, newly created results record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

}  // namespace comet
