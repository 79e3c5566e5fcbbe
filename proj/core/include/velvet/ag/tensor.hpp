#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace velvet::ag {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One vertex of the dynamic tape. Values are row-major doubles.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grads.
  std::function<void(Node& self)> backward_fn;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

/// Shared handle to a tape node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t i) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  /// Empty when no gradient reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  double item() const;
  double at(std::int64_t flat_index) const { return node_->value[static_cast<std::size_t>(flat_index)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Reverse-mode sweep from a scalar. The interior of the graph is released.
  void backward() const;

  /// Copy of the values without graph history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Op-author helper: wraps an output value and records `backward` when any
/// input needs a gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward);
Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward);

}  // namespace velvet::ag
