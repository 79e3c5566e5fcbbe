#include "velvet/ag/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_set>

#include "velvet/error.hpp"

namespace velvet::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (ag::numel(shape) != static_cast<std::int64_t>(values.size()))
    fail(Errc::ShapeMismatch, "constant: shape " + shape_str(shape) + " vs " + std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = static_cast<std::size_t>(ag::numel(shape));
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::int64_t Tensor::dim(std::int64_t i) const {
  const auto r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) fail(Errc::ShapeMismatch, "dim index out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(i)];
}

double Tensor::item() const {
  if (numel() != 1) fail(Errc::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->value); }

void Tensor::backward() const {
  if (numel() != 1) fail(Errc::ShapeMismatch, "backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order. The order holds
  // owning handles because clearing a node's parents may drop the last
  // reference to an unprocessed ancestor.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{node_, 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<Node> p = top.first->parents[top.second++];
      if (p != nullptr && p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (n->is_leaf) continue;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (any) {
      node->requires_grad = true;
      node->is_leaf = false;
      for (const auto& t : inputs) node->parents.push_back(t.shared());
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  return make_result(std::move(shape), std::move(value), std::vector<Tensor>(inputs), std::move(backward));
}

}  // namespace velvet::ag
