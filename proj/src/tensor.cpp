#include "hyperadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace hyperadapt {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return shape()[axis];
}

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw std::logic_error("cannot mutate the output of an op");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * shape().back() + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf) throw std::logic_error("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_->is_leaf; }
const char* Tensor::op_name() const { return node_->op; }
bool Tensor::has_grad() const { return !node_->leaf_grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->leaf_grad.empty()) node_->leaf_grad.assign(numel(), 0.0);
  return node_->leaf_grad;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->leaf_grad.empty()) node_->leaf_grad.assign(numel(), 0.0);
  return node_->leaf_grad;
}

void Tensor::zero_grad() { node_->leaf_grad.clear(); }

Graph Graph::trace(const Tensor& root) {
  Graph graph;
  if (!root.defined() || !root.requires_grad()) return graph;
  // Iterative post-order DFS; children finish before parents.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      graph.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return graph;
}

std::size_t Graph::index_of(const detail::Node* node) const {
  auto it = std::find(nodes_.begin(), nodes_.end(), node);
  return it == nodes_.end() ? npos : static_cast<std::size_t>(it - nodes_.begin());
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward needs a scalar root, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  Graph graph = Graph::trace(loss);
  for (auto* node : graph.nodes()) node->grad.assign(node->data.size(), 0.0);
  graph.nodes().back()->grad[0] = 1.0;

  const auto& nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* node = *it;
    for (double g : node->grad) {
      if (!std::isfinite(g)) throw NumericError(node->op, "non-finite gradient");
    }
    if (!node->is_leaf && node->backward) node->backward(*node);
  }
  for (auto* node : nodes) {
    if (node->is_leaf) {
      if (node->leaf_grad.empty()) {
        node->leaf_grad = std::move(node->grad);
      } else {
        for (std::size_t i = 0; i < node->grad.size(); ++i) node->leaf_grad[i] += node->grad[i];
      }
    }
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

}  // namespace hyperadapt
