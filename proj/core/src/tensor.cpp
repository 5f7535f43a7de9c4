#include "nash/tensor.hpp"

#include <sstream>

namespace nash::num {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->values.assign(static_cast<size_t>(num::numel(shape)), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::vector<double> v, bool requires_grad) {
  if (static_cast<int64_t>(v.size()) != num::numel(shape))
    throw ShapeError("value count does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->values = std::move(v);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_values({1}, {v}, requires_grad);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

namespace {
thread_local Graph* g_current = nullptr;
}

Graph* Graph::current() { return g_current; }
bool Graph::recording() { return g_current != nullptr; }

GraphScope::GraphScope(Graph* g) : prev_(g_current) { g_current = g; }
GraphScope::~GraphScope() { g_current = prev_; }

NoGradGuard::NoGradGuard() : prev_(g_current) { g_current = nullptr; }
NoGradGuard::~NoGradGuard() { g_current = prev_; }

void Graph::backward_from(int root) {
  if (root < 0 || root >= static_cast<int>(nodes_.size()))
    throw ContractError("backward root is not a recorded node");
  std::vector<char> needed(nodes_.size(), 0);
  needed[static_cast<size_t>(root)] = 1;
  for (int i = root; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    for (int p : nodes_[static_cast<size_t>(i)].parents) needed[static_cast<size_t>(p)] = 1;
  }
  // flow-through gradients are per-pass scratch; only leaves accumulate
  // across repeated backward calls
  for (int i = root; i >= 0; --i) {
    if (!needed[static_cast<size_t>(i)]) continue;
    auto& out = nodes_[static_cast<size_t>(i)].output;
    if (out && !out->grad.empty()) std::fill(out->grad.begin(), out->grad.end(), 0.0);
  }
  nodes_[static_cast<size_t>(root)].output->ensure_grad()[0] = 1.0;
  for (int i = root; i >= 0; --i) {
    if (needed[static_cast<size_t>(i)] && nodes_[static_cast<size_t>(i)].backward)
      nodes_[static_cast<size_t>(i)].backward();
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward requires a scalar loss");
  int nid = loss.impl()->node_id;
  if (nid < 0) {
    // loss is a leaf; its own gradient is all there is
    loss.impl()->ensure_grad()[0] += 1.0;
    return;
  }
  Graph* g = Graph::current();
  if (!g) throw ContractError("backward called outside a GraphScope");
  g->backward_from(nid);
}

}  // namespace nash::num
