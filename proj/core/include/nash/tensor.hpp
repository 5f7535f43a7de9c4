#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace nash::num {

using Shape = std::vector<int64_t>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Divergence (NaN/Inf loss) and similar failures; CLI maps this to exit 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  int node_id = -1;  // index into the recording Graph, -1 for leaves/constants

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  bool in_graph() const { return requires_grad || node_id >= 0; }

  // lazily sized, zero-initialised gradient buffer
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

// Value-semantics handle onto a shared tensor buffer. All math lives in
// ops.hpp; the handle only manages shape/values/grad access.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<double> v,
                            bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->numel(); }
  int64_t dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  std::vector<double>& grad() { return impl_->ensure_grad(); }
  const std::vector<double>& grad_view() const { return impl_->grad; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor");
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

  // Deep copy of values (never shares storage, drops graph membership).
  Tensor clone() const;

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of primitive applications. Creation order is a topological
// order by construction: an op's inputs always exist before its output.
class Graph {
 public:
  struct Node {
    std::vector<int> parents;            // node ids of in-graph inputs (leaves excluded)
    std::function<void()> backward;      // accumulates into parent/leaf grads
    std::shared_ptr<TensorImpl> output;  // for resetting flow-through grads
  };

  int record(std::vector<int> parents, std::function<void()> backward,
             std::shared_ptr<TensorImpl> output) {
    nodes_.push_back(Node{std::move(parents), std::move(backward), std::move(output)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Runs backward for every node that can reach `root`, in reverse creation
  // order. Repeated calls accumulate into existing grad buffers.
  void backward_from(int root);

  static Graph* current();
  static bool recording();

 private:
  std::vector<Node> nodes_;
  friend class GraphScope;
  friend class NoGradGuard;
};

// RAII: makes `g` the recording graph for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph* g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* prev_;
};

// RAII: disables recording (teacher forwards, eval).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph* prev_;
};

// Seeds d(loss)/d(loss) = 1 and populates gradients of every requires_grad
// leaf reachable from `loss`. Loss must be scalar.
void backward(const Tensor& loss);

}  // namespace nash::num
