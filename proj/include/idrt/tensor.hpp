#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace idrt {

using Shape = std::vector<long>;

long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One entry of the computation record. Ops append nodes in execution order;
// the parents list keeps producers alive, so topological order holds by
// construction. The record is rebuilt every step (define-by-run).
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  bool backward_done = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Dense N-d double tensor with an attached computation record. Value-like:
// copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);

  bool defined() const { return node != nullptr; }
  const Shape& shape() const { return node->shape; }
  long numel() const { return static_cast<long>(node->value.size()); }
  long dim(size_t i) const { return node->shape[i]; }
  long rank() const { return static_cast<long>(node->shape.size()); }

  const std::vector<double>& data() const { return node->value; }
  // Only leaves may be mutated; mutating a recorded intermediate would
  // invalidate the gradients of everything downstream.
  std::vector<double>& mutable_data();

  double item() const;

  bool requires_grad() const { return node->requires_grad; }
  Tensor& set_requires_grad(bool v = true);
  bool has_grad() const { return node->grad.size() == node->value.size(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  NodePtr node;
};

// Reverse-mode sweep from a scalar loss. Populates grads of every
// requires_grad tensor reachable through the record. A second call on the
// same loss without rebuilding the record is rejected.
void backward(const Tensor& loss);

// While a guard is alive on this thread, ops compute values but record
// nothing, so no gradients flow.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Walks the record below t and returns the op name of the first node holding
// a non-finite value, or empty string if all values are finite.
std::string find_nonfinite_op(const Tensor& t);

bool all_finite(const std::vector<double>& v);

}  // namespace idrt
