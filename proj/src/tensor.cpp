#include "idrt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace idrt {

long shape_numel(const Shape& s) {
  long n = 1;
  for (long e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
  node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(shape_numel(node->shape)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<long>(data.size()))
    throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

std::vector<double>& Tensor::mutable_data() {
  if (node->backward_fn)
    throw std::logic_error("tensor: in-place mutation of a recorded tensor");
  return node->value;
}

double Tensor::item() const {
  if (node->value.size() != 1)
    throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(node->shape));
  return node->value[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  if (v && node->backward_fn)
    throw std::logic_error("tensor: requires_grad can only be set on leaves");
  node->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor: grad not populated");
  return node->grad;
}

void Tensor::zero_grad() { node->grad.assign(node->value.size(), 0.0); }

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  NodePtr root = loss.node;
  if (!root) throw std::invalid_argument("backward: undefined tensor");
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(root->shape));
  if (root->backward_done)
    throw std::logic_error("backward: called twice on the same record");
  if (!root->requires_grad)
    throw std::invalid_argument("backward: loss does not require grad");

  // iterative post-order DFS over grad-requiring parents
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : topo)
    if (n->backward_fn) n->ensure_grad();
  for (Node* n : topo)
    if (!n->backward_fn) n->ensure_grad();  // leaves accumulate too
  root->grad.assign(1, 1.0);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  root->backward_done = true;
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string find_nonfinite_op(const Tensor& t) {
  if (!t.node) return "";
  // DFS to leaves, then report the earliest producer in topological order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(t.node.get(), 0);
  seen.insert(t.node.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (!seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : topo)
    if (!all_finite(n->value)) return n->op;
  return "";
}

}  // namespace idrt
