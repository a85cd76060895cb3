#include "stransformer/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace stf {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw ValueError("uniform_int: n must be positive");
  // rejection sampling keeps the distribution exact
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return static_cast<int64_t>(v % un);
}

double Rng::normal(double mean, double sd) {
  // Box-Muller; spare discarded so copies of the generator stay in sync
  double u1 = next_double();
  double u2 = next_double();
  if (u1 < 1e-300) u1 = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + sd * r * std::cos(2.0 * M_PI * u2);
}

Tensor Tensor::make_node(Shape shape, std::vector<double> data,
                         std::vector<Tensor> inputs,
                         std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) needs = true;
  }
  n->requires_grad = needs;
  if (needs) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  int64_t n = shape_numel(shape);
  return make_node(std::move(shape), std::vector<double>(n, 0.0), {}, {});
}

Tensor Tensor::full(Shape shape, double value) {
  int64_t n = shape_numel(shape);
  return make_node(std::move(shape), std::vector<double>(n, value), {}, {});
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  return make_node(std::move(shape), std::move(data), {}, {});
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  int64_t n = shape_numel(shape);
  std::vector<double> d(n);
  for (auto& v : d) v = rng.uniform(lo, hi);
  return make_node(std::move(shape), std::move(d), {}, {});
}

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->data.size()); }

int64_t Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw IndexError("dim: axis out of range");
  return node_->shape[i];
}

const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw IndexError("at: rank mismatch");
  int64_t off = 0;
  int i = 0;
  for (int64_t v : idx) {
    if (v < 0 || v >= s[i]) throw IndexError("at: index out of range");
    off = off * s[i] + v;
    ++i;
  }
  return node_->data[off];
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> kEmpty;
  return node_ ? node_->grad : kEmpty;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (v && node_->backward_fn) {
    throw ValueError("set_requires_grad: only leaves can be marked trainable");
  }
  node_->requires_grad = v;
  return *this;
}

std::vector<double>& Tensor::grad_buf(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

Tensor Tensor::detach() const {
  return make_node(node_->shape, node_->data, {}, {});
}

void Tensor::backward() {
  if (!node_) throw ValueError("backward: undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;  // nothing on a differentiable path

  // iterative DFS, post-order; each node visited exactly once
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next_child] = stack.back();
    if (next_child < n->inputs.size()) {
      Node* child = n->inputs[next_child].node();
      ++next_child;
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  grad_buf(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace stf
