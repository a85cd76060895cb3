#pragma once

#include <functional>
#include <memory>

#include "stransformer/common.h"

namespace stf {

// Dense row-major f64 tensor participating in reverse-mode autodiff.
//
// A Tensor is a shared handle onto a graph node. Nodes created by ops hold
// their inputs and a backward rule; leaves hold only data. backward() walks
// the graph once in reverse topological order and accumulates gradients
// into every node on a differentiable path. Graphs are rebuilt per step and
// confined to one thread.
class Tensor {
 public:
  struct Node;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);  // rank-0, numel 1
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;
  int64_t dim(int i) const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();  // leaves only (optimizer, tests)

  double item() const;                       // numel-1 tensors
  double at(std::initializer_list<int64_t> idx) const;

  // Gradient buffer accumulated by the last backward pass. Empty vector when
  // the node was never touched by a backward walk.
  const std::vector<double>& grad() const;
  void zero_grad();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);  // leaves only

  // Runs reverse-mode accumulation from this scalar node.
  void backward();

  // Forward-identity graph leaf; backward deposits nothing upstream.
  Tensor detach() const;

  // --- internal graph plumbing (used by ops) ---
  static Tensor make_node(Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward_fn);
  Node* node() const { return node_.get(); }
  static std::vector<double>& grad_buf(Node& n);  // lazily sized zero buffer

  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<Tensor> inputs;
    std::function<void(Node&)> backward_fn;  // reads this->grad, writes inputs' grad
  };

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

}  // namespace stf
