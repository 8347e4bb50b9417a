#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hdnet {

namespace detail {

// One node of the dynamic computation graph. Operations allocate a node,
// fill in forward values and a backprop closure; backward() walks the graph
// in reverse topological order and lets each closure push gradient into its
// parents.
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily by backward()
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
  bool requires_grad = false;
  bool backward_done = false;
};

}  // namespace detail

int numel(const std::vector<int>& shape);

// Value-semantic handle to a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  // Leaf that does not require gradient (inputs, targets, frozen weights).
  static Tensor constant(std::vector<int> shape, std::vector<double> values);
  static Tensor zeros(std::vector<int> shape);
  static Tensor scalar(double v);
  // Leaf that accumulates gradient (a learnable parameter).
  static Tensor param(std::vector<int> shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int size() const;
  int rank() const;
  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();
  bool requires_grad() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;
  // Scalar tensors only.
  double item() const;

  // Clears gradient and the backward bookkeeping flag on this node.
  void reset_grad();

  detail::TensorNode* node() const { return node_.get(); }
  std::shared_ptr<detail::TensorNode> handle() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Allocates an op node. requires_grad is inherited from the parents; the
// backprop closure is dropped when no parent needs gradient.
Tensor make_op(std::vector<int> shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backprop);

// Reverse-mode sweep from a scalar loss. Gradient accumulation over multiple
// uses of a node is additive. Calling backward twice over a graph that shares
// nodes with a previous sweep (without reset_grad / ParamStore::zero_grad in
// between) is a contract violation.
void backward(const Tensor& loss);

// Ordered, uniquely named parameter collection. Iteration order is insertion
// order and defines the checkpoint layout.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(const std::string& name, Tensor param);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t count() const { return entries_.size(); }
  std::size_t total_size() const;

  void zero_grad();

  // Flat 32-bit serialization in store order.
  std::vector<float> pack_f32() const;
  void unpack_f32(const std::vector<float>& stream);

 private:
  std::vector<Entry> entries_;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
};

// Central-difference gradient check of a scalar function of the store's
// parameters. Samples at least min_coords coordinates spread over all
// parameters. Throws NumericError (naming the coordinate) if f goes
// non-finite at a probe point.
FiniteDiffReport finite_difference_check(ParamStore& params,
                                         const std::function<Tensor()>& f,
                                         double eps, int min_coords = 50,
                                         std::uint64_t seed = 17);

}  // namespace hdnet
