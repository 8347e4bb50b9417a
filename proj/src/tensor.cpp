#include "hdnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "hdnet/errors.hpp"
#include "hdnet/rng.hpp"

namespace hdnet {

int numel(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractError("tensor shape extents must be positive");
    n *= d;
  }
  return n;
}

namespace {

std::shared_ptr<detail::TensorNode> new_node(std::vector<int> shape,
                                             std::vector<double> values,
                                             bool requires_grad) {
  const int n = numel(shape);
  if (static_cast<int>(values.size()) != n)
    throw ContractError("tensor value count does not match shape");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
  return wrap(new_node(std::move(shape), std::move(values), false));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  const int n = numel(shape);
  return wrap(new_node(std::move(shape), std::vector<double>(n, 0.0), false));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::param(std::vector<int> shape, std::vector<double> values) {
  return wrap(new_node(std::move(shape), std::move(values), true));
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }

int Tensor::size() const { return static_cast<int>(node_->values.size()); }

int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

const std::vector<double>& Tensor::values() const { return node_->values; }

std::vector<double>& Tensor::mutable_values() { return node_->values; }

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient (backward not run)");
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a scalar tensor");
  return node_->values[0];
}

void Tensor::reset_grad() {
  node_->grad.clear();
  node_->backward_done = false;
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor make_op(std::vector<int> shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backprop) {
  bool needs_grad = false;
  for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
  auto node = new_node(std::move(shape), std::move(values), needs_grad);
  if (needs_grad) {
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.handle());
    node->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar");
  detail::TensorNode* root = loss.node();
  if (!root->requires_grad) return;  // nothing reachable to differentiate

  // Iterative post-order topological sort over the grad-requiring subgraph.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      detail::TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  for (detail::TensorNode* n : order) {
    if (n->backward_done)
      throw ContractError("backward: graph already differentiated; reset gradients first");
  }
  for (detail::TensorNode* n : order) {
    n->backward_done = true;
    if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
  }
  root->grad[0] = 1.0;

  // order is post-order, so reverse iteration visits every node after all of
  // its children have contributed gradient.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

Tensor& ParamStore::add(const std::string& name, Tensor param) {
  if (!param.defined() || !param.requires_grad())
    throw ContractError("ParamStore::add: '" + name + "' is not a learnable leaf");
  if (contains(name)) throw ContractError("ParamStore::add: duplicate name '" + name + "'");
  entries_.push_back({name, std::move(param)});
  return entries_.back().tensor;
}

Tensor& ParamStore::at(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("ParamStore: unknown parameter '" + name + "'");
}

const Tensor& ParamStore::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("ParamStore: unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.reset_grad();
}

std::vector<float> ParamStore::pack_f32() const {
  std::vector<float> out;
  out.reserve(total_size());
  for (const auto& e : entries_)
    for (double v : e.tensor.values()) out.push_back(static_cast<float>(v));
  return out;
}

void ParamStore::unpack_f32(const std::vector<float>& stream) {
  if (stream.size() != total_size())
    throw ContractError("ParamStore::unpack_f32: stream length mismatch");
  std::size_t pos = 0;
  for (auto& e : entries_) {
    auto& vals = e.tensor.mutable_values();
    for (double& v : vals) v = static_cast<double>(stream[pos++]);
  }
}

FiniteDiffReport finite_difference_check(ParamStore& params,
                                         const std::function<Tensor()>& f,
                                         double eps, int min_coords,
                                         std::uint64_t seed) {
  if (!(eps > 0.0)) throw ContractError("finite_difference_check: eps must be positive");
  if (params.count() == 0) throw ContractError("finite_difference_check: empty store");

  params.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item()))
    throw NumericError("finite_difference_check: non-finite loss at base point");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.count());
  for (const auto& e : params.entries()) {
    analytic.push_back(e.tensor.has_grad()
                           ? e.tensor.grad()
                           : std::vector<double>(e.tensor.size(), 0.0));
  }
  params.zero_grad();

  // Spread the probes over every parameter; sample extra coordinates at
  // random until the minimum is reached.
  std::vector<std::pair<std::size_t, int>> coords;
  for (std::size_t pi = 0; pi < params.count(); ++pi) {
    const int n = params.entries()[pi].tensor.size();
    coords.emplace_back(pi, 0);
    if (n > 1) coords.emplace_back(pi, n - 1);
  }
  Rng rng(seed);
  while (static_cast<int>(coords.size()) < min_coords) {
    const auto pi = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(params.count())));
    const int n = params.entries()[pi].tensor.size();
    coords.emplace_back(pi, rng.uniform_int(n));
  }

  FiniteDiffReport report;
  for (const auto& [pi, idx] : coords) {
    auto& entry = params.entries()[pi];
    auto& vals = entry.tensor.mutable_values();
    const double saved = vals[idx];
    const std::string coord = entry.name + "[" + std::to_string(idx) + "]";

    vals[idx] = saved + eps;
    const double plus = f().item();
    vals[idx] = saved - eps;
    const double minus = f().item();
    vals[idx] = saved;

    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NumericError("finite_difference_check: non-finite value at " + coord);

    const double numeric = (plus - minus) / (2.0 * eps);
    const double an = analytic[pi][idx];
    const double rel = std::fabs(an - numeric) / std::max(std::fabs(an), 1e-8);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = coord;
    }
  }
  return report;
}

}  // namespace hdnet
