#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace chansr {

using Shape = std::vector<int>;

int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the recorded computation. Creation order (seq) doubles as a
// topological order because every op creates its output after its inputs.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
};

std::shared_ptr<Node> make_node(Shape shape, bool requires_grad);

}  // namespace detail

/// Dense row-major tensor of 64-bit floats. Immutable shape; ops return new
/// tensors and record the graph needed for reverse-mode differentiation when
/// any input has grad enabled.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  const std::vector<double>& values() const { return node_->value; }

  /// Accumulated gradient; empty until backward() has run through this node.
  const std::vector<double>& grad() const { return node_->grad; }

  double item() const;

  /// Detached copy: same values, no graph history, grad disabled.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse sweep from a scalar loss. Zeroes gradients on every reachable node
/// first, then accumulates in a fixed (reverse-creation) order, so repeated
/// calls give bitwise-identical results.
void backward(const Tensor& loss);

/// Worker count for parallel kernels: CHANSR_THREADS env var if set, else
/// hardware concurrency. Kernels partition output elements, never reduction
/// order, so results are identical across thread counts.
int thread_count();
void set_thread_count(int n);

/// Runs fn(begin, end) over a partition of [0, n).
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace chansr
