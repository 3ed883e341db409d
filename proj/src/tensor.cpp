#include "chansr/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_set>

namespace chansr {

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

namespace {
std::atomic<uint64_t> g_seq{1};
}

std::shared_ptr<Node> make_node(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<size_t>(shape_size(shape)), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(detail::make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto node = detail::make_node(std::move(shape), requires_grad);
  std::fill(node->value.begin(), node->value.end(), fill);
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != shape_size(shape))
    throw std::invalid_argument("Tensor::from_data: element count " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto node = detail::make_node(std::move(shape), requires_grad);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::item on non-scalar tensor " +
                                shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const {
  auto node = detail::make_node(node_->shape, false);
  node->value = node_->value;
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  auto root = loss.node();
  if (!root) throw std::invalid_argument("backward: undefined tensor");
  if (root->size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(root->shape));
  if (!root->requires_grad)
    throw std::invalid_argument("backward: loss does not require grad");

  // Collect reachable subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  // Creation order is a topological order; sweep newest first.
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) {
              return a->seq > b->seq;
            });
  for (auto* n : order) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
}

namespace {
int g_threads = 0;  // 0 = not yet resolved

int resolve_threads() {
  if (const char* env = std::getenv("CHANSR_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}
}  // namespace

int thread_count() {
  if (g_threads == 0) g_threads = resolve_threads();
  return g_threads;
}

void set_thread_count(int n) { g_threads = n >= 1 ? n : 0; }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int workers = std::min<int64_t>(thread_count(), n);
  if (workers <= 1 || n < 256) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int64_t b = w * chunk;
    int64_t e = std::min<int64_t>(b + chunk, n);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace chansr
