#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/rng.hpp"

namespace nmt {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One entry of the gradient tape. Nodes are created in execution order and
// carry a monotonically increasing sequence id, so sorting the nodes reachable
// from a loss by id reproduces a valid topological order of the recorded ops.
struct TapeNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void()> backward_fn;  // empty for leaves
  bool backward_consumed = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Global switch for gradient recording. Forward passes run inside a
// NoGradGuard build no tape and are safe for concurrent decoding.
struct GradMode {
  static bool enabled();
  static void set_enabled(bool on);
};

struct NoGradGuard {
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major double tensor, value-semantic handle onto a tape node.
// Copying a Tensor aliases the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return node_->numel(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  double operator()(std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }
  double operator()(std::int64_t i, std::int64_t j) const {
    return node_->data[static_cast<std::size_t>(i * dim(1) + j)];
  }
  double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return node_->data[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }

  bool requires_grad() const { return node_->requires_grad; }

  // Gradient buffer; zeros when backward never reached this node.
  std::vector<double> grad() const {
    if (node_->grad.size() == node_->data.size()) return node_->grad;
    return std::vector<double>(node_->data.size(), 0.0);
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Reverse-mode sweep from a scalar. Replays the tape in reverse execution
  // order; a second sweep over the same recorded graph is a contract error.
  void backward() const;

  // Same data, detached from the tape; gradients do not flow past it.
  Tensor detach() const;

  std::shared_ptr<TapeNode> node() const { return node_; }

  explicit Tensor(std::shared_ptr<TapeNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TapeNode> node_;
};

// ---- differentiable ops ----------------------------------------------------
//
// Binary ops broadcast right-aligned: trailing dimensions must match exactly
// or be 1 in one operand (e.g. [B,L,d]+[d] bias, [M,1]*[M,d] gate).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor affine(const Tensor& x, double a, double b);  // a*x + b elementwise

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// 2-D matrix product [m,k]x[k,n]; transpose_b treats b as [n,k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
// Batched 3-D product [B,m,k]x[B,k,n]; transpose_b treats b as [B,n,k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len);
Tensor concat(const Tensor& a, const Tensor& b, int axis);

// [B,L,d] -> [B*h,L,d/h] and back; heads become the fastest batch dimension.
Tensor split_heads(const Tensor& x, int n_heads);
Tensor merge_heads(const Tensor& x, int n_heads);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Row gather: ids index rows of table [V,d]; output [n,d] (optionally
// reshaped by the caller). Backward scatters into the gathered rows only.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Mean over axis 1 of [B,J,d], ignoring rows where pad[b*J+j] != 0.
Tensor masked_mean_rows(const Tensor& x, const std::vector<std::uint8_t>& pad);

// Inverted dropout with a seeded mask; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

Tensor sum_all(const Tensor& x);

// Label-smoothed negative log-likelihood, mean over positions where
// mask != 0. logp is [B,L,V] log-probabilities; target distribution puts
// 1-eps on targets[b*L+l], eps/(V-1) on every other class except pad_id,
// and zero on pad_id.
Tensor smoothed_nll(const Tensor& logp, const std::vector<int>& targets,
                    const std::vector<std::uint8_t>& mask, double eps, int pad_id);

}  // namespace nmt
