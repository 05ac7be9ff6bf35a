#include "nmt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace nmt {

namespace {

std::atomic<std::uint64_t> g_seq{1};

thread_local bool g_grad_enabled = true;

std::shared_ptr<TapeNode> make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<TapeNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

#ifndef NDEBUG
void debug_check_finite(const char* op, const TapeNode& node) {
  for (double v : node.data) {
    if (!std::isfinite(v)) {
      throw ContractError(std::string(op) + " produced a non-finite value");
    }
  }
}
#define NMT_CHECK_FINITE(op, node) debug_check_finite(op, node)
#else
#define NMT_CHECK_FINITE(op, node) ((void)(op))
#endif

bool recording(const Tensor& a) { return g_grad_enabled && a.requires_grad(); }
bool recording(const Tensor& a, const Tensor& b) {
  return g_grad_enabled && (a.requires_grad() || b.requires_grad());
}

// Right-aligned broadcast plan. Per output axis, an operand contributes its
// natural stride, or 0 where its dimension is 1 (or missing).
struct Bcast {
  Shape out;
  std::vector<std::int64_t> sa, sb;
  bool same = false;
};

std::vector<std::int64_t> natural_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return strides;
}

Bcast plan_bcast(const Shape& a, const Shape& b, const char* op) {
  Bcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int ro = std::max(ra, rb);
  plan.out.assign(static_cast<std::size_t>(ro), 1);
  plan.sa.assign(static_cast<std::size_t>(ro), 0);
  plan.sb.assign(static_cast<std::size_t>(ro), 0);
  const auto stra = natural_strides(a);
  const auto strb = natural_strides(b);
  for (int i = 0; i < ro; ++i) {
    const int ia = ra - ro + i;
    const int ib = rb - ro + i;
    const std::int64_t da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const std::int64_t db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " are not broadcastable");
    }
    const std::int64_t d = std::max(da, db);
    plan.out[static_cast<std::size_t>(i)] = d;
    if (ia >= 0 && da != 1) plan.sa[static_cast<std::size_t>(i)] = stra[static_cast<std::size_t>(ia)];
    if (ib >= 0 && db != 1) plan.sb[static_cast<std::size_t>(i)] = strb[static_cast<std::size_t>(ib)];
  }
  return plan;
}

// Applies f(offset_a, offset_b, offset_out) over every output position.
template <typename F>
void bcast_iter(const Bcast& plan, F&& f) {
  const auto& out = plan.out;
  const int rank = static_cast<int>(out.size());
  if (rank == 1) {
    for (std::int64_t i = 0; i < out[0]; ++i) f(i * plan.sa[0], i * plan.sb[0], i);
    return;
  }
  if (rank == 2) {
    std::int64_t o = 0;
    for (std::int64_t i = 0; i < out[0]; ++i) {
      const std::int64_t a0 = i * plan.sa[0];
      const std::int64_t b0 = i * plan.sb[0];
      for (std::int64_t j = 0; j < out[1]; ++j, ++o) {
        f(a0 + j * plan.sa[1], b0 + j * plan.sb[1], o);
      }
    }
    return;
  }
  if (rank == 3) {
    std::int64_t o = 0;
    for (std::int64_t i = 0; i < out[0]; ++i) {
      for (std::int64_t j = 0; j < out[1]; ++j) {
        const std::int64_t a01 = i * plan.sa[0] + j * plan.sa[1];
        const std::int64_t b01 = i * plan.sb[0] + j * plan.sb[1];
        for (std::int64_t k = 0; k < out[2]; ++k, ++o) {
          f(a01 + k * plan.sa[2], b01 + k * plan.sb[2], o);
        }
      }
    }
    return;
  }
  // odometer fallback for higher ranks
  Shape idx(out.size(), 0);
  const std::int64_t total = shape_numel(out);
  for (std::int64_t o = 0; o < total; ++o) {
    std::int64_t oa = 0, ob = 0;
    for (int i = 0; i < rank; ++i) {
      oa += idx[static_cast<std::size_t>(i)] * plan.sa[static_cast<std::size_t>(i)];
      ob += idx[static_cast<std::size_t>(i)] * plan.sb[static_cast<std::size_t>(i)];
    }
    f(oa, ob, o);
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < out[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimError(std::string(op) + ": axis " + std::to_string(axis) +
                   " out of range for rank " + std::to_string(rank));
  }
  return a;
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  for (std::int64_t d : shape) {
    if (d <= 0) throw DimError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  auto node = make_node(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), value));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimError("data length " + std::to_string(data.size()) + " does not match shape " +
                   shape_str(shape));
  }
  auto node = make_node(shape, std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward on an undefined tensor");
  if (node_->numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(node_->shape));
  }
  if (node_->backward_consumed) {
    throw ContractError("backward already ran for this recorded graph");
  }
  node_->backward_consumed = true;

  // Reachable tape entries, replayed in reverse execution order. Sequence ids
  // increase in execution order, so descending ids form a topological order.
  std::vector<TapeNode*> order;
  std::unordered_set<TapeNode*> seen;
  std::vector<TapeNode*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    TapeNode* n = stack.back();
    stack.pop_back();
    if (n->backward_fn) order.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const TapeNode* a, const TapeNode* b) { return a->seq > b->seq; });

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (TapeNode* n : order) n->backward_fn();
}

Tensor Tensor::detach() const {
  auto node = make_node(node_->shape, node_->data);
  return Tensor(node);
}

// ---- elementwise binary ----------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  Bcast plan = plan_bcast(a.shape(), b.shape(), name);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out;
  if (plan.same) {
    const std::size_t n = a.data().size();
    out.resize(n);
    switch (kind) {
      case BinKind::Add:
        for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
        break;
      case BinKind::Sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
        break;
      case BinKind::Mul:
        for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
        break;
    }
  } else {
    out.resize(static_cast<std::size_t>(shape_numel(plan.out)));
    double* po = out.data();
    switch (kind) {
      case BinKind::Add:
        bcast_iter(plan, [&](std::int64_t ia, std::int64_t ib, std::int64_t io) {
          po[io] = pa[ia] + pb[ib];
        });
        break;
      case BinKind::Sub:
        bcast_iter(plan, [&](std::int64_t ia, std::int64_t ib, std::int64_t io) {
          po[io] = pa[ia] - pb[ib];
        });
        break;
      case BinKind::Mul:
        bcast_iter(plan, [&](std::int64_t ia, std::int64_t ib, std::int64_t io) {
          po[io] = pa[ia] * pb[ib];
        });
        break;
    }
  }
  auto node = make_node(plan.same ? a.shape() : plan.out, std::move(out));
  NMT_CHECK_FINITE(name, *node);
  if (recording(a, b)) {
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    auto an = a.node();
    auto bn = b.node();
    TapeNode* on = node.get();
    node->backward_fn = [an, bn, on, plan, kind]() {
      on->ensure_grad();
      const double* go = on->grad.data();
      double* ga = an->requires_grad ? (an->ensure_grad(), an->grad.data()) : nullptr;
      double* gb = bn->requires_grad ? (bn->ensure_grad(), bn->grad.data()) : nullptr;
      const double* pa = an->data.data();
      const double* pb = bn->data.data();
      if (plan.same) {
        const std::size_t n = on->data.size();
        switch (kind) {
          case BinKind::Add:
            if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
            if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
            break;
          case BinKind::Sub:
            if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
            if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
            break;
          case BinKind::Mul:
            if (ga) for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
            if (gb) for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
            break;
        }
        return;
      }
      bcast_iter(plan, [&](std::int64_t ia, std::int64_t ib, std::int64_t io) {
        const double g = go[io];
        switch (kind) {
          case BinKind::Add:
            if (ga) ga[ia] += g;
            if (gb) gb[ib] += g;
            break;
          case BinKind::Sub:
            if (ga) ga[ia] += g;
            if (gb) gb[ib] -= g;
            break;
          case BinKind::Mul:
            if (ga) ga[ia] += g * pb[ib];
            if (gb) gb[ib] += g * pa[ia];
            break;
        }
      });
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }

Tensor affine(const Tensor& x, double a, double b) {
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * px[i] + b;
  auto node = make_node(x.shape(), std::move(out));
  NMT_CHECK_FINITE("affine", *node);
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, a]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->data.size(); ++i) gx[i] += a * go[i];
    };
  }
  return Tensor(node);
}

// ---- elementwise unary -----------------------------------------------------

namespace {

enum class UnKind { Relu, Sigmoid, Tanh };

Tensor unary_op(const Tensor& x, UnKind kind, const char* name) {
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  switch (kind) {
    case UnKind::Relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
      break;
    case UnKind::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-px[i]));
      break;
    case UnKind::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(px[i]);
      break;
  }
  auto node = make_node(x.shape(), std::move(out));
  NMT_CHECK_FINITE(name, *node);
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, kind]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      const double* y = on->data.data();
      const double* px = xn->data.data();
      double* gx = xn->grad.data();
      switch (kind) {
        case UnKind::Relu:
          for (std::size_t i = 0; i < on->data.size(); ++i) gx[i] += px[i] > 0.0 ? go[i] : 0.0;
          break;
        case UnKind::Sigmoid:
          for (std::size_t i = 0; i < on->data.size(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
          break;
        case UnKind::Tanh:
          for (std::size_t i = 0; i < on->data.size(); ++i) gx[i] += go[i] * (1.0 - y[i] * y[i]);
          break;
      }
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor relu(const Tensor& x) { return unary_op(x, UnKind::Relu, "relu"); }
Tensor sigmoid(const Tensor& x) { return unary_op(x, UnKind::Sigmoid, "sigmoid"); }
Tensor tanh(const Tensor& x) { return unary_op(x, UnKind::Tanh, "tanh"); }

// ---- matrix products -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1);
  const std::int64_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::int64_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) {
    throw DimError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  if (transpose_b) {
    mm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  } else {
    mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  }
  auto node = make_node({m, n}, std::move(out));
  NMT_CHECK_FINITE("matmul", *node);
  if (recording(a, b)) {
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    auto an = a.node();
    auto bn = b.node();
    TapeNode* on = node.get();
    node->backward_fn = [an, bn, on, m, k, n, transpose_b]() {
      on->ensure_grad();
      const double* go = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        if (transpose_b) {
          mm_nn(go, bn->data.data(), an->grad.data(), m, n, k);  // dA = dC * B
        } else {
          mm_nt(go, bn->data.data(), an->grad.data(), m, n, k);  // dA = dC * B^T
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (transpose_b) {
          mm_tn(go, an->data.data(), bn->grad.data(), m, n, k);  // dB = dC^T * A
        } else {
          mm_tn(an->data.data(), go, bn->grad.data(), m, k, n);  // dB = A^T * dC
        }
      }
    };
  }
  return Tensor(node);
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw DimError("bmm expects rank-3 operands with equal batch, got " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
  }
  const std::int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::int64_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (k != bk) {
    throw DimError("bmm inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  std::vector<double> out(static_cast<std::size_t>(batch * m * n), 0.0);
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    const double* pa = a.data().data() + bi * m * k;
    const double* pb = b.data().data() + bi * k * n;
    double* po = out.data() + bi * m * n;
    if (transpose_b) {
      mm_nt(pa, pb, po, m, k, n);
    } else {
      mm_nn(pa, pb, po, m, k, n);
    }
  }
  auto node = make_node({batch, m, n}, std::move(out));
  NMT_CHECK_FINITE("bmm", *node);
  if (recording(a, b)) {
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    auto an = a.node();
    auto bn = b.node();
    TapeNode* on = node.get();
    node->backward_fn = [an, bn, on, batch, m, k, n, transpose_b]() {
      on->ensure_grad();
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::int64_t bi = 0; bi < batch; ++bi) {
        const double* go = on->grad.data() + bi * m * n;
        const double* pa = an->data.data() + bi * m * k;
        const double* pb = bn->data.data() + bi * k * n;
        if (an->requires_grad) {
          double* ga = an->grad.data() + bi * m * k;
          if (transpose_b) {
            mm_nn(go, pb, ga, m, n, k);
          } else {
            mm_nt(go, pb, ga, m, n, k);
          }
        }
        if (bn->requires_grad) {
          double* gb = bn->grad.data() + bi * k * n;
          if (transpose_b) {
            mm_tn(go, pa, gb, m, n, k);
          } else {
            mm_tn(pa, go, gb, m, k, n);
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---- shape ops ---------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimError("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                   " changes element count");
  }
  auto node = make_node(shape, x.data());
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->data.size(); ++i) gx[i] += go[i];
    };
  }
  return Tensor(node);
}

namespace {

// Decomposes shape around `axis` into [outer, len, inner] extents.
void axis_extents(const Shape& shape, int axis, std::int64_t& outer, std::int64_t& len,
                  std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
    inner *= shape[i];
  }
}

}  // namespace

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  const int ax = normalize_axis(axis, x.rank(), "slice");
  std::int64_t outer, alen, inner;
  axis_extents(x.shape(), ax, outer, alen, inner);
  if (start < 0 || len <= 0 || start + len > alen) {
    throw DimError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                   ") out of range for axis extent " + std::to_string(alen));
  }
  Shape oshape = x.shape();
  oshape[static_cast<std::size_t>(ax)] = len;
  std::vector<double> out(static_cast<std::size_t>(outer * len * inner));
  const double* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * len * inner, px + (o * alen + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(double));
  }
  auto node = make_node(std::move(oshape), std::move(out));
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, outer, alen, inner, start, len]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        double* dst = gx + (o * alen + start) * inner;
        const double* src = go + o * len * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor(node);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) {
    throw DimError("concat rank mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int ax = normalize_axis(axis, a.rank(), "concat");
  for (int i = 0; i < a.rank(); ++i) {
    if (i != ax && a.dim(i) != b.dim(i)) {
      throw DimError("concat shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " disagree off axis " + std::to_string(ax));
    }
  }
  std::int64_t outer, la, inner;
  axis_extents(a.shape(), ax, outer, la, inner);
  const std::int64_t lb = b.dim(ax);
  Shape oshape = a.shape();
  oshape[static_cast<std::size_t>(ax)] = la + lb;
  std::vector<double> out(static_cast<std::size_t>(outer * (la + lb) * inner));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (la + lb) * inner, pa + o * la * inner,
                static_cast<std::size_t>(la * inner) * sizeof(double));
    std::memcpy(out.data() + (o * (la + lb) + la) * inner, pb + o * lb * inner,
                static_cast<std::size_t>(lb * inner) * sizeof(double));
  }
  auto node = make_node(std::move(oshape), std::move(out));
  if (recording(a, b)) {
    node->requires_grad = true;
    node->parents = {a.node(), b.node()};
    auto an = a.node();
    auto bn = b.node();
    TapeNode* on = node.get();
    node->backward_fn = [an, bn, on, outer, la, lb, inner]() {
      on->ensure_grad();
      const double* go = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* ga = an->grad.data();
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = go + o * (la + lb) * inner;
          double* dst = ga + o * la * inner;
          for (std::int64_t i = 0; i < la * inner; ++i) dst[i] += src[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* gb = bn->grad.data();
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = go + (o * (la + lb) + la) * inner;
          double* dst = gb + o * lb * inner;
          for (std::int64_t i = 0; i < lb * inner; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return Tensor(node);
}

namespace {

Tensor head_permute(const Tensor& x, int n_heads, bool split) {
  if (x.rank() != 3) {
    throw DimError("head reshape expects rank-3 input, got " + shape_str(x.shape()));
  }
  const std::int64_t h = n_heads;
  std::int64_t batch, len, dm, dk;
  Shape oshape;
  if (split) {
    batch = x.dim(0);
    len = x.dim(1);
    dm = x.dim(2);
    if (dm % h != 0) {
      throw DimError("d_model " + std::to_string(dm) + " not divisible by " + std::to_string(h) +
                     " heads");
    }
    dk = dm / h;
    oshape = {batch * h, len, dk};
  } else {
    if (x.dim(0) % h != 0) {
      throw DimError("merge_heads batch " + std::to_string(x.dim(0)) + " not divisible by " +
                     std::to_string(h));
    }
    batch = x.dim(0) / h;
    len = x.dim(1);
    dk = x.dim(2);
    dm = dk * h;
    oshape = {batch, len, dm};
  }
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  // split: out[(b*h+hh), l, t] = x[b, l, hh*dk + t]
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t hh = 0; hh < h; ++hh) {
      for (std::int64_t l = 0; l < len; ++l) {
        const std::int64_t split_off = ((b * h + hh) * len + l) * dk;
        const std::int64_t flat_off = (b * len + l) * dm + hh * dk;
        if (split) {
          std::memcpy(out.data() + split_off, px + flat_off,
                      static_cast<std::size_t>(dk) * sizeof(double));
        } else {
          std::memcpy(out.data() + flat_off, px + split_off,
                      static_cast<std::size_t>(dk) * sizeof(double));
        }
      }
    }
  }
  auto node = make_node(std::move(oshape), std::move(out));
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, batch, h, len, dk, dm, split]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t hh = 0; hh < h; ++hh) {
          for (std::int64_t l = 0; l < len; ++l) {
            const std::int64_t split_off = ((b * h + hh) * len + l) * dk;
            const std::int64_t flat_off = (b * len + l) * dm + hh * dk;
            const std::int64_t src = split ? split_off : flat_off;
            const std::int64_t dst = split ? flat_off : split_off;
            for (std::int64_t t = 0; t < dk; ++t) gx[dst + t] += go[src + t];
          }
        }
      }
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor split_heads(const Tensor& x, int n_heads) { return head_permute(x, n_heads, true); }
Tensor merge_heads(const Tensor& x, int n_heads) { return head_permute(x, n_heads, false); }

// ---- softmax family ----------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  std::int64_t outer, len, inner;
  axis_extents(x.shape(), ax, outer, len, inner);
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double mx = px[base];
      for (std::int64_t t = 1; t < len; ++t) mx = std::max(mx, px[base + t * inner]);
      double sum = 0.0;
      for (std::int64_t t = 0; t < len; ++t) {
        const double e = std::exp(px[base + t * inner] - mx);
        out[static_cast<std::size_t>(base + t * inner)] = e;
        sum += e;
      }
      const double norm = 1.0 / sum;
      for (std::int64_t t = 0; t < len; ++t) {
        out[static_cast<std::size_t>(base + t * inner)] *= norm;
      }
    }
  }
  auto node = make_node(x.shape(), std::move(out));
  NMT_CHECK_FINITE("softmax", *node);
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, outer, len, inner]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      const double* y = on->data.data();
      double* gx = xn->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::int64_t t = 0; t < len; ++t) {
            dot += go[base + t * inner] * y[base + t * inner];
          }
          for (std::int64_t t = 0; t < len; ++t) {
            const std::int64_t idx = base + t * inner;
            gx[idx] += y[idx] * (go[idx] - dot);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor log_softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "log_softmax");
  std::int64_t outer, len, inner;
  axis_extents(x.shape(), ax, outer, len, inner);
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double mx = px[base];
      for (std::int64_t t = 1; t < len; ++t) mx = std::max(mx, px[base + t * inner]);
      double sum = 0.0;
      for (std::int64_t t = 0; t < len; ++t) sum += std::exp(px[base + t * inner] - mx);
      const double lse = mx + std::log(sum);
      for (std::int64_t t = 0; t < len; ++t) {
        const std::int64_t idx = base + t * inner;
        out[static_cast<std::size_t>(idx)] = px[idx] - lse;
      }
    }
  }
  auto node = make_node(x.shape(), std::move(out));
  NMT_CHECK_FINITE("log_softmax", *node);
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, outer, len, inner]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      const double* lp = on->data.data();
      double* gx = xn->grad.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          double gsum = 0.0;
          for (std::int64_t t = 0; t < len; ++t) gsum += go[base + t * inner];
          for (std::int64_t t = 0; t < len; ++t) {
            const std::int64_t idx = base + t * inner;
            gx[idx] += go[idx] - std::exp(lp[idx]) * gsum;
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---- layer norm ----------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimError("layer_norm needs at least rank 1");
  const std::int64_t d = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
    throw DimError("layer_norm gain/bias must be [" + std::to_string(d) + "], got " +
                   shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  if (eps <= 0.0) throw ContractError("layer_norm eps must be positive");
  const std::int64_t rows = x.numel() / d;
  std::vector<double> out(x.data().size());
  std::vector<double> mean(static_cast<std::size_t>(rows));
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = bias.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double m = 0.0;
    for (std::int64_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = row[j] - m;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(r)] = m;
    rstd[static_cast<std::size_t>(r)] = rs;
    double* orow = out.data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) {
      orow[j] = pg[j] * ((row[j] - m) * rs) + pb[j];
    }
  }
  auto node = make_node(x.shape(), std::move(out));
  NMT_CHECK_FINITE("layer_norm", *node);
  if (recording(x) || recording(gain) || recording(bias)) {
    node->requires_grad = true;
    node->parents = {x.node(), gain.node(), bias.node()};
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, gn, bn, on, rows, d, mean = std::move(mean),
                         rstd = std::move(rstd)]() {
      on->ensure_grad();
      const double* go = on->grad.data();
      const double* px = xn->data.data();
      const double* pg = gn->data.data();
      double* gx = nullptr;
      double* gg = nullptr;
      double* gb = nullptr;
      if (xn->requires_grad) {
        xn->ensure_grad();
        gx = xn->grad.data();
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        gg = gn->grad.data();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        gb = bn->grad.data();
      }
      for (std::int64_t r = 0; r < rows; ++r) {
        const double m = mean[static_cast<std::size_t>(r)];
        const double rs = rstd[static_cast<std::size_t>(r)];
        const double* row = px + r * d;
        const double* grow = go + r * d;
        if (gg || gb) {
          for (std::int64_t j = 0; j < d; ++j) {
            const double xh = (row[j] - m) * rs;
            if (gg) gg[j] += grow[j] * xh;
            if (gb) gb[j] += grow[j];
          }
        }
        if (gx) {
          // dxh = dy * gain; fold the mean/variance paths per row
          double sum_dxh = 0.0;
          double sum_dxh_xc = 0.0;
          for (std::int64_t j = 0; j < d; ++j) {
            const double dxh = grow[j] * pg[j];
            sum_dxh += dxh;
            sum_dxh_xc += dxh * (row[j] - m);
          }
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::int64_t j = 0; j < d; ++j) {
            const double dxh = grow[j] * pg[j];
            const double xc = row[j] - m;
            gx[r * d + j] += rs * (dxh - inv_d * sum_dxh - xc * rs * rs * inv_d * sum_dxh_xc);
          }
        }
      }
    };
  }
  return Tensor(node);
}

// ---- gather / scatter ------------------------------------------------------------

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw DimError("embedding table must be rank 2, got " + shape_str(table.shape()));
  }
  const std::int64_t vocab = table.dim(0);
  const std::int64_t d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(n * d));
  const double* pt = table.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * d, pt + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d,
                static_cast<std::size_t>(d) * sizeof(double));
  }
  auto node = make_node({n, d}, std::move(out));
  if (recording(table)) {
    node->requires_grad = true;
    node->parents = {table.node()};
    auto tn = table.node();
    TapeNode* on = node.get();
    node->backward_fn = [tn, on, ids, d]() {
      on->ensure_grad();
      tn->ensure_grad();
      const double* go = on->grad.data();
      double* gt = tn->grad.data();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = gt + static_cast<std::int64_t>(ids[i]) * d;
        const double* src = go + static_cast<std::int64_t>(i) * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor(node);
}

Tensor masked_mean_rows(const Tensor& x, const std::vector<std::uint8_t>& pad) {
  if (x.rank() != 3) {
    throw DimError("masked_mean_rows expects [B,J,d], got " + shape_str(x.shape()));
  }
  const std::int64_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (static_cast<std::int64_t>(pad.size()) != batch * len) {
    throw DimError("pad mask size " + std::to_string(pad.size()) + " != B*J");
  }
  std::vector<double> out(static_cast<std::size_t>(batch * d), 0.0);
  std::vector<double> inv_count(static_cast<std::size_t>(batch));
  const double* px = x.data().data();
  for (std::int64_t b = 0; b < batch; ++b) {
    std::int64_t count = 0;
    for (std::int64_t j = 0; j < len; ++j) {
      if (pad[static_cast<std::size_t>(b * len + j)]) continue;
      ++count;
      const double* row = px + (b * len + j) * d;
      double* orow = out.data() + b * d;
      for (std::int64_t t = 0; t < d; ++t) orow[t] += row[t];
    }
    if (count == 0) {
      throw InputError("masked_mean_rows: batch row " + std::to_string(b) +
                       " has no unpadded positions");
    }
    const double inv = 1.0 / static_cast<double>(count);
    inv_count[static_cast<std::size_t>(b)] = inv;
    double* orow = out.data() + b * d;
    for (std::int64_t t = 0; t < d; ++t) orow[t] *= inv;
  }
  auto node = make_node({batch, d}, std::move(out));
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, pad, batch, len, d, inv_count = std::move(inv_count)]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::int64_t b = 0; b < batch; ++b) {
        const double inv = inv_count[static_cast<std::size_t>(b)];
        const double* grow = go + b * d;
        for (std::int64_t j = 0; j < len; ++j) {
          if (pad[static_cast<std::size_t>(b * len + j)]) continue;
          double* dst = gx + (b * len + j) * d;
          for (std::int64_t t = 0; t < d; ++t) dst[t] += grow[t] * inv;
        }
      }
    };
  }
  return Tensor(node);
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout rate must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> factor(x.data().size());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    factor[i] = rng.next_double() >= p ? keep_scale : 0.0;
  }
  std::vector<double> out(x.data().size());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * factor[i];
  auto node = make_node(x.shape(), std::move(out));
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on, factor = std::move(factor)]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->data.size(); ++i) gx[i] += go[i] * factor[i];
    };
  }
  return Tensor(node);
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto node = make_node({1}, {s});
  if (recording(x)) {
    node->requires_grad = true;
    node->parents = {x.node()};
    auto xn = x.node();
    TapeNode* on = node.get();
    node->backward_fn = [xn, on]() {
      on->ensure_grad();
      xn->ensure_grad();
      const double g = on->grad[0];
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < xn->data.size(); ++i) gx[i] += g;
    };
  }
  return Tensor(node);
}

Tensor smoothed_nll(const Tensor& logp, const std::vector<int>& targets,
                    const std::vector<std::uint8_t>& mask, double eps, int pad_id) {
  if (logp.rank() != 3) {
    throw DimError("smoothed_nll expects [B,L,V] log-probs, got " + shape_str(logp.shape()));
  }
  if (eps < 0.0 || eps >= 1.0) throw ContractError("label smoothing must lie in [0,1)");
  const std::int64_t positions = logp.dim(0) * logp.dim(1);
  const std::int64_t vocab = logp.dim(2);
  if (vocab < 2) throw ContractError("smoothed_nll needs at least 2 classes");
  if (static_cast<std::int64_t>(targets.size()) != positions ||
      static_cast<std::int64_t>(mask.size()) != positions) {
    throw DimError("smoothed_nll targets/mask must cover B*L positions");
  }
  std::int64_t count = 0;
  for (std::uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("smoothed_nll: every position is masked out");

  const double* lp = logp.data().data();
  const double other_w = eps / static_cast<double>(vocab - 1);
  double total = 0.0;
  for (std::int64_t pos = 0; pos < positions; ++pos) {
    if (!mask[static_cast<std::size_t>(pos)]) continue;
    const int t = targets[static_cast<std::size_t>(pos)];
    if (t < 0 || t >= vocab) {
      throw IndexError("smoothed_nll target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(vocab) + ")");
    }
    if (t == pad_id) {
      throw ContractError("smoothed_nll: unmasked position targets the pad class");
    }
    const double* row = lp + pos * vocab;
    double others = 0.0;
    if (eps > 0.0) {
      double s = 0.0;
      for (std::int64_t c = 0; c < vocab; ++c) s += row[c];
      others = s - row[t];
      if (pad_id >= 0 && pad_id < vocab) others -= row[pad_id];
    }
    total += -((1.0 - eps) * row[t] + other_w * others);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  auto node = make_node({1}, {total * inv_count});
  NMT_CHECK_FINITE("smoothed_nll", *node);
  if (recording(logp)) {
    node->requires_grad = true;
    node->parents = {logp.node()};
    auto ln = logp.node();
    TapeNode* on = node.get();
    node->backward_fn = [ln, on, targets, mask, eps, pad_id, positions, vocab, other_w,
                         inv_count]() {
      on->ensure_grad();
      ln->ensure_grad();
      const double g = on->grad[0] * inv_count;
      double* gl = ln->grad.data();
      for (std::int64_t pos = 0; pos < positions; ++pos) {
        if (!mask[static_cast<std::size_t>(pos)]) continue;
        const int t = targets[static_cast<std::size_t>(pos)];
        double* row = gl + pos * vocab;
        if (eps > 0.0) {
          for (std::int64_t c = 0; c < vocab; ++c) row[c] -= g * other_w;
          row[t] += g * other_w;
          if (pad_id >= 0 && pad_id < vocab) row[pad_id] += g * other_w;
        }
        row[t] -= g * (1.0 - eps);
      }
    };
  }
  return Tensor(node);
}

}  // namespace nmt
