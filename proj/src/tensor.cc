#include "dbgl/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dbgl/errors.h"
#include "dbgl/kernels.h"

namespace dbgl::diff {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool tracked) {
  return full(std::move(shape), 0.0, tracked);
}

Tensor Tensor::full(Shape shape, double value, bool tracked) {
  auto node = std::make_shared<Node>();
  node->data.assign(diff::numel(shape), value);
  node->shape = std::move(shape);
  node->tracked = tracked;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool tracked) {
  if (diff::numel(shape) != data.size()) {
    throw DimensionError("from_data: shape " + shape_string(shape) +
                         " does not match " + std::to_string(data.size()) +
                         " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->tracked = tracked;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw DimensionError("at(i, j) requires a 2-D tensor");
  return node_->data.at(i * node_->shape[1] + j);
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detached_copy() const {
  return from_data(node_->shape, node_->data, false);
}

// --- Tape -------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_branch_signature = 0;

std::string g_fault_op;
double g_fault_factor = 1.0;
}  // namespace

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& output, BackwardFn fn) {
  entries_.push_back({output.node_, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape())
                                        : std::string("<undefined>")));
  }
  if (!loss.tracked()) {
    throw ContractError("backward on an untracked loss");
  }
  const auto found =
      std::find_if(entries_.begin(), entries_.end(),
                   [&](const Entry& e) { return e.output == loss.node_; });
  if (found == entries_.end()) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  for (auto& entry : entries_) entry.output->grad.clear();
  loss.node_->grad.assign(1, 1.0);
  for (auto it = std::make_reverse_iterator(found + 1); it != entries_.rend();
       ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(it->output->grad);
  }
}

void reset_branch_signature() { g_branch_signature = 0; }
std::uint64_t branch_signature() { return g_branch_signature; }
void mix_branch_signature(std::uint64_t value) {
  g_branch_signature = (g_branch_signature ^ value) * 0x100000001B3ULL + 0x9E3779B97F4A7C15ULL;
}

void set_backward_fault(std::string_view op, double factor) {
  g_fault_op = std::string(op);
  g_fault_factor = factor;
}

double backward_fault(std::string_view op) {
  return (!g_fault_op.empty() && g_fault_op == op) ? g_fault_factor : 1.0;
}

// --- Op plumbing ------------------------------------------------------------

struct OpBuilder {
  static Tensor make(Shape shape) { return Tensor::zeros(std::move(shape)); }

  static std::span<double> grad(const Tensor& t) {
    auto& g = t.node_->grad;
    if (g.empty()) g.assign(t.node_->data.size(), 0.0);
    return g;
  }

  static std::span<double> data(Tensor& t) { return t.node_->data; }

  // Marks `out` tracked and records `fn` when any input is tracked and a tape
  // is active.
  static void finish(Tensor& out, std::initializer_list<const Tensor*> inputs,
                     Tape::BackwardFn fn) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor* t) { return t->tracked(); });
    if (!any) return;
    out.node_->tracked = true;
    tape->record(out, std::move(fn));
  }

  static void finish_many(Tensor& out, const std::vector<Tensor>& inputs,
                          Tape::BackwardFn fn) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return;
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.tracked(); });
    if (!any) return;
    out.node_->tracked = true;
    tape->record(out, std::move(fn));
  }
};

namespace {

using B = OpBuilder;

struct Mat {
  std::size_t rows;
  std::size_t cols;
};

Mat as_matrix(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {numel(s) / s.back(), s.back()};
}

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_string(t.shape()));
  }
}

// True when `b` can broadcast onto `a` under the rules in the header.
bool broadcasts_onto(const Shape& a, const Shape& b) {
  if (a == b) return true;
  const Mat ma = as_matrix(a);
  const Mat mb = as_matrix(b);
  if (b.size() > 2 && a != b) return false;
  return (mb.rows == ma.rows || mb.rows == 1) &&
         (mb.cols == ma.cols || mb.cols == 1);
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::kAdd: return "add";
    case BinOp::kSub: return "sub";
    case BinOp::kMul: return "mul";
    case BinOp::kDiv: return "div";
  }
  return "?";
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  if (!broadcasts_onto(a.shape(), b.shape())) {
    throw DimensionError(std::string(bin_name(op)) + ": incompatible shapes " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const Mat ma = as_matrix(a.shape());
  const Mat mb = as_matrix(b.shape());
  const bool row_b = mb.rows == 1 && ma.rows != 1;
  const bool col_b = mb.cols == 1 && ma.cols != 1;
  auto bidx = [=](std::size_t i, std::size_t j) {
    return (row_b ? 0 : i) * mb.cols + (col_b ? 0 : j);
  };
  Tensor out = B::make(a.shape());
  auto o = B::data(out);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < ma.rows; ++i) {
    for (std::size_t j = 0; j < ma.cols; ++j) {
      const double x = ad[i * ma.cols + j];
      const double y = bd[bidx(i, j)];
      double r = 0.0;
      switch (op) {
        case BinOp::kAdd: r = x + y; break;
        case BinOp::kSub: r = x - y; break;
        case BinOp::kMul: r = x * y; break;
        case BinOp::kDiv: r = x / y; break;
      }
      o[i * ma.cols + j] = r;
    }
  }
  B::finish(out, {&a, &b}, [a, b, out, op, ma, bidx](std::span<const double> g) {
    const auto ad = a.data();
    const auto bd = b.data();
    const double f = backward_fault(bin_name(op));
    std::span<double> ga = a.tracked() ? B::grad(a) : std::span<double>{};
    std::span<double> gb = b.tracked() ? B::grad(b) : std::span<double>{};
    for (std::size_t i = 0; i < ma.rows; ++i) {
      for (std::size_t j = 0; j < ma.cols; ++j) {
        const std::size_t k = i * ma.cols + j;
        const std::size_t kb = bidx(i, j);
        const double gk = g[k] * f;
        switch (op) {
          case BinOp::kAdd:
            if (!ga.empty()) ga[k] += gk;
            if (!gb.empty()) gb[kb] += gk;
            break;
          case BinOp::kSub:
            if (!ga.empty()) ga[k] += gk;
            if (!gb.empty()) gb[kb] -= gk;
            break;
          case BinOp::kMul:
            if (!ga.empty()) ga[k] += gk * bd[kb];
            if (!gb.empty()) gb[kb] += gk * ad[k];
            break;
          case BinOp::kDiv:
            if (!ga.empty()) ga[k] += gk / bd[kb];
            if (!gb.empty()) gb[kb] -= gk * ad[k] / (bd[kb] * bd[kb]);
            break;
        }
      }
    }
  });
  return out;
}

// Elementwise unary op: forward value and derivative given (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out = B::make(x.shape());
  auto o = B::data(out);
  const auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) o[i] = fwd(xd[i]);
  B::finish(out, {&x}, [x, out, name, deriv](std::span<const double> g) {
    const auto xd = x.data();
    const auto yd = out.data();
    const double f = backward_fault(name);
    auto gx = B::grad(x);
    for (std::size_t i = 0; i < xd.size(); ++i)
      gx[i] += f * g[i] * deriv(xd[i], yd[i]);
  });
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

// --- Linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out = B::make({m, n});
  kernels::gemm(a.data(), b.data(), B::data(out), m, k, n);
  B::finish(out, {&a, &b}, [a, b, m, k, n](std::span<const double> g) {
    const double f = backward_fault("matmul");
    std::vector<double> tmp;
    if (a.tracked()) {
      tmp.assign(m * k, 0.0);
      kernels::gemm_nt(g, b.data(), tmp, m, n, k);  // dA = dC B^T
      auto ga = B::grad(a);
      for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += f * tmp[i];
    }
    if (b.tracked()) {
      tmp.assign(k * n, 0.0);
      kernels::gemm_tn(a.data(), g, tmp, k, m, n);  // dB = A^T dC
      auto gb = B::grad(b);
      for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += f * tmp[i];
    }
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions differ for " +
                         shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  Tensor out = B::make({m, n});
  kernels::gemm_nt(a.data(), b.data(), B::data(out), m, k, n);
  B::finish(out, {&a, &b}, [a, b, m, k, n](std::span<const double> g) {
    const double f = backward_fault("matmul");
    std::vector<double> tmp;
    if (a.tracked()) {
      tmp.assign(m * k, 0.0);
      kernels::gemm(g, b.data(), tmp, m, n, k);  // dA = dC B
      auto ga = B::grad(a);
      for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += f * tmp[i];
    }
    if (b.tracked()) {
      tmp.assign(n * k, 0.0);
      kernels::gemm_tn(g, a.data(), tmp, n, m, k);  // dB = dC^T A
      auto gb = B::grad(b);
      for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += f * tmp[i];
    }
  });
  return out;
}

namespace {

// Rows per block in attend_rows; bounds the scratch matrix at kAttendBlock x n.
constexpr std::size_t kAttendBlock = 256;

// Weights for query rows [r0, r0 + rows) into w (rows x n).
void attend_weights(std::span<const double> q, std::span<const double> keys,
                    std::vector<double>& w, std::size_t r0, std::size_t rows,
                    std::size_t d, std::size_t n) {
  std::vector<double> sim(rows * n);
  kernels::gemm_nt(q.subspan(r0 * d, rows * d), keys, sim, rows, d, n);
  w.resize(rows * n);
  kernels::softmax_rows(sim, w, rows, n);
}

}  // namespace

Tensor attend_rows(const Tensor& query, const Tensor& keys, const Tensor& values,
                   std::vector<double>* weight_sums) {
  require_2d(query, "attend_rows");
  require_2d(keys, "attend_rows");
  require_2d(values, "attend_rows");
  const std::size_t m = query.dim(0), d = query.dim(1), n = keys.dim(0), e = values.dim(1);
  if (keys.dim(1) != d || values.dim(0) != n || n == 0) {
    throw DimensionError("attend_rows: query " + shape_string(query.shape()) + ", keys " +
                         shape_string(keys.shape()) + ", values " +
                         shape_string(values.shape()) + " do not fit");
  }
  if (weight_sums) weight_sums->resize(n, 0.0);
  Tensor out = B::make({m, e});
  auto o = B::data(out);
  std::vector<double> w;
  for (std::size_t r0 = 0; r0 < m; r0 += kAttendBlock) {
    const std::size_t rows = std::min(kAttendBlock, m - r0);
    attend_weights(query.data(), keys.data(), w, r0, rows, d, n);
    kernels::gemm(w, values.data(), o.subspan(r0 * e, rows * e), rows, n, e);
    if (weight_sums)
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < n; ++j) (*weight_sums)[j] += w[i * n + j];
  }
  B::finish(out, {&query, &keys, &values},
            [query, keys, values, m, d, n, e](std::span<const double> g) {
    const double f = backward_fault("attend_rows");
    std::vector<double> w, dw, tmp;
    std::vector<double> dq, dk, dv;
    if (query.tracked()) dq.assign(m * d, 0.0);
    if (keys.tracked()) dk.assign(n * d, 0.0);
    if (values.tracked()) dv.assign(n * e, 0.0);
    for (std::size_t r0 = 0; r0 < m; r0 += kAttendBlock) {
      const std::size_t rows = std::min(kAttendBlock, m - r0);
      const auto gb = g.subspan(r0 * e, rows * e);
      attend_weights(query.data(), keys.data(), w, r0, rows, d, n);
      if (values.tracked()) {
        tmp.assign(n * e, 0.0);
        kernels::gemm_tn(w, gb, tmp, n, rows, e);  // dV += W^T dOut
        for (std::size_t i = 0; i < tmp.size(); ++i) dv[i] += tmp[i];
      }
      if (!query.tracked() && !keys.tracked()) continue;
      dw.assign(rows * n, 0.0);
      kernels::gemm_nt(gb, values.data(), dw, rows, e, n);  // dW = dOut V^T
      for (std::size_t i = 0; i < rows; ++i) {  // dS = W * (dW - <dW, W>)
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dw[i * n + j] * w[i * n + j];
        for (std::size_t j = 0; j < n; ++j) dw[i * n + j] = w[i * n + j] * (dw[i * n + j] - dot);
      }
      if (query.tracked()) {
        tmp.assign(rows * d, 0.0);
        kernels::gemm(dw, keys.data(), tmp, rows, n, d);  // dQ = dS K
        for (std::size_t i = 0; i < tmp.size(); ++i) dq[r0 * d + i] += tmp[i];
      }
      if (keys.tracked()) {
        tmp.assign(n * d, 0.0);
        kernels::gemm_tn(dw, query.data().subspan(r0 * d, rows * d), tmp, n, rows, d);
        for (std::size_t i = 0; i < tmp.size(); ++i) dk[i] += tmp[i];  // dK = dS^T Q
      }
    }
    if (query.tracked()) {
      auto gq = B::grad(query);
      for (std::size_t i = 0; i < dq.size(); ++i) gq[i] += f * dq[i];
    }
    if (keys.tracked()) {
      auto gk = B::grad(keys);
      for (std::size_t i = 0; i < dk.size(); ++i) gk[i] += f * dk[i];
    }
    if (values.tracked()) {
      auto gv = B::grad(values);
      for (std::size_t i = 0; i < dv.size(); ++i) gv[i] += f * dv[i];
    }
  });
  return out;
}

// --- Elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (!broadcasts_onto(a.shape(), b.shape()) &&
      broadcasts_onto(b.shape(), a.shape()))
    return binary(b, a, BinOp::kAdd);
  return binary(a, b, BinOp::kAdd);
}

Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!broadcasts_onto(a.shape(), b.shape()) &&
      broadcasts_onto(b.shape(), a.shape()))
    return binary(b, a, BinOp::kMul);
  return binary(a, b, BinOp::kMul);
}

Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kDiv); }

Tensor scale(const Tensor& x, double s) {
  return unary(
      x, "scale", [s](double v) { return s * v; },
      [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      x, "add_scalar", [s](double v) { return v + s; },
      [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  std::uint64_t h = g_branch_signature;
  for (double v : x.data()) h = (h ^ (v > 0.0 ? 0x9E3779B97F4A7C15ULL : 0x2545F4914F6CDD1DULL)) * 0x100000001B3ULL;
  g_branch_signature = h;
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp_max(const Tensor& x, double hi) {
  std::uint64_t h = g_branch_signature;
  for (double v : x.data()) h = (h ^ (v < hi ? 0x51ED270B27AD5D0BULL : 0x6A09E667F3BCC909ULL)) * 0x100000001B3ULL;
  g_branch_signature = h;
  return unary(
      x, "clamp_max", [hi](double v) { return v < hi ? v : hi; },
      [hi](double v, double) { return v < hi ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_scalar,
               [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor sin(const Tensor& x) {
  return unary(
      x, "sin", [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_scalar,
               [](double v, double) { return sigmoid_scalar(v); });
}

// --- Reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor out = B::make({});
  double s = 0.0;
  for (double v : x.data()) s += v;
  B::data(out)[0] = s;
  B::finish(out, {&x}, [x](std::span<const double> g) {
    const double f = backward_fault("sum");
    for (double& gx : B::grad(x)) gx += f * g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, std::size_t axis) {
  require_2d(x, "sum");
  if (axis > 1) throw DimensionError("sum: invalid axis " + std::to_string(axis));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = B::make(axis == 1 ? Shape{m, 1} : Shape{1, n});
  auto o = B::data(out);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[axis == 1 ? i : j] += xd[i * n + j];
  B::finish(out, {&x}, [x, axis, m, n](std::span<const double> g) {
    auto gx = B::grad(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[axis == 1 ? i : j];
  });
  return out;
}

Tensor l2_norm(const Tensor& x, std::size_t axis) {
  require_2d(x, "l2_norm");
  if (axis > 1)
    throw DimensionError("l2_norm: invalid axis " + std::to_string(axis));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = B::make(axis == 1 ? Shape{m, 1} : Shape{1, n});
  auto o = B::data(out);
  const auto xd = x.data();
  if (axis == 1) {
    kernels::row_norms(xd, o, m, n);
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) o[j] += xd[i * n + j] * xd[i * n + j];
    for (double& v : o) v = std::sqrt(v);
  }
  // d||x|| / dx = x / ||x||, taken as 0 at the origin.
  B::finish(out, {&x}, [x, out, axis, m, n](std::span<const double> g) {
    const double f = backward_fault("l2_norm");
    const auto xd = x.data();
    const auto nd = out.data();
    auto gx = B::grad(x);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t r = axis == 1 ? i : j;
        if (nd[r] > 0.0) gx[i * n + j] += f * g[r] * xd[i * n + j] / nd[r];
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const bool is_vec = x.rank() == 1;
  if (!is_vec) require_2d(x, "softmax");
  if ((is_vec && axis != 0) || axis > 1) {
    throw DimensionError("softmax: invalid axis " + std::to_string(axis) +
                         " for shape " + shape_string(x.shape()));
  }
  if (x.numel() == 0) throw DimensionError("softmax of an empty tensor");
  // Express both layouts as (groups, length, stride) over the flat data.
  std::size_t groups, len, stride, step;
  if (is_vec) {
    groups = 1, len = x.dim(0), stride = 1, step = 0;
  } else if (axis == 1) {
    groups = x.dim(0), len = x.dim(1), stride = 1, step = x.dim(1);
  } else {
    groups = x.dim(1), len = x.dim(0), stride = x.dim(1), step = 1;
  }
  Tensor out = B::make(x.shape());
  auto o = B::data(out);
  const auto xd = x.data();
  if (stride == 1 && !is_vec) {
    kernels::softmax_rows(xd, o, groups, len);
  } else {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = gi * step;
      double mx = xd[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xd[base + k * stride]);
      double total = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        o[base + k * stride] = std::exp(xd[base + k * stride] - mx);
        total += o[base + k * stride];
      }
      for (std::size_t k = 0; k < len; ++k) o[base + k * stride] /= total;
    }
  }
  B::finish(out, {&x}, [x, out, groups, len, stride, step](std::span<const double> g) {
    const double f = backward_fault("softmax");
    const auto y = out.data();
    auto gx = B::grad(x);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = gi * step;
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k)
        dot += g[base + k * stride] * y[base + k * stride];
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t idx = base + k * stride;
        gx[idx] += f * y[idx] * (g[idx] - dot);
      }
    }
  });
  return out;
}

Tensor normalize_rows(const Tensor& x, double eps) {
  return div(x, add_scalar(l2_norm(x, 1), eps));
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  require_2d(a, "cosine_sim");
  if (a.shape() != b.shape()) {
    throw DimensionError("cosine_sim: shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + " differ");
  }
  const Tensor dot = sum(mul(a, b), 1);
  const Tensor denom = mul(add_scalar(l2_norm(a, 1), kCosineEps),
                           add_scalar(l2_norm(b, 1), kCosineEps));
  return div(dot, denom);
}

// --- Structural -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of an empty list");
  if (axis > 1) throw DimensionError("concat: invalid axis " + std::to_string(axis));
  for (const auto& p : parts) require_2d(p, "concat");
  const std::size_t other = axis == 0 ? 1 : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != parts[0].dim(other)) {
      throw DimensionError("concat: shapes " + shape_string(parts[0].shape()) +
                           " and " + shape_string(p.shape()) +
                           " disagree off the concat axis");
    }
    total += p.dim(axis);
  }
  const std::size_t m = axis == 0 ? total : parts[0].dim(0);
  const std::size_t n = axis == 1 ? total : parts[0].dim(1);
  Tensor out = B::make({m, n});
  auto o = B::data(out);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pd = p.data();
    const std::size_t pm = p.dim(0), pn = p.dim(1);
    for (std::size_t i = 0; i < pm; ++i)
      for (std::size_t j = 0; j < pn; ++j) {
        const std::size_t oi = axis == 0 ? i + offset : i;
        const std::size_t oj = axis == 1 ? j + offset : j;
        o[oi * n + oj] = pd[i * pn + j];
      }
    offset += p.dim(axis);
  }
  B::finish_many(out, parts, [parts, axis, n](std::span<const double> g) {
    const double f = backward_fault("concat");
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t pm = p.dim(0), pn = p.dim(1);
      if (p.tracked()) {
        auto gp = B::grad(p);
        for (std::size_t i = 0; i < pm; ++i)
          for (std::size_t j = 0; j < pn; ++j) {
            const std::size_t oi = axis == 0 ? i + offset : i;
            const std::size_t oj = axis == 1 ? j + offset : j;
            gp[i * pn + j] += f * g[oi * n + oj];
          }
      }
      offset += p.dim(axis);
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) +
                         " as " + shape_string(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape),
                                 std::vector<double>(x.data().begin(), x.data().end()));
  B::finish(out, {&x}, [x](std::span<const double> g) {
    auto gx = B::grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_2d(x, "gather_rows");
  const std::size_t n = x.dim(1);
  for (std::size_t r : index) {
    if (r >= x.dim(0)) {
      throw DimensionError("gather_rows: row " + std::to_string(r) +
                           " out of range for " + shape_string(x.shape()));
    }
  }
  Tensor out = B::make({index.size(), n});
  auto o = B::data(out);
  const auto xd = x.data();
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(xd.begin() + index[i] * n, n, o.begin() + i * n);
  std::vector<std::size_t> idx(index.begin(), index.end());
  B::finish(out, {&x}, [x, idx = std::move(idx), n](std::span<const double> g) {
    const double f = backward_fault("gather_rows");
    auto gx = B::grad(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx[idx[i] * n + j] += f * g[i * n + j];
  });
  return out;
}

Tensor index_add_rows(const Tensor& src, std::span<const std::size_t> index,
                      std::size_t rows) {
  require_2d(src, "index_add_rows");
  if (index.size() != src.dim(0)) {
    throw DimensionError("index_add_rows: " + std::to_string(index.size()) +
                         " indices for " + shape_string(src.shape()));
  }
  const std::size_t n = src.dim(1);
  Tensor out = B::make({rows, n});
  auto o = B::data(out);
  const auto sd = src.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw DimensionError("index_add_rows: target row " +
                           std::to_string(index[i]) + " >= " + std::to_string(rows));
    }
    for (std::size_t j = 0; j < n; ++j) o[index[i] * n + j] += sd[i * n + j];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  B::finish(out, {&src}, [src, idx = std::move(idx), n](std::span<const double> g) {
    const double f = backward_fault("index_add_rows");
    auto gs = B::grad(src);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gs[i * n + j] += f * g[idx[i] * n + j];
  });
  return out;
}

Tensor scatter_rows(const Tensor& base, std::span<const std::size_t> index,
                    const Tensor& rows) {
  require_2d(base, "scatter_rows");
  require_2d(rows, "scatter_rows");
  const std::size_t n = base.dim(1);
  if (rows.dim(1) != n || rows.dim(0) != index.size()) {
    throw DimensionError("scatter_rows: rows " + shape_string(rows.shape()) +
                         " do not fit base " + shape_string(base.shape()) +
                         " with " + std::to_string(index.size()) + " indices");
  }
  Tensor out = base.detached_copy();
  auto o = B::data(out);
  const auto rd = rows.data();
  std::vector<char> replaced(base.dim(0), 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= base.dim(0) || replaced[index[i]]) {
      throw ContractError("scatter_rows: index " + std::to_string(index[i]) +
                          " out of range or repeated");
    }
    replaced[index[i]] = 1;
    std::copy_n(rd.begin() + i * n, n, o.begin() + index[i] * n);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  B::finish(out, {&base, &rows},
            [base, rows, idx = std::move(idx), replaced = std::move(replaced),
             n](std::span<const double> g) {
              if (base.tracked()) {
                auto gb = B::grad(base);
                for (std::size_t r = 0; r < replaced.size(); ++r) {
                  if (replaced[r]) continue;
                  for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += g[r * n + j];
                }
              }
              if (rows.tracked()) {
                auto gr = B::grad(rows);
                for (std::size_t i = 0; i < idx.size(); ++i)
                  for (std::size_t j = 0; j < n; ++j)
                    gr[i * n + j] += g[idx[i] * n + j];
              }
            });
  return out;
}

Tensor group_dot(const Tensor& q, const Tensor& h) {
  require_2d(q, "group_dot");
  require_2d(h, "group_dot");
  const std::size_t b = q.dim(0), d = q.dim(1);
  if (h.dim(1) != d || b == 0 || h.dim(0) % b != 0) {
    throw DimensionError("group_dot: query " + shape_string(q.shape()) +
                         " incompatible with " + shape_string(h.shape()));
  }
  const std::size_t groups = h.dim(0) / b;
  Tensor out = B::make({b, groups});
  auto o = B::data(out);
  const auto qd = q.data();
  const auto hd = h.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double acc = 0.0;
      const double* hr = hd.data() + (i * groups + gi) * d;
      for (std::size_t k = 0; k < d; ++k) acc += qd[i * d + k] * hr[k];
      o[i * groups + gi] = acc;
    }
  B::finish(out, {&q, &h}, [q, h, b, d, groups](std::span<const double> g) {
    const auto qd = q.data();
    const auto hd = h.data();
    std::span<double> gq = q.tracked() ? B::grad(q) : std::span<double>{};
    std::span<double> gh = h.tracked() ? B::grad(h) : std::span<double>{};
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const double gv = g[i * groups + gi];
        const std::size_t row = (i * groups + gi) * d;
        for (std::size_t k = 0; k < d; ++k) {
          if (!gq.empty()) gq[i * d + k] += gv * hd[row + k];
          if (!gh.empty()) gh[row + k] += gv * qd[i * d + k];
        }
      }
  });
  return out;
}

Tensor group_weighted_sum(const Tensor& w, const Tensor& h) {
  require_2d(w, "group_weighted_sum");
  require_2d(h, "group_weighted_sum");
  const std::size_t b = w.dim(0), groups = w.dim(1);
  if (h.dim(0) != b * groups) {
    throw DimensionError("group_weighted_sum: weights " +
                         shape_string(w.shape()) + " incompatible with " +
                         shape_string(h.shape()));
  }
  const std::size_t d = h.dim(1);
  Tensor out = B::make({b, d});
  auto o = B::data(out);
  const auto wd = w.data();
  const auto hd = h.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const double wv = wd[i * groups + gi];
      const std::size_t row = (i * groups + gi) * d;
      for (std::size_t k = 0; k < d; ++k) o[i * d + k] += wv * hd[row + k];
    }
  B::finish(out, {&w, &h}, [w, h, b, d, groups](std::span<const double> g) {
    const auto wd = w.data();
    const auto hd = h.data();
    std::span<double> gw = w.tracked() ? B::grad(w) : std::span<double>{};
    std::span<double> gh = h.tracked() ? B::grad(h) : std::span<double>{};
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t row = (i * groups + gi) * d;
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          acc += g[i * d + k] * hd[row + k];
          if (!gh.empty()) gh[row + k] += wd[i * groups + gi] * g[i * d + k];
        }
        if (!gw.empty()) gw[i * groups + gi] += acc;
      }
  });
  return out;
}

// --- Loss -------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_2d(logits, "cross_entropy");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (b == 0) throw ValidationError("cross_entropy: empty batch");
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits.shape()));
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) +
                            " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(c) + ")");
    }
  }
  std::vector<double> probs(b * c);
  kernels::softmax_rows(logits.data(), probs, b, c);
  const auto ld = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = ld.data() + i * c;
    // The max entry contributes exactly 1; log1p keeps small losses exact.
    const std::size_t arg =
        static_cast<std::size_t>(std::max_element(row, row + c) - row);
    const double mx = row[arg];
    double rest = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (j != arg) rest += std::exp(row[j] - mx);
    total += -(row[labels[i]] - mx - std::log1p(rest));
  }
  Tensor out = B::make({});
  B::data(out)[0] = total / static_cast<double>(b);
  std::vector<int> lab(labels.begin(), labels.end());
  B::finish(out, {&logits},
            [logits, probs = std::move(probs), lab = std::move(lab), b,
             c](std::span<const double> g) {
              const double f = backward_fault("cross_entropy");
              auto gl = B::grad(logits);
              const double s = f * g[0] / static_cast<double>(b);
              for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                  const double y = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                  gl[i * c + j] += s * (probs[i * c + j] - y);
                }
            });
  return out;
}

}  // namespace dbgl::diff
