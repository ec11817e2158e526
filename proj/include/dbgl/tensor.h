#pragma once

#include <cstdint>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dbgl::diff {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool tracked = false;
};

// Dense row-major float64 array with reference semantics. Copies of a Tensor
// share storage; use `detached_copy` for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool tracked = false);
  static Tensor full(Shape shape, double value, bool tracked = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool tracked = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Direct write access; only for initialization and optimizer updates
  // between forward passes.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  bool tracked() const { return node_->tracked; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  // Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor detached_copy() const;
  const Node* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;

  friend class Tape;
  friend struct OpBuilder;
};

// Records executed operations while alive. Tapes nest: constructing a Tape
// makes it the active tape of the current thread until it is destroyed.
// Operations run with no active tape (or on untracked inputs only) compute
// values without recording anything.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::size_t size() const { return entries_.size(); }

  // Reverse-mode sweep from a scalar loss recorded on this tape. Gradients
  // of leaves accumulate (sum over uses and over repeated calls); gradients
  // of intermediate results are reset at the start of each sweep.
  void backward(const Tensor& loss);

  void record(const Tensor& output, BackwardFn fn);

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
};

// Running hash of the branch every piecewise op takes (the sign pattern of
// each ReLU input) on this thread. Finite-difference checks compare it across
// perturbations to tell whether a step crossed a kink.
void reset_branch_signature();
std::uint64_t branch_signature();
void mix_branch_signature(std::uint64_t value);

// Scales the backward rule of the named op by `factor`; used by the
// gradient checker's negative control. An empty name disables it.
void set_backward_fault(std::string_view op, double factor);
double backward_fault(std::string_view op);

// --- Linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T

// Soft table read: out[i,:] = sum_j softmax_j(query[i,:] . keys[j,:]) values[j,:]
// for query [m,d], keys [n,d], values [n,e]. Same result as
// matmul(softmax(matmul_nt(query, keys), 1), values), but the [m,n] weights
// are built a block of rows at a time and recomputed in backward, so memory
// stays O((m + n) (d + e)). Column sums of the weights are added to
// `weight_sums` (resized to n) when given.
Tensor attend_rows(const Tensor& query, const Tensor& keys, const Tensor& values,
                   std::vector<double>* weight_sums = nullptr);

// --- Elementwise ------------------------------------------------------------
// The second operand may broadcast: same shape, a row [1,n] or [n], a column
// [m,1], or a single element. add/mul also accept the broadcast on the left.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
// min(x, hi); the gradient is 0 where the cap is active.
Tensor clamp_max(const Tensor& x, double hi);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor square(const Tensor& x);
// ln(1 + e^x), overflow-safe.
Tensor softplus(const Tensor& x);

// --- Reductions and normalization -------------------------------------------

Tensor sum(const Tensor& x);   // scalar
Tensor mean(const Tensor& x);  // scalar
// Sum along `axis` of a 2-D tensor, keeping the reduced dimension.
Tensor sum(const Tensor& x, std::size_t axis);
// Euclidean norm along `axis` of a 2-D tensor, keeping the dimension.
Tensor l2_norm(const Tensor& x, std::size_t axis);
// Softmax along `axis` (1-D: axis 0; 2-D: axis 0 or 1).
Tensor softmax(const Tensor& x, std::size_t axis);

inline constexpr double kCosineEps = 1e-12;

// Row-wise cosine similarity of two [m,d] tensors -> [m,1].
Tensor cosine_sim(const Tensor& a, const Tensor& b);
// x / (||x|| + eps) row-wise.
Tensor normalize_rows(const Tensor& x, double eps = kCosineEps);

// --- Structural -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
// out[i, :] = x[index[i], :]
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
// out has `rows` rows; out[index[i], :] += src[i, :]
Tensor index_add_rows(const Tensor& src, std::span<const std::size_t> index,
                      std::size_t rows);
// Copy of base with base[index[i], :] replaced by rows[i, :]. Indices must be
// distinct; untouched rows are copied bit-for-bit.
Tensor scatter_rows(const Tensor& base, std::span<const std::size_t> index,
                    const Tensor& rows);
// q [B,d], h [B*G, d] -> [B,G] with out[b,g] = q[b,:] . h[b*G+g,:]
Tensor group_dot(const Tensor& q, const Tensor& h);
// w [B,G], h [B*G, d] -> [B,d] with out[b,:] = sum_g w[b,g] h[b*G+g,:]
Tensor group_weighted_sum(const Tensor& w, const Tensor& h);

// --- Loss -------------------------------------------------------------------

// Mean negative log-likelihood of integer labels under row softmax.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace dbgl::diff
