#pragma once

#include <cstdint>
#include <vector>

#include "soupkit/common.hpp"

namespace soupkit {

// ---------------------------------------------------------------------------
// Tracked allocation counter. Every DenseMat / CsrMat registers its payload
// bytes on construction and releases them on destruction; peak_tracked_bytes
// is the high-water mark since the last reset. This is the memory metric the
// bench harness reports.
// ---------------------------------------------------------------------------

std::int64_t tracked_bytes();
std::int64_t peak_tracked_bytes();
void reset_peak_bytes();

namespace detail {
void track_alloc(std::int64_t bytes);
void track_free(std::int64_t bytes);
}  // namespace detail

// ---------------------------------------------------------------------------
// DenseMat: row-major f32 matrix.
// ---------------------------------------------------------------------------

class DenseMat {
 public:
  DenseMat() = default;
  DenseMat(std::int64_t rows, std::int64_t cols);  // zero-filled
  DenseMat(std::int64_t rows, std::int64_t cols, std::vector<float> data);
  ~DenseMat();

  DenseMat(const DenseMat& other);
  DenseMat& operator=(const DenseMat& other);
  DenseMat(DenseMat&& other) noexcept;
  DenseMat& operator=(DenseMat&& other) noexcept;

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t size() const { return rows_ * cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& at(std::int64_t r, std::int64_t c) { return data_[r * cols_ + c]; }
  float at(std::int64_t r, std::int64_t c) const { return data_[r * cols_ + c]; }

  bool same_shape(const DenseMat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  void fill(float v);
  /// Throws Error if any entry is NaN or infinite; `what` names the producer.
  void check_finite(const char* what) const;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<float> data_;
  std::int64_t tracked_ = 0;

  void release_();
};

// ---------------------------------------------------------------------------
// CsrMat: compressed sparse row f32 matrix in canonical form (row_ptr
// nondecreasing, col_idx strictly increasing within each row).
// ---------------------------------------------------------------------------

class CsrMat {
 public:
  CsrMat() = default;
  CsrMat(std::int64_t rows, std::int64_t cols, std::vector<std::int64_t> row_ptr,
         std::vector<std::int64_t> col_idx, std::vector<float> vals);
  ~CsrMat();

  CsrMat(const CsrMat& other);
  CsrMat& operator=(const CsrMat& other);
  CsrMat(CsrMat&& other) noexcept;
  CsrMat& operator=(CsrMat&& other) noexcept;

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t nnz() const { return static_cast<std::int64_t>(col_idx_.size()); }

  const std::vector<std::int64_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::int64_t>& col_idx() const { return col_idx_; }
  const std::vector<float>& vals() const { return vals_; }
  std::vector<float>& vals() { return vals_; }

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<std::int64_t> row_ptr_;
  std::vector<std::int64_t> col_idx_;
  std::vector<float> vals_;
  std::int64_t tracked_ = 0;

  void validate_() const;
  void release_();
};

// ---------------------------------------------------------------------------
// Eager kernels. All inner reductions accumulate in f64 and emit f32. The
// tape calls these same functions, so eager and taped forwards are
// bit-identical.
// ---------------------------------------------------------------------------

DenseMat spmm(const CsrMat& a, const DenseMat& b);
DenseMat matmul(const DenseMat& a, const DenseMat& b);
/// acc + s * m, elementwise.
DenseMat scale_add(const DenseMat& acc, float s, const DenseMat& m);
DenseMat add(const DenseMat& a, const DenseMat& b);
DenseMat mul(const DenseMat& a, const DenseMat& b);
/// x + bias broadcast over rows; bias is 1 x cols.
DenseMat bias_add(const DenseMat& x, const DenseMat& bias);
DenseMat relu(const DenseMat& x);
DenseMat row_softmax(const DenseMat& x);
DenseMat col_softmax(const DenseMat& x);
/// Bernoulli keep-mask scaled by 1/(1-p); deterministic in (seed).
DenseMat dropout_mask(std::int64_t rows, std::int64_t cols, float p,
                      std::uint64_t seed);
/// Mean negative log-likelihood over rows where mask != 0 (f64 throughout).
double masked_cross_entropy(const DenseMat& logits,
                            const std::vector<std::uint32_t>& labels,
                            const std::vector<std::uint8_t>& mask);
/// Sum_i weights(i, col) * members[i], accumulated in f64 per entry.
DenseMat weighted_sum(const std::vector<const DenseMat*>& members,
                      const DenseMat& weights, std::int64_t col);

// In-place variants for allocation-lean eval paths; identical arithmetic to
// the pure kernels above.
void bias_add_inplace(DenseMat& x, const DenseMat& bias);
void relu_inplace(DenseMat& x);
void add_inplace(DenseMat& x, const DenseMat& y);

// ---------------------------------------------------------------------------
// GradTape: reverse-mode autodiff over the kernels above. Nodes are stored in
// a flat vector; Var is an index into it. Leaves can borrow external storage
// (no copy, caller keeps it alive) or own their value.
// ---------------------------------------------------------------------------

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Borrowed leaf: tape stores only the pointer.
  Var leaf(const DenseMat* external, bool requires_grad);
  /// Owned leaf.
  Var leaf(DenseMat value, bool requires_grad);

  Var spmm(const CsrMat* a, Var b);
  Var matmul(Var a, Var b);
  /// acc + s * m where s is a 1x1 var.
  Var scale_add(Var acc, Var s, Var m);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var bias_add(Var x, Var bias);
  Var relu(Var x);
  /// No-op when p == 0 (returns x unchanged).
  Var dropout(Var x, float p, std::uint64_t seed);
  Var row_softmax(Var x);
  Var col_softmax(Var x);
  /// 1x1 loss; labels/mask are borrowed, caller keeps them alive.
  Var masked_cross_entropy(Var logits, const std::vector<std::uint32_t>* labels,
                           const std::vector<std::uint8_t>* mask);
  Var sum(Var x);
  /// Extract a single entry as a 1x1 var.
  Var elem(Var x, std::int64_t r, std::int64_t c);
  /// Sum_i weights(i, col) * members[i]; members are borrowed and receive no
  /// gradient, weights does.
  Var weighted_sum(const std::vector<const DenseMat*>& members, Var weights,
                   std::int64_t col);

  const DenseMat& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Reverse sweep from a 1x1 loss var. Call once per tape.
  void backward(Var loss);

  bool has_grad(Var v) const;
  const DenseMat& grad(Var v) const;

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kSpmm,
    kMatmul,
    kScaleAdd,
    kAdd,
    kMul,
    kBiasAdd,
    kRelu,
    kDropout,
    kRowSoftmax,
    kColSoftmax,
    kMaskedCe,
    kSum,
    kElem,
    kWeightedSum,
  };

  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    int c = -1;
    const CsrMat* csr = nullptr;
    const DenseMat* ext = nullptr;
    const std::vector<std::uint32_t>* labels = nullptr;
    const std::vector<std::uint8_t>* mask = nullptr;
    std::vector<const DenseMat*> many;  // kWeightedSum members
    std::int64_t er = 0, ec = 0;
    DenseMat value;  // unused when ext is set
    DenseMat saved;  // dropout keep-mask
    bool requires_grad = false;
    DenseMat grad;
    bool grad_set = false;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  const DenseMat& val_(int id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.value;
  }
  Var push_(Node n);
  void check_var_(Var v, const char* who) const;
  DenseMat& grad_buf_(int id);
  void add_grad_(int id, const DenseMat& g);
};

}  // namespace soupkit
