#include "soupkit/tensor.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <utility>

namespace soupkit {

// ---------------------------------------------------------------------------
// Allocation tracking
// ---------------------------------------------------------------------------

namespace {
std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
}  // namespace

std::int64_t tracked_bytes() { return g_live_bytes.load(std::memory_order_relaxed); }
std::int64_t peak_tracked_bytes() { return g_peak_bytes.load(std::memory_order_relaxed); }

void reset_peak_bytes() {
  g_peak_bytes.store(g_live_bytes.load(std::memory_order_relaxed),
                     std::memory_order_relaxed);
}

namespace detail {

void track_alloc(std::int64_t bytes) {
  const std::int64_t live =
      g_live_bytes.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::int64_t peak = g_peak_bytes.load(std::memory_order_relaxed);
  while (live > peak &&
         !g_peak_bytes.compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
  }
}

void track_free(std::int64_t bytes) {
  g_live_bytes.fetch_sub(bytes, std::memory_order_relaxed);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DenseMat
// ---------------------------------------------------------------------------

DenseMat::DenseMat(std::int64_t rows, std::int64_t cols)
    : rows_(rows), cols_(cols) {
  require(rows >= 0 && cols >= 0, "DenseMat: negative shape");
  data_.assign(static_cast<std::size_t>(rows * cols), 0.0f);
  tracked_ = static_cast<std::int64_t>(data_.size() * sizeof(float));
  detail::track_alloc(tracked_);
}

DenseMat::DenseMat(std::int64_t rows, std::int64_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(rows >= 0 && cols >= 0, "DenseMat: negative shape");
  require(static_cast<std::int64_t>(data_.size()) == rows * cols,
          "DenseMat: data size does not match shape");
  tracked_ = static_cast<std::int64_t>(data_.size() * sizeof(float));
  detail::track_alloc(tracked_);
}

DenseMat::~DenseMat() { release_(); }

void DenseMat::release_() {
  if (tracked_ != 0) {
    detail::track_free(tracked_);
    tracked_ = 0;
  }
}

DenseMat::DenseMat(const DenseMat& other)
    : rows_(other.rows_), cols_(other.cols_), data_(other.data_) {
  tracked_ = static_cast<std::int64_t>(data_.size() * sizeof(float));
  detail::track_alloc(tracked_);
}

DenseMat& DenseMat::operator=(const DenseMat& other) {
  if (this == &other) return *this;
  release_();
  rows_ = other.rows_;
  cols_ = other.cols_;
  data_ = other.data_;
  tracked_ = static_cast<std::int64_t>(data_.size() * sizeof(float));
  detail::track_alloc(tracked_);
  return *this;
}

DenseMat::DenseMat(DenseMat&& other) noexcept
    : rows_(other.rows_),
      cols_(other.cols_),
      data_(std::move(other.data_)),
      tracked_(other.tracked_) {
  other.rows_ = 0;
  other.cols_ = 0;
  other.tracked_ = 0;
}

DenseMat& DenseMat::operator=(DenseMat&& other) noexcept {
  if (this == &other) return *this;
  release_();
  rows_ = other.rows_;
  cols_ = other.cols_;
  data_ = std::move(other.data_);
  tracked_ = other.tracked_;
  other.rows_ = 0;
  other.cols_ = 0;
  other.tracked_ = 0;
  return *this;
}

void DenseMat::fill(float v) {
  for (float& x : data_) x = v;
}

void DenseMat::check_finite(const char* what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      fail(std::string(what) + ": non-finite value at flat index " +
           std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// CsrMat
// ---------------------------------------------------------------------------

CsrMat::CsrMat(std::int64_t rows, std::int64_t cols,
               std::vector<std::int64_t> row_ptr, std::vector<std::int64_t> col_idx,
               std::vector<float> vals)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      vals_(std::move(vals)) {
  validate_();
  tracked_ = static_cast<std::int64_t>(row_ptr_.size() * sizeof(std::int64_t) +
                                       col_idx_.size() * sizeof(std::int64_t) +
                                       vals_.size() * sizeof(float));
  detail::track_alloc(tracked_);
}

void CsrMat::validate_() const {
  require(rows_ >= 0 && cols_ >= 0, "CsrMat: negative shape");
  require(static_cast<std::int64_t>(row_ptr_.size()) == rows_ + 1,
          "CsrMat: row_ptr size must be rows + 1");
  require(row_ptr_.front() == 0, "CsrMat: row_ptr must start at 0");
  require(row_ptr_.back() == static_cast<std::int64_t>(col_idx_.size()),
          "CsrMat: row_ptr must end at nnz");
  require(col_idx_.size() == vals_.size(), "CsrMat: col_idx/vals size mismatch");
  for (std::int64_t r = 0; r < rows_; ++r) {
    require(row_ptr_[r] <= row_ptr_[r + 1], "CsrMat: row_ptr not nondecreasing");
    for (std::int64_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      require(col_idx_[k] >= 0 && col_idx_[k] < cols_,
              "CsrMat: column index out of range");
      if (k > row_ptr_[r]) {
        require(col_idx_[k - 1] < col_idx_[k],
                "CsrMat: col_idx not strictly increasing within row");
      }
    }
  }
}

CsrMat::~CsrMat() { release_(); }

void CsrMat::release_() {
  if (tracked_ != 0) {
    detail::track_free(tracked_);
    tracked_ = 0;
  }
}

CsrMat::CsrMat(const CsrMat& other)
    : rows_(other.rows_),
      cols_(other.cols_),
      row_ptr_(other.row_ptr_),
      col_idx_(other.col_idx_),
      vals_(other.vals_),
      tracked_(other.tracked_) {
  detail::track_alloc(tracked_);
}

CsrMat& CsrMat::operator=(const CsrMat& other) {
  if (this == &other) return *this;
  release_();
  rows_ = other.rows_;
  cols_ = other.cols_;
  row_ptr_ = other.row_ptr_;
  col_idx_ = other.col_idx_;
  vals_ = other.vals_;
  tracked_ = other.tracked_;
  detail::track_alloc(tracked_);
  return *this;
}

CsrMat::CsrMat(CsrMat&& other) noexcept
    : rows_(other.rows_),
      cols_(other.cols_),
      row_ptr_(std::move(other.row_ptr_)),
      col_idx_(std::move(other.col_idx_)),
      vals_(std::move(other.vals_)),
      tracked_(other.tracked_) {
  other.rows_ = 0;
  other.cols_ = 0;
  other.tracked_ = 0;
}

CsrMat& CsrMat::operator=(CsrMat&& other) noexcept {
  if (this == &other) return *this;
  release_();
  rows_ = other.rows_;
  cols_ = other.cols_;
  row_ptr_ = std::move(other.row_ptr_);
  col_idx_ = std::move(other.col_idx_);
  vals_ = std::move(other.vals_);
  tracked_ = other.tracked_;
  other.rows_ = 0;
  other.cols_ = 0;
  other.tracked_ = 0;
  return *this;
}

// ---------------------------------------------------------------------------
// Eager kernels
// ---------------------------------------------------------------------------

DenseMat spmm(const CsrMat& a, const DenseMat& b) {
  require(a.cols() == b.rows(), "spmm: inner dimensions disagree");
  DenseMat out(a.rows(), b.cols());
  const auto& rp = a.row_ptr();
  const auto& ci = a.col_idx();
  const auto& av = a.vals();
  const std::int64_t bc = b.cols();
  for (std::int64_t r = 0; r < a.rows(); ++r) {
    for (std::int64_t c = 0; c < bc; ++c) {
      double acc = 0.0;
      for (std::int64_t k = rp[r]; k < rp[r + 1]; ++k) {
        acc += static_cast<double>(av[k]) * static_cast<double>(b.at(ci[k], c));
      }
      out.at(r, c) = static_cast<float>(acc);
    }
  }
  return out;
}

DenseMat matmul(const DenseMat& a, const DenseMat& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  DenseMat out(a.rows(), b.cols());
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t) {
        acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b.at(t, j));
      }
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

DenseMat scale_add(const DenseMat& acc, float s, const DenseMat& m) {
  require(acc.same_shape(m), "scale_add: shape mismatch");
  DenseMat out(acc.rows(), acc.cols());
  const std::int64_t n = acc.size();
  for (std::int64_t i = 0; i < n; ++i) {
    out.data()[i] = static_cast<float>(static_cast<double>(acc.data()[i]) +
                                       static_cast<double>(s) *
                                           static_cast<double>(m.data()[i]));
  }
  return out;
}

DenseMat add(const DenseMat& a, const DenseMat& b) {
  require(a.same_shape(b), "add: shape mismatch");
  DenseMat out(a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    out.data()[i] = static_cast<float>(static_cast<double>(a.data()[i]) +
                                       static_cast<double>(b.data()[i]));
  }
  return out;
}

DenseMat mul(const DenseMat& a, const DenseMat& b) {
  require(a.same_shape(b), "mul: shape mismatch");
  DenseMat out(a.rows(), a.cols());
  for (std::int64_t i = 0; i < a.size(); ++i) {
    out.data()[i] = static_cast<float>(static_cast<double>(a.data()[i]) *
                                       static_cast<double>(b.data()[i]));
  }
  return out;
}

DenseMat bias_add(const DenseMat& x, const DenseMat& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(),
          "bias_add: bias must be 1 x cols");
  DenseMat out(x.rows(), x.cols());
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    for (std::int64_t c = 0; c < x.cols(); ++c) {
      out.at(r, c) = static_cast<float>(static_cast<double>(x.at(r, c)) +
                                        static_cast<double>(bias.at(0, c)));
    }
  }
  return out;
}

DenseMat relu(const DenseMat& x) {
  DenseMat out(x.rows(), x.cols());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    out.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
  }
  return out;
}

DenseMat row_softmax(const DenseMat& x) {
  DenseMat out(x.rows(), x.cols());
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < x.cols(); ++c) {
      mx = std::max(mx, static_cast<double>(x.at(r, c)));
    }
    double denom = 0.0;
    for (std::int64_t c = 0; c < x.cols(); ++c) {
      denom += std::exp(static_cast<double>(x.at(r, c)) - mx);
    }
    for (std::int64_t c = 0; c < x.cols(); ++c) {
      out.at(r, c) =
          static_cast<float>(std::exp(static_cast<double>(x.at(r, c)) - mx) / denom);
    }
  }
  return out;
}

DenseMat col_softmax(const DenseMat& x) {
  DenseMat out(x.rows(), x.cols());
  for (std::int64_t c = 0; c < x.cols(); ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t r = 0; r < x.rows(); ++r) {
      mx = std::max(mx, static_cast<double>(x.at(r, c)));
    }
    double denom = 0.0;
    for (std::int64_t r = 0; r < x.rows(); ++r) {
      denom += std::exp(static_cast<double>(x.at(r, c)) - mx);
    }
    for (std::int64_t r = 0; r < x.rows(); ++r) {
      out.at(r, c) =
          static_cast<float>(std::exp(static_cast<double>(x.at(r, c)) - mx) / denom);
    }
  }
  return out;
}

DenseMat dropout_mask(std::int64_t rows, std::int64_t cols, float p,
                      std::uint64_t seed) {
  require(p >= 0.0f && p < 1.0f, "dropout_mask: p must be in [0, 1)");
  DenseMat out(rows, cols);
  Rng rng(seed);
  const float scale = 1.0f / (1.0f - p);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out.data()[i] = rng.uniform() < static_cast<double>(p) ? 0.0f : scale;
  }
  return out;
}

double masked_cross_entropy(const DenseMat& logits,
                            const std::vector<std::uint32_t>& labels,
                            const std::vector<std::uint8_t>& mask) {
  require(static_cast<std::int64_t>(labels.size()) == logits.rows(),
          "masked_cross_entropy: labels size mismatch");
  require(static_cast<std::int64_t>(mask.size()) == logits.rows(),
          "masked_cross_entropy: mask size mismatch");
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    require(labels[r] < static_cast<std::uint32_t>(logits.cols()),
            "masked_cross_entropy: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < logits.cols(); ++c) {
      mx = std::max(mx, static_cast<double>(logits.at(r, c)));
    }
    double denom = 0.0;
    for (std::int64_t c = 0; c < logits.cols(); ++c) {
      denom += std::exp(static_cast<double>(logits.at(r, c)) - mx);
    }
    total -= static_cast<double>(logits.at(r, labels[r])) - mx - std::log(denom);
    ++count;
  }
  require(count > 0, "masked_cross_entropy: mask selects no rows");
  return total / static_cast<double>(count);
}

DenseMat weighted_sum(const std::vector<const DenseMat*>& members,
                      const DenseMat& weights, std::int64_t col) {
  require(!members.empty(), "weighted_sum: no members");
  require(weights.rows() == static_cast<std::int64_t>(members.size()),
          "weighted_sum: weights rows must equal member count");
  require(col >= 0 && col < weights.cols(), "weighted_sum: column out of range");
  const DenseMat& first = *members.front();
  for (const DenseMat* m : members) {
    require(m != nullptr && m->same_shape(first), "weighted_sum: shape mismatch");
  }
  DenseMat out(first.rows(), first.cols());
  for (std::int64_t j = 0; j < out.size(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      acc += static_cast<double>(weights.at(static_cast<std::int64_t>(i), col)) *
             static_cast<double>(members[i]->data()[j]);
    }
    out.data()[j] = static_cast<float>(acc);
  }
  return out;
}

void bias_add_inplace(DenseMat& x, const DenseMat& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(),
          "bias_add_inplace: bias must be 1 x cols");
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    for (std::int64_t c = 0; c < x.cols(); ++c) {
      x.at(r, c) = static_cast<float>(static_cast<double>(x.at(r, c)) +
                                      static_cast<double>(bias.at(0, c)));
    }
  }
}

void relu_inplace(DenseMat& x) {
  for (std::int64_t i = 0; i < x.size(); ++i) {
    x.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
  }
}

void add_inplace(DenseMat& x, const DenseMat& y) {
  require(x.same_shape(y), "add_inplace: shape mismatch");
  for (std::int64_t i = 0; i < x.size(); ++i) {
    x.data()[i] = static_cast<float>(static_cast<double>(x.data()[i]) +
                                     static_cast<double>(y.data()[i]));
  }
}

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

Var GradTape::push_(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void GradTape::check_var_(Var v, const char* who) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
          std::string(who) + ": var does not belong to this tape");
}

Var GradTape::leaf(const DenseMat* external, bool requires_grad) {
  require(external != nullptr, "leaf: null external matrix");
  Node n;
  n.op = Op::kLeaf;
  n.ext = external;
  n.requires_grad = requires_grad;
  return push_(std::move(n));
}

Var GradTape::leaf(DenseMat value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push_(std::move(n));
}

Var GradTape::spmm(const CsrMat* a, Var b) {
  check_var_(b, "spmm");
  require(a != nullptr, "spmm: null sparse matrix");
  Node n;
  n.op = Op::kSpmm;
  n.csr = a;
  n.b = b.id;
  n.requires_grad = nodes_[b.id].requires_grad;
  n.value = soupkit::spmm(*a, val_(b.id));
  n.value.check_finite("spmm");
  return push_(std::move(n));
}

Var GradTape::matmul(Var a, Var b) {
  check_var_(a, "matmul");
  check_var_(b, "matmul");
  Node n;
  n.op = Op::kMatmul;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  n.value = soupkit::matmul(val_(a.id), val_(b.id));
  n.value.check_finite("matmul");
  return push_(std::move(n));
}

Var GradTape::scale_add(Var acc, Var s, Var m) {
  check_var_(acc, "scale_add");
  check_var_(s, "scale_add");
  check_var_(m, "scale_add");
  const DenseMat& sv = val_(s.id);
  require(sv.rows() == 1 && sv.cols() == 1, "scale_add: scale must be 1x1");
  Node n;
  n.op = Op::kScaleAdd;
  n.a = acc.id;
  n.b = s.id;
  n.c = m.id;
  n.requires_grad = nodes_[acc.id].requires_grad || nodes_[s.id].requires_grad ||
                    nodes_[m.id].requires_grad;
  n.value = soupkit::scale_add(val_(acc.id), sv.at(0, 0), val_(m.id));
  n.value.check_finite("scale_add");
  return push_(std::move(n));
}

Var GradTape::add(Var a, Var b) {
  check_var_(a, "add");
  check_var_(b, "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  n.value = soupkit::add(val_(a.id), val_(b.id));
  n.value.check_finite("add");
  return push_(std::move(n));
}

Var GradTape::mul(Var a, Var b) {
  check_var_(a, "mul");
  check_var_(b, "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  n.value = soupkit::mul(val_(a.id), val_(b.id));
  n.value.check_finite("mul");
  return push_(std::move(n));
}

Var GradTape::bias_add(Var x, Var bias) {
  check_var_(x, "bias_add");
  check_var_(bias, "bias_add");
  Node n;
  n.op = Op::kBiasAdd;
  n.a = x.id;
  n.b = bias.id;
  n.requires_grad = nodes_[x.id].requires_grad || nodes_[bias.id].requires_grad;
  n.value = soupkit::bias_add(val_(x.id), val_(bias.id));
  n.value.check_finite("bias_add");
  return push_(std::move(n));
}

Var GradTape::relu(Var x) {
  check_var_(x, "relu");
  Node n;
  n.op = Op::kRelu;
  n.a = x.id;
  n.requires_grad = nodes_[x.id].requires_grad;
  n.value = soupkit::relu(val_(x.id));
  return push_(std::move(n));
}

Var GradTape::dropout(Var x, float p, std::uint64_t seed) {
  check_var_(x, "dropout");
  if (p == 0.0f) return x;
  Node n;
  n.op = Op::kDropout;
  n.a = x.id;
  n.requires_grad = nodes_[x.id].requires_grad;
  n.saved = dropout_mask(val_(x.id).rows(), val_(x.id).cols(), p, seed);
  n.value = soupkit::mul(val_(x.id), n.saved);
  return push_(std::move(n));
}

Var GradTape::row_softmax(Var x) {
  check_var_(x, "row_softmax");
  Node n;
  n.op = Op::kRowSoftmax;
  n.a = x.id;
  n.requires_grad = nodes_[x.id].requires_grad;
  n.value = soupkit::row_softmax(val_(x.id));
  n.value.check_finite("row_softmax");
  return push_(std::move(n));
}

Var GradTape::col_softmax(Var x) {
  check_var_(x, "col_softmax");
  Node n;
  n.op = Op::kColSoftmax;
  n.a = x.id;
  n.requires_grad = nodes_[x.id].requires_grad;
  n.value = soupkit::col_softmax(val_(x.id));
  n.value.check_finite("col_softmax");
  return push_(std::move(n));
}

Var GradTape::masked_cross_entropy(Var logits,
                                   const std::vector<std::uint32_t>* labels,
                                   const std::vector<std::uint8_t>* mask) {
  check_var_(logits, "masked_cross_entropy");
  require(labels != nullptr && mask != nullptr,
          "masked_cross_entropy: null labels or mask");
  Node n;
  n.op = Op::kMaskedCe;
  n.a = logits.id;
  n.labels = labels;
  n.mask = mask;
  n.requires_grad = nodes_[logits.id].requires_grad;
  const double loss = soupkit::masked_cross_entropy(val_(logits.id), *labels, *mask);
  require(std::isfinite(loss), "masked_cross_entropy: non-finite loss");
  n.value = DenseMat(1, 1, {static_cast<float>(loss)});
  return push_(std::move(n));
}

Var GradTape::weighted_sum(const std::vector<const DenseMat*>& members, Var weights,
                           std::int64_t col) {
  check_var_(weights, "weighted_sum");
  Node n;
  n.op = Op::kWeightedSum;
  n.a = weights.id;
  n.many = members;
  n.ec = col;
  n.requires_grad = nodes_[weights.id].requires_grad;
  n.value = soupkit::weighted_sum(members, val_(weights.id), col);
  n.value.check_finite("weighted_sum");
  return push_(std::move(n));
}

Var GradTape::sum(Var x) {
  check_var_(x, "sum");
  Node n;
  n.op = Op::kSum;
  n.a = x.id;
  n.requires_grad = nodes_[x.id].requires_grad;
  const DenseMat& xv = val_(x.id);
  double acc = 0.0;
  for (std::int64_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv.data()[i]);
  n.value = DenseMat(1, 1, {static_cast<float>(acc)});
  n.value.check_finite("sum");
  return push_(std::move(n));
}

Var GradTape::elem(Var x, std::int64_t r, std::int64_t c) {
  check_var_(x, "elem");
  const DenseMat& xv = val_(x.id);
  require(r >= 0 && r < xv.rows() && c >= 0 && c < xv.cols(),
          "elem: index out of range");
  Node n;
  n.op = Op::kElem;
  n.a = x.id;
  n.er = r;
  n.ec = c;
  n.requires_grad = nodes_[x.id].requires_grad;
  n.value = DenseMat(1, 1, {xv.at(r, c)});
  return push_(std::move(n));
}

const DenseMat& GradTape::value(Var v) const {
  check_var_(v, "value");
  return val_(v.id);
}

bool GradTape::requires_grad(Var v) const {
  check_var_(v, "requires_grad");
  return nodes_[v.id].requires_grad;
}

bool GradTape::has_grad(Var v) const {
  check_var_(v, "has_grad");
  return nodes_[v.id].grad_set;
}

const DenseMat& GradTape::grad(Var v) const {
  check_var_(v, "grad");
  require(nodes_[v.id].grad_set, "grad: no gradient recorded for this var");
  return nodes_[v.id].grad;
}

DenseMat& GradTape::grad_buf_(int id) {
  Node& n = nodes_[id];
  if (!n.grad_set) {
    const DenseMat& v = val_(id);
    n.grad = DenseMat(v.rows(), v.cols());
    n.grad_set = true;
  }
  return n.grad;
}

void GradTape::add_grad_(int id, const DenseMat& g) {
  DenseMat& buf = grad_buf_(id);
  require(buf.same_shape(g), "backward: gradient shape mismatch");
  for (std::int64_t i = 0; i < buf.size(); ++i) {
    buf.data()[i] = static_cast<float>(static_cast<double>(buf.data()[i]) +
                                       static_cast<double>(g.data()[i]));
  }
}

void GradTape::backward(Var loss) {
  check_var_(loss, "backward");
  require(!backward_done_, "backward: already run on this tape");
  const DenseMat& lv = val_(loss.id);
  require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be 1x1");
  require(nodes_[loss.id].requires_grad,
          "backward: loss does not depend on any grad-enabled leaf");
  backward_done_ = true;
  {
    DenseMat seed(1, 1, {1.0f});
    add_grad_(loss.id, seed);
  }

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_set || !n.requires_grad) continue;
    const DenseMat& up = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kSpmm: {
        // d/dB of A @ B: scatter up rows through A's pattern.
        if (!nodes_[n.b].requires_grad) break;
        DenseMat& db = grad_buf_(n.b);
        const auto& rp = n.csr->row_ptr();
        const auto& ci = n.csr->col_idx();
        const auto& av = n.csr->vals();
        const std::int64_t cols = up.cols();
        for (std::int64_t r = 0; r < n.csr->rows(); ++r) {
          for (std::int64_t k = rp[r]; k < rp[r + 1]; ++k) {
            const std::int64_t src = ci[k];
            const double a = static_cast<double>(av[k]);
            for (std::int64_t c = 0; c < cols; ++c) {
              db.at(src, c) = static_cast<float>(
                  static_cast<double>(db.at(src, c)) +
                  a * static_cast<double>(up.at(r, c)));
            }
          }
        }
        break;
      }
      case Op::kMatmul: {
        const DenseMat& a = val_(n.a);
        const DenseMat& b = val_(n.b);
        if (nodes_[n.a].requires_grad) {
          DenseMat& da = grad_buf_(n.a);
          for (std::int64_t i = 0; i < a.rows(); ++i) {
            for (std::int64_t k = 0; k < a.cols(); ++k) {
              double acc = 0.0;
              for (std::int64_t j = 0; j < b.cols(); ++j) {
                acc += static_cast<double>(up.at(i, j)) *
                       static_cast<double>(b.at(k, j));
              }
              da.at(i, k) = static_cast<float>(static_cast<double>(da.at(i, k)) + acc);
            }
          }
        }
        if (nodes_[n.b].requires_grad) {
          DenseMat& db = grad_buf_(n.b);
          for (std::int64_t k = 0; k < b.rows(); ++k) {
            for (std::int64_t j = 0; j < b.cols(); ++j) {
              double acc = 0.0;
              for (std::int64_t i = 0; i < a.rows(); ++i) {
                acc += static_cast<double>(a.at(i, k)) *
                       static_cast<double>(up.at(i, j));
              }
              db.at(k, j) = static_cast<float>(static_cast<double>(db.at(k, j)) + acc);
            }
          }
        }
        break;
      }
      case Op::kScaleAdd: {
        const DenseMat& m = val_(n.c);
        const double s = static_cast<double>(val_(n.b).at(0, 0));
        if (nodes_[n.a].requires_grad) add_grad_(n.a, up);
        if (nodes_[n.b].requires_grad) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < m.size(); ++i) {
            acc += static_cast<double>(up.data()[i]) *
                   static_cast<double>(m.data()[i]);
          }
          DenseMat& ds = grad_buf_(n.b);
          ds.at(0, 0) = static_cast<float>(static_cast<double>(ds.at(0, 0)) + acc);
        }
        if (nodes_[n.c].requires_grad) {
          DenseMat& dm = grad_buf_(n.c);
          for (std::int64_t i = 0; i < m.size(); ++i) {
            dm.data()[i] = static_cast<float>(static_cast<double>(dm.data()[i]) +
                                              s * static_cast<double>(up.data()[i]));
          }
        }
        break;
      }
      case Op::kAdd: {
        if (nodes_[n.a].requires_grad) add_grad_(n.a, up);
        if (nodes_[n.b].requires_grad) add_grad_(n.b, up);
        break;
      }
      case Op::kMul: {
        const DenseMat& a = val_(n.a);
        const DenseMat& b = val_(n.b);
        if (nodes_[n.a].requires_grad) {
          DenseMat& da = grad_buf_(n.a);
          for (std::int64_t i = 0; i < a.size(); ++i) {
            da.data()[i] = static_cast<float>(
                static_cast<double>(da.data()[i]) +
                static_cast<double>(up.data()[i]) * static_cast<double>(b.data()[i]));
          }
        }
        if (nodes_[n.b].requires_grad) {
          DenseMat& db = grad_buf_(n.b);
          for (std::int64_t i = 0; i < b.size(); ++i) {
            db.data()[i] = static_cast<float>(
                static_cast<double>(db.data()[i]) +
                static_cast<double>(up.data()[i]) * static_cast<double>(a.data()[i]));
          }
        }
        break;
      }
      case Op::kBiasAdd: {
        if (nodes_[n.a].requires_grad) add_grad_(n.a, up);
        if (nodes_[n.b].requires_grad) {
          DenseMat& db = grad_buf_(n.b);
          for (std::int64_t c = 0; c < up.cols(); ++c) {
            double acc = 0.0;
            for (std::int64_t r = 0; r < up.rows(); ++r) {
              acc += static_cast<double>(up.at(r, c));
            }
            db.at(0, c) = static_cast<float>(static_cast<double>(db.at(0, c)) + acc);
          }
        }
        break;
      }
      case Op::kRelu: {
        if (!nodes_[n.a].requires_grad) break;
        const DenseMat& x = val_(n.a);
        DenseMat& dx = grad_buf_(n.a);
        for (std::int64_t i = 0; i < x.size(); ++i) {
          if (x.data()[i] > 0.0f) {
            dx.data()[i] = static_cast<float>(static_cast<double>(dx.data()[i]) +
                                              static_cast<double>(up.data()[i]));
          }
        }
        break;
      }
      case Op::kDropout: {
        if (!nodes_[n.a].requires_grad) break;
        DenseMat& dx = grad_buf_(n.a);
        for (std::int64_t i = 0; i < dx.size(); ++i) {
          dx.data()[i] = static_cast<float>(
              static_cast<double>(dx.data()[i]) +
              static_cast<double>(up.data()[i]) * static_cast<double>(n.saved.data()[i]));
        }
        break;
      }
      case Op::kRowSoftmax: {
        if (!nodes_[n.a].requires_grad) break;
        const DenseMat& y = n.value;
        DenseMat& dx = grad_buf_(n.a);
        for (std::int64_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::int64_t c = 0; c < y.cols(); ++c) {
            dot += static_cast<double>(up.at(r, c)) * static_cast<double>(y.at(r, c));
          }
          for (std::int64_t c = 0; c < y.cols(); ++c) {
            dx.at(r, c) = static_cast<float>(
                static_cast<double>(dx.at(r, c)) +
                static_cast<double>(y.at(r, c)) *
                    (static_cast<double>(up.at(r, c)) - dot));
          }
        }
        break;
      }
      case Op::kColSoftmax: {
        if (!nodes_[n.a].requires_grad) break;
        const DenseMat& y = n.value;
        DenseMat& dx = grad_buf_(n.a);
        for (std::int64_t c = 0; c < y.cols(); ++c) {
          double dot = 0.0;
          for (std::int64_t r = 0; r < y.rows(); ++r) {
            dot += static_cast<double>(up.at(r, c)) * static_cast<double>(y.at(r, c));
          }
          for (std::int64_t r = 0; r < y.rows(); ++r) {
            dx.at(r, c) = static_cast<float>(
                static_cast<double>(dx.at(r, c)) +
                static_cast<double>(y.at(r, c)) *
                    (static_cast<double>(up.at(r, c)) - dot));
          }
        }
        break;
      }
      case Op::kMaskedCe: {
        if (!nodes_[n.a].requires_grad) break;
        const DenseMat& logits = val_(n.a);
        DenseMat& dl = grad_buf_(n.a);
        const double g = static_cast<double>(up.at(0, 0));
        std::int64_t count = 0;
        for (std::size_t r = 0; r < n.mask->size(); ++r) {
          if ((*n.mask)[r]) ++count;
        }
        for (std::int64_t r = 0; r < logits.rows(); ++r) {
          if (!(*n.mask)[r]) continue;
          double mx = -std::numeric_limits<double>::infinity();
          for (std::int64_t c = 0; c < logits.cols(); ++c) {
            mx = std::max(mx, static_cast<double>(logits.at(r, c)));
          }
          double denom = 0.0;
          for (std::int64_t c = 0; c < logits.cols(); ++c) {
            denom += std::exp(static_cast<double>(logits.at(r, c)) - mx);
          }
          for (std::int64_t c = 0; c < logits.cols(); ++c) {
            const double p =
                std::exp(static_cast<double>(logits.at(r, c)) - mx) / denom;
            const double ind = (*n.labels)[r] == static_cast<std::uint32_t>(c) ? 1.0 : 0.0;
            dl.at(r, c) = static_cast<float>(
                static_cast<double>(dl.at(r, c)) +
                g * (p - ind) / static_cast<double>(count));
          }
        }
        break;
      }
      case Op::kSum: {
        if (!nodes_[n.a].requires_grad) break;
        DenseMat& dx = grad_buf_(n.a);
        const double g = static_cast<double>(up.at(0, 0));
        for (std::int64_t i = 0; i < dx.size(); ++i) {
          dx.data()[i] = static_cast<float>(static_cast<double>(dx.data()[i]) + g);
        }
        break;
      }
      case Op::kElem: {
        if (!nodes_[n.a].requires_grad) break;
        DenseMat& dx = grad_buf_(n.a);
        dx.at(n.er, n.ec) = static_cast<float>(
            static_cast<double>(dx.at(n.er, n.ec)) + static_cast<double>(up.at(0, 0)));
        break;
      }
      case Op::kWeightedSum: {
        if (!nodes_[n.a].requires_grad) break;
        DenseMat& dw = grad_buf_(n.a);
        for (std::size_t i = 0; i < n.many.size(); ++i) {
          const DenseMat& m = *n.many[i];
          double acc = 0.0;
          for (std::int64_t j = 0; j < m.size(); ++j) {
            acc += static_cast<double>(up.data()[j]) *
                   static_cast<double>(m.data()[j]);
          }
          const auto r = static_cast<std::int64_t>(i);
          dw.at(r, n.ec) =
              static_cast<float>(static_cast<double>(dw.at(r, n.ec)) + acc);
        }
        break;
      }
    }

    // Interior gradients are consumed right here; only leaf gradients are
    // read after the sweep. Dropping them keeps the peak near forward size.
    if (n.op != Op::kLeaf) {
      n.grad = DenseMat();
      n.grad_set = false;
    }
  }
}

}  // namespace soupkit
