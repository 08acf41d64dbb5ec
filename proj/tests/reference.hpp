#pragma once

// Slow f64 reference implementations used as oracles by the test suite.
// Everything here is written independently of the library kernels: plain
// loops, f64 end-to-end, no shared helpers, so agreement is meaningful.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "soupkit/tensor.hpp"

namespace ref {

struct Mat64 {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> data;

  Mat64() = default;
  Mat64(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::int64_t r, std::int64_t c) { return data[r * cols + c]; }
  double at(std::int64_t r, std::int64_t c) const { return data[r * cols + c]; }
};

inline Mat64 from_f32(const soupkit::DenseMat& m) {
  Mat64 out(m.rows(), m.cols());
  for (std::int64_t i = 0; i < m.size(); ++i) out.data[i] = m.data()[i];
  return out;
}

inline soupkit::DenseMat to_f32(const Mat64& m) {
  std::vector<float> d(m.data.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(m.data[i]);
  return soupkit::DenseMat(m.rows, m.cols, std::move(d));
}

inline Mat64 densify(const soupkit::CsrMat& a) {
  Mat64 out(a.rows(), a.cols());
  for (std::int64_t r = 0; r < a.rows(); ++r) {
    for (std::int64_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      out.at(r, a.col_idx()[k]) = a.vals()[k];
    }
  }
  return out;
}

inline Mat64 matmul(const Mat64& a, const Mat64& b) {
  Mat64 out(a.rows, b.cols);
  for (std::int64_t i = 0; i < a.rows; ++i) {
    for (std::int64_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

inline Mat64 add(const Mat64& a, const Mat64& b) {
  Mat64 out(a.rows, a.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

inline Mat64 mul(const Mat64& a, const Mat64& b) {
  Mat64 out(a.rows, a.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

inline Mat64 scale_add(const Mat64& acc, double s, const Mat64& m) {
  Mat64 out(acc.rows, acc.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = acc.data[i] + s * m.data[i];
  }
  return out;
}

inline Mat64 bias_add(const Mat64& x, const Mat64& bias) {
  Mat64 out(x.rows, x.cols);
  for (std::int64_t r = 0; r < x.rows; ++r) {
    for (std::int64_t c = 0; c < x.cols; ++c) {
      out.at(r, c) = x.at(r, c) + bias.at(0, c);
    }
  }
  return out;
}

inline Mat64 relu(const Mat64& x) {
  Mat64 out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  }
  return out;
}

inline Mat64 row_softmax(const Mat64& x) {
  Mat64 out(x.rows, x.cols);
  for (std::int64_t r = 0; r < x.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
    double denom = 0.0;
    for (std::int64_t c = 0; c < x.cols; ++c) denom += std::exp(x.at(r, c) - mx);
    for (std::int64_t c = 0; c < x.cols; ++c) {
      out.at(r, c) = std::exp(x.at(r, c) - mx) / denom;
    }
  }
  return out;
}

inline Mat64 col_softmax(const Mat64& x) {
  Mat64 out(x.rows, x.cols);
  for (std::int64_t c = 0; c < x.cols; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t r = 0; r < x.rows; ++r) mx = std::max(mx, x.at(r, c));
    double denom = 0.0;
    for (std::int64_t r = 0; r < x.rows; ++r) denom += std::exp(x.at(r, c) - mx);
    for (std::int64_t r = 0; r < x.rows; ++r) {
      out.at(r, c) = std::exp(x.at(r, c) - mx) / denom;
    }
  }
  return out;
}

inline double masked_cross_entropy(const Mat64& logits,
                                   const std::vector<std::uint32_t>& labels,
                                   const std::vector<std::uint8_t>& mask) {
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t r = 0; r < logits.rows; ++r) {
    if (!mask[r]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < logits.cols; ++c) mx = std::max(mx, logits.at(r, c));
    double denom = 0.0;
    for (std::int64_t c = 0; c < logits.cols; ++c) {
      denom += std::exp(logits.at(r, c) - mx);
    }
    total -= logits.at(r, labels[r]) - mx - std::log(denom);
    ++count;
  }
  return total / static_cast<double>(count);
}

inline double masked_accuracy(const Mat64& logits,
                              const std::vector<std::uint32_t>& labels,
                              const std::vector<std::uint8_t>& mask) {
  std::int64_t hit = 0, count = 0;
  for (std::int64_t r = 0; r < logits.rows; ++r) {
    if (!mask[r]) continue;
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < logits.cols; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    if (best == static_cast<std::int64_t>(labels[r])) ++hit;
    ++count;
  }
  return static_cast<double>(hit) / static_cast<double>(count);
}

/// Elementwise mean across matrices, f64 accumulation.
inline Mat64 mean(const std::vector<Mat64>& ms) {
  Mat64 out(ms.front().rows, ms.front().cols);
  for (const Mat64& m : ms) {
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += m.data[i];
  }
  for (double& x : out.data) x /= static_cast<double>(ms.size());
  return out;
}

/// Dense f64 GCN propagation operator: D^{-1/2} (A+I) D^{-1/2} with degrees
/// including the self-loop.
inline Mat64 gcn_norm64(const Mat64& adj) {
  const std::int64_t n = adj.rows;
  std::vector<double> deg(n, 1.0);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) deg[r] += adj.at(r, c);
  }
  Mat64 out(n, n);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) {
      const double entry = adj.at(r, c) + (r == c ? 1.0 : 0.0);
      out.at(r, c) = entry / std::sqrt(deg[r] * deg[c]);
    }
  }
  return out;
}

/// Dense f64 row-mean operator; neighborless rows are all zero.
inline Mat64 mean_norm64(const Mat64& adj) {
  const std::int64_t n = adj.rows;
  Mat64 out(n, n);
  for (std::int64_t r = 0; r < n; ++r) {
    double deg = 0.0;
    for (std::int64_t c = 0; c < n; ++c) deg += adj.at(r, c);
    if (deg == 0.0) continue;
    for (std::int64_t c = 0; c < n; ++c) out.at(r, c) = adj.at(r, c) / deg;
  }
  return out;
}

/// Dense f64 forward pass mirroring the library's layer structure. GCN
/// layers: params[l] = {W, b}; SAGE layers: {W_self, W_neigh, b}.
inline Mat64 forward64(bool gcn, const Mat64& adj, const Mat64& features,
                       const std::vector<std::vector<Mat64>>& params) {
  const Mat64 prop = gcn ? gcn_norm64(adj) : mean_norm64(adj);
  Mat64 h = features;
  for (std::size_t l = 0; l < params.size(); ++l) {
    Mat64 z;
    if (gcn) {
      z = bias_add(matmul(matmul(prop, h), params[l][0]), params[l][1]);
    } else {
      z = bias_add(add(matmul(h, params[l][0]),
                       matmul(matmul(prop, h), params[l][1])),
                   params[l][2]);
    }
    h = l + 1 < params.size() ? relu(z) : z;
  }
  return h;
}

inline double max_abs_diff(const soupkit::DenseMat& a, const Mat64& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - b.data[i]));
  }
  return worst;
}

inline double max_abs(const Mat64& m) {
  double worst = 0.0;
  for (double x : m.data) worst = std::max(worst, std::abs(x));
  return worst;
}

}  // namespace ref
