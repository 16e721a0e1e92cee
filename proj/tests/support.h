#pragma once

// Generators and slow reference computations shared by the tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "seqgen/tensor.h"
#include "seqgen/tokens.h"

namespace seqgen::testing {

using Rng = std::mt19937_64;

inline Tensor random_tensor(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> data(shape_numel(shape));
  for (float& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

inline size_t uniform(Rng& rng, size_t lo, size_t hi) {  // inclusive
  return std::uniform_int_distribution<size_t>(lo, hi)(rng);
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  float m = 0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

// Replicates each leading row `times` times: [B, ...] -> [B*times, ...].
inline Tensor repeat_rows(const Tensor& x, size_t times) {
  std::vector<size_t> idx;
  for (size_t r = 0; r < x.dim(0); ++r) {
    for (size_t m = 0; m < times; ++m) idx.push_back(r);
  }
  return gather_rows(x, idx);
}

// Plain triple loop: [P, D] x [D, E].
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, size_t p,
                                        size_t d, size_t e) {
  std::vector<double> out(p * e, 0.0);
  for (size_t i = 0; i < p; ++i) {
    for (size_t j = 0; j < e; ++j) {
      for (size_t k = 0; k < d; ++k) out[i * e + j] += a[i * d + k] * b[k * e + j];
    }
  }
  return out;
}

// Single-query attention in double precision over keys [L, D] and values
// [L, D]; keys at positions >= valid are ignored.
inline std::vector<double> naive_attention(const std::vector<double>& q, const std::vector<double>& keys,
                                           const std::vector<double>& values, size_t len, size_t d, size_t valid) {
  std::vector<double> s(len, 0.0);
  double mx = -INFINITY;
  for (size_t j = 0; j < valid; ++j) {
    for (size_t k = 0; k < d; ++k) s[j] += q[k] * keys[j * d + k];
    s[j] /= std::sqrt(static_cast<double>(d));
    mx = std::max(mx, s[j]);
  }
  double z = 0;
  for (size_t j = 0; j < valid; ++j) z += std::exp(s[j] - mx);
  std::vector<double> out(d, 0.0);
  for (size_t j = 0; j < valid; ++j) {
    const double p = std::exp(s[j] - mx) / z;
    for (size_t k = 0; k < d; ++k) out[k] += p * values[j * d + k];
  }
  return out;
}

inline std::vector<double> to_double(std::span<const float> x) { return {x.begin(), x.end()}; }

// Every n-gram of `seq` occurs at most once.
inline bool has_repeated_ngram(const std::vector<TokenId>& seq, size_t n) {
  if (n == 0 || seq.size() < n) return false;
  for (size_t i = 0; i + n <= seq.size(); ++i) {
    for (size_t j = i + 1; j + n <= seq.size(); ++j) {
      if (std::equal(seq.begin() + i, seq.begin() + i + n, seq.begin() + j)) return true;
    }
  }
  return false;
}

}  // namespace seqgen::testing
