#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace seqgen {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& shape);
size_t shape_numel(const Shape& shape);

// Score written for a token that must never be selected. Softmax maps it to
// probability exactly zero.
inline constexpr float kBannedScore = std::numeric_limits<float>::lowest();

// Dense row-major float32 array. Values are plain data: copying a Tensor copies
// its buffer, and a const Tensor is safe to read from any thread.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero filled
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t axis) const;
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  // Contiguous view of row `i` along the leading axis.
  std::span<float> row(size_t i);
  std::span<const float> row(size_t i) const;

  float& at(std::initializer_list<size_t> index);
  float at(std::initializer_list<size_t> index) const;

  // Same data, new extents. Element count must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  size_t offset(std::initializer_list<size_t> index) const;

  Shape shape_;
  std::vector<float> data_;
};

// [.., P, D] x [D, E] -> [.., P, E]
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched products over a shared leading row axis R:
//   [R, P, D] x [R, L, D]^T -> [R, P, L]
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
//   [R, P, L] x [R, L, D] -> [R, P, D]
Tensor batched_matmul(const Tensor& a, const Tensor& b);

// Softmax along the last axis with max subtraction. Differences at or below
// -80 after subtraction are flushed to zero, so kBannedScore entries get
// probability 0.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// [R, t1, D] ++ [R, t2, D] -> [R, t1 + t2, D]
Tensor concat_time(const Tensor& a, const Tensor& b);

// Concatenation along the last axis: [.., a] ++ [.., b] -> [.., a + b].
Tensor concat_last(const Tensor& a, const Tensor& b);
// Inverse of concat_last: columns [0, at) and [at, L).
std::pair<Tensor, Tensor> split_last(const Tensor& x, size_t at);

// Row i of the result is row idx[i] of x. Duplicates allowed.
Tensor gather_rows(const Tensor& x, std::span<const size_t> idx);

// [B, M, 1, D] . [B, 1, N, D]^T -> [B, M, 1, N]; the shared operand is read
// once per batch row for every beam, never replicated.
Tensor beam_broadcast_qk(const Tensor& q, const Tensor& k_shared);
// [B, M, 1, N] . [B, 1, N, D] -> [B, M, 1, D]
Tensor beam_broadcast_pv(const Tensor& p, const Tensor& v_shared);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor relu(const Tensor& x);

// FNV-1a over the raw bytes of shape and data.
uint64_t content_hash(const Tensor& x);

}  // namespace seqgen
