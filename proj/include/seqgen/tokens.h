#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace seqgen {

using TokenId = int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kFirstWordId = 4;

// Row-major [rows, cols] matrix of token ids with a per-row valid length.
// Entries past a row's valid length are padding.
class TokenMatrix {
 public:
  TokenMatrix() = default;
  TokenMatrix(size_t rows, size_t cols);  // pad filled, valid lengths = cols

  // Right-pads ragged rows to the longest one.
  static TokenMatrix from_rows(const std::vector<std::vector<TokenId>>& rows);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }

  std::span<TokenId> row(size_t r) { return std::span<TokenId>(ids_).subspan(r * cols_, cols_); }
  std::span<const TokenId> row(size_t r) const { return std::span<const TokenId>(ids_).subspan(r * cols_, cols_); }
  // The valid prefix of row r.
  std::span<const TokenId> valid_row(size_t r) const { return row(r).first(valid_length_[r]); }

  TokenId at(size_t r, size_t c) const { return ids_[r * cols_ + c]; }
  TokenId& at(size_t r, size_t c) { return ids_[r * cols_ + c]; }

  size_t valid_length(size_t r) const { return valid_length_[r]; }
  void set_valid_length(size_t r, size_t len);
  std::span<const size_t> valid_lengths() const { return valid_length_; }

  std::span<const TokenId> ids() const { return ids_; }

  friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<TokenId> ids_;
  std::vector<size_t> valid_length_;
};

}  // namespace seqgen
