#include "seqgen/tokens.h"

#include <algorithm>
#include <string>

#include "seqgen/errors.h"

namespace seqgen {

TokenMatrix::TokenMatrix(size_t rows, size_t cols)
    : rows_(rows), cols_(cols), ids_(rows * cols, kPadId), valid_length_(rows, cols) {}

TokenMatrix TokenMatrix::from_rows(const std::vector<std::vector<TokenId>>& rows) {
  size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  TokenMatrix m(rows.size(), cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    m.valid_length_[i] = rows[i].size();
  }
  return m;
}

void TokenMatrix::set_valid_length(size_t r, size_t len) {
  if (len > cols_) {
    throw IndexError("TokenMatrix: valid length " + std::to_string(len) + " exceeds " + std::to_string(cols_));
  }
  valid_length_[r] = len;
}

}  // namespace seqgen
