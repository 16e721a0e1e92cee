#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "seqgen/tensor.h"
#include "seqgen/tokens.h"

namespace seqgen {

enum class NgramKernel { kReference, kParallel };

std::string_view to_string(NgramKernel kernel);
NgramKernel parse_ngram_kernel(std::string_view name);

// Banned token ids per row, sorted ascending without duplicates.
struct BanSet {
  std::vector<std::vector<TokenId>> rows;

  size_t total() const;
  friend bool operator==(const BanSet&, const BanSet&) = default;
};

// Blocks every token that would complete an n-gram already present in the
// valid part of its row: for each window start c in [0, L - n + 1) whose
// first n - 1 tokens equal the row's last n - 1 tokens, the token at c + n - 1
// gets kBannedScore. n = 0 disables blocking. `scores` is [rows, V] and is
// modified in place; nothing else is touched.
//
// Reference: per row, indexes every (n-1)-gram to the tokens that followed
// it, then looks up the current suffix.
BanSet block_repeated_ngrams_reference(const TokenMatrix& tokens, Tensor& scores, size_t n);

// Data-parallel: one task group per row, one task per window start. A group
// stages its row into a local buffer once, then each window does its n - 1
// comparisons against the suffix. Groups are spread over `threads` workers;
// the result does not depend on the thread count.
BanSet block_repeated_ngrams_parallel(const TokenMatrix& tokens, Tensor& scores, size_t n, size_t threads = 1);

struct NgramResult {
  Tensor scores;
  BanSet bans;
};

NgramResult ban_repeated_ngrams_reference(const TokenMatrix& tokens, const Tensor& scores, size_t n);
NgramResult ban_repeated_ngrams_parallel(const TokenMatrix& tokens, const Tensor& scores, size_t n,
                                         size_t threads = 1);

}  // namespace seqgen
