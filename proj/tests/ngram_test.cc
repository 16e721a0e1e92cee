#include <algorithm>
#include <set>

#include "doctest.h"
#include "seqgen/errors.h"
#include "seqgen/ngram.h"
#include "support.h"

using namespace seqgen;
using namespace seqgen::testing;

namespace {

// Direct transcription of the blocking rule, one row and one window at a time.
BanSet brute_force_bans(const TokenMatrix& tokens, size_t n) {
  BanSet bans;
  bans.rows.resize(tokens.rows());
  if (n == 0) return bans;
  for (size_t r = 0; r < tokens.rows(); ++r) {
    const auto row = tokens.valid_row(r);
    const size_t len = row.size();
    std::set<TokenId> banned;
    if (len + 1 >= n) {
      for (size_t c = 0; c + n <= len; ++c) {
        bool match = true;
        for (size_t k = 0; k + 1 < n; ++k) match = match && row[c + k] == row[len - (n - 1) + k];
        if (match) banned.insert(row[c + n - 1]);
      }
    }
    bans.rows[r].assign(banned.begin(), banned.end());
  }
  return bans;
}

TokenMatrix random_tokens(Rng& rng, size_t rows, size_t max_len, size_t vocab) {
  std::vector<std::vector<TokenId>> data(rows);
  // Small alphabets make repeats likely.
  const size_t alphabet = uniform(rng, 1, vocab);
  for (auto& row : data) {
    const size_t len = uniform(rng, 0, max_len);
    for (size_t i = 0; i < len; ++i) row.push_back(static_cast<TokenId>(uniform(rng, 0, alphabet - 1)));
  }
  TokenMatrix m = TokenMatrix::from_rows(data);
  if (m.cols() == 0) m = TokenMatrix(rows, 0);
  for (size_t r = 0; r < rows; ++r) m.set_valid_length(r, data[r].size());
  return m;
}

BanSet single(const std::vector<TokenId>& row, size_t n, size_t vocab, NgramKernel kernel) {
  Tensor scores({1, vocab});
  TokenMatrix m = TokenMatrix::from_rows({row});
  return kernel == NgramKernel::kReference ? ban_repeated_ngrams_reference(m, scores, n).bans
                                           : ban_repeated_ngrams_parallel(m, scores, n).bans;
}

}  // namespace

TEST_CASE("hand worked blocking examples") {
  for (NgramKernel k : {NgramKernel::kReference, NgramKernel::kParallel}) {
    CAPTURE(to_string(k));
    CHECK(single({1, 2, 3, 1, 2}, 3, 8, k).rows[0] == std::vector<TokenId>{3});
    CHECK(single({7, 7, 7, 7}, 2, 8, k).rows[0] == std::vector<TokenId>{7});
    CHECK(single({1, 2}, 4, 8, k).rows[0].empty());        // n > L + 1
    CHECK(single({1, 2}, 3, 8, k).rows[0].empty());        // L = n - 1: no window
    CHECK(single({5, 1, 5, 3}, 1, 8, k).rows[0] == std::vector<TokenId>{1, 3, 5});
    CHECK(single({5, 1, 5, 3}, 0, 8, k).rows[0].empty());
    CHECK(single({4, 5, 4, 6, 4}, 2, 8, k).rows[0] == std::vector<TokenId>{5, 6});
  }
}

TEST_CASE("banned entries are exactly the changed ones") {
  Rng rng(51);
  Tensor scores = random_tensor(rng, {2, 6});
  TokenMatrix tokens = TokenMatrix::from_rows({{1, 2, 1, 2, 1}, {3, 3, 4}});
  auto [out, bans] = ban_repeated_ngrams_reference(tokens, scores, 2);
  CHECK(bans.rows[0] == std::vector<TokenId>{2});
  CHECK(bans.rows[1].empty());
  CHECK(bans.total() == 1);
  for (size_t r = 0; r < 2; ++r) {
    for (size_t v = 0; v < 6; ++v) {
      const bool banned = std::binary_search(bans.rows[r].begin(), bans.rows[r].end(), static_cast<TokenId>(v));
      if (banned) {
        CHECK(out.at({r, v}) == kBannedScore);
      } else {
        CHECK(out.at({r, v}) == scores.at({r, v}));
      }
    }
  }
}

TEST_CASE("kernels agree with the brute force rule on fuzzed inputs") {
  Rng rng(52);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t rows = uniform(rng, 1, 32), max_len = uniform(rng, 0, 64), vocab = uniform(rng, 1, 50);
    const size_t n = uniform(rng, 0, 6);
    TokenMatrix tokens = random_tokens(rng, rows, max_len, vocab);
    Tensor scores = random_tensor(rng, {rows, vocab});
    const NgramResult ref = ban_repeated_ngrams_reference(tokens, scores, n);
    const NgramResult par = ban_repeated_ngrams_parallel(tokens, scores, n, uniform(rng, 1, 4));
    const BanSet oracle = brute_force_bans(tokens, n);
    CHECK(ref.bans == oracle);
    CHECK(par.bans == oracle);
    CHECK(par.scores == ref.scores);
  }
}

TEST_CASE("blocking is idempotent and leaves an unbanned argmax") {
  Rng rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t rows = uniform(rng, 1, 8), vocab = uniform(rng, 2, 20), n = uniform(rng, 1, 4);
    TokenMatrix tokens = random_tokens(rng, rows, 30, vocab);
    Tensor scores = random_tensor(rng, {rows, vocab});
    Tensor once = scores;
    block_repeated_ngrams_parallel(tokens, once, n);
    Tensor twice = once;
    const BanSet again = block_repeated_ngrams_reference(tokens, twice, n);
    CHECK(twice == once);
    CHECK(again == brute_force_bans(tokens, n));
    for (size_t r = 0; r < rows; ++r) {
      auto row = once.row(r);
      const size_t best = std::max_element(row.begin(), row.end()) - row.begin();
      if (again.rows[r].size() < vocab) CHECK(row[best] != kBannedScore);
    }
  }
}

TEST_CASE("thread count does not change results") {
  Rng rng(54);
  TokenMatrix tokens = random_tokens(rng, 64, 128, 6);
  Tensor scores = random_tensor(rng, {64, 6});
  const NgramResult one = ban_repeated_ngrams_parallel(tokens, scores, 3, 1);
  for (size_t threads : {2, 3, 8}) {
    const NgramResult many = ban_repeated_ngrams_parallel(tokens, scores, 3, threads);
    CHECK(many.bans == one.bans);
    CHECK(many.scores == one.scores);
  }
}

TEST_CASE("input validation") {
  TokenMatrix tokens = TokenMatrix::from_rows({{1, 2}, {3, 4}});
  Tensor wrong_rows({3, 8});
  CHECK_THROWS_AS(ban_repeated_ngrams_reference(tokens, wrong_rows, 2), DimensionError);
  CHECK_THROWS_AS(ban_repeated_ngrams_parallel(tokens, wrong_rows, 2), DimensionError);
  Tensor narrow({2, 4});
  CHECK_THROWS_AS(ban_repeated_ngrams_reference(tokens, narrow, 2), IndexError);
  CHECK_THROWS_AS(ban_repeated_ngrams_parallel(tokens, narrow, 2), IndexError);
  CHECK(parse_ngram_kernel("parallel") == NgramKernel::kParallel);
  CHECK_THROWS_AS(parse_ngram_kernel("gpu"), std::invalid_argument);
}
