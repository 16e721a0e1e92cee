#include "seqgen/ngram.h"

#include <algorithm>
#include <atomic>
#include <map>
#include <string>
#include <thread>

#include "seqgen/errors.h"

namespace seqgen {

namespace {

void check_inputs(const TokenMatrix& tokens, const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(0) != tokens.rows()) {
    throw DimensionError("block_repeated_ngrams: scores " + shape_str(scores.shape()) + " for " +
                         std::to_string(tokens.rows()) + " token rows");
  }
  const size_t vocab = scores.dim(1);
  for (size_t r = 0; r < tokens.rows(); ++r) {
    for (TokenId id : tokens.valid_row(r)) {
      if (id < 0 || static_cast<size_t>(id) >= vocab) {
        throw IndexError("block_repeated_ngrams: token id " + std::to_string(id) + " in row " + std::to_string(r) +
                         " outside vocabulary of " + std::to_string(vocab));
      }
    }
  }
}

// Number of complete n-gram windows in a row of length len (0 if none).
size_t window_count(size_t len, size_t n) {
  return len + 1 >= n + 1 ? len + 1 - n : 0;
}

void ban_row(std::vector<TokenId>& banned, std::span<float> row_scores) {
  std::sort(banned.begin(), banned.end());
  banned.erase(std::unique(banned.begin(), banned.end()), banned.end());
  for (TokenId id : banned) row_scores[static_cast<size_t>(id)] = kBannedScore;
}

}  // namespace

std::string_view to_string(NgramKernel kernel) {
  return kernel == NgramKernel::kReference ? "reference" : "parallel";
}

NgramKernel parse_ngram_kernel(std::string_view name) {
  if (name == "reference") return NgramKernel::kReference;
  if (name == "parallel") return NgramKernel::kParallel;
  throw std::invalid_argument("unknown n-gram kernel '" + std::string(name) + "'");
}

size_t BanSet::total() const {
  size_t n = 0;
  for (const auto& r : rows) n += r.size();
  return n;
}

BanSet block_repeated_ngrams_reference(const TokenMatrix& tokens, Tensor& scores, size_t n) {
  check_inputs(tokens, scores);
  BanSet bans;
  bans.rows.resize(tokens.rows());
  if (n == 0) return bans;

  for (size_t r = 0; r < tokens.rows(); ++r) {
    const auto row = tokens.valid_row(r);
    const size_t len = row.size();
    if (len + 1 < n) continue;

    std::map<std::vector<TokenId>, std::vector<TokenId>> followers;
    for (size_t c = 0; c + n <= len; ++c) {
      followers[std::vector<TokenId>(row.begin() + c, row.begin() + c + n - 1)].push_back(row[c + n - 1]);
    }
    const std::vector<TokenId> suffix(row.end() - (n - 1), row.end());
    auto it = followers.find(suffix);
    if (it == followers.end()) continue;
    bans.rows[r] = it->second;
    ban_row(bans.rows[r], scores.row(r));
  }
  return bans;
}

BanSet block_repeated_ngrams_parallel(const TokenMatrix& tokens, Tensor& scores, size_t n, size_t threads) {
  check_inputs(tokens, scores);
  BanSet bans;
  bans.rows.resize(tokens.rows());
  if (n == 0) return bans;

  std::atomic<size_t> next_row{0};
  auto worker = [&] {
    std::vector<TokenId> shm;
    for (size_t r = next_row++; r < tokens.rows(); r = next_row++) {
      const auto row = tokens.valid_row(r);
      const size_t windows = window_count(row.size(), n);
      if (windows == 0) continue;
      shm.assign(row.begin(), row.end());
      const size_t start = row.size() + 1 - n;

      std::vector<TokenId>& banned = bans.rows[r];
      for (size_t col = 0; col < windows; ++col) {
        size_t i = 0;
        while (i + 1 < n && shm[col + i] == shm[start + i]) ++i;
        if (i + 1 == n) banned.push_back(shm[col + n - 1]);
      }
      ban_row(banned, scores.row(r));
    }
  };

  const size_t workers = std::min(std::max<size_t>(threads, 1), std::max<size_t>(tokens.rows(), 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (size_t i = 1; i < workers; ++i) pool.emplace_back(worker);
    worker();
  }
  return bans;
}

NgramResult ban_repeated_ngrams_reference(const TokenMatrix& tokens, const Tensor& scores, size_t n) {
  NgramResult result{scores, {}};
  result.bans = block_repeated_ngrams_reference(tokens, result.scores, n);
  return result;
}

NgramResult ban_repeated_ngrams_parallel(const TokenMatrix& tokens, const Tensor& scores, size_t n,
                                         size_t threads) {
  NgramResult result{scores, {}};
  result.bans = block_repeated_ngrams_parallel(tokens, result.scores, n, threads);
  return result;
}

}  // namespace seqgen
