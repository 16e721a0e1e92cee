#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "seqgen/tensor.h"
#include "seqgen/tokens.h"

namespace seqgen {

enum class CacheMode { kNone, kBaseline, kDedup };

std::string_view to_string(CacheMode mode);
CacheMode parse_cache_mode(std::string_view name);

// Single-head projections, each [D, D].
struct AttentionWeights {
  Tensor wq;
  Tensor wk;
  Tensor wv;
  Tensor wo;
  friend bool operator==(const AttentionWeights&, const AttentionWeights&) = default;
};

// Key positions [valid[b], width) at the front of the key axis are padding for
// every query row of batch element b. Rows are grouped `beam` per element.
struct KeyPadding {
  std::vector<size_t> valid;
  size_t width = 0;
  size_t beam = 1;

  bool active() const { return !valid.empty(); }
};

// Writes kBannedScore over padded key columns of a score tensor whose leading
// axes flatten to B * beam rows (one query per row).
void mask_padded_keys(Tensor& scores, const KeyPadding& padding);

// Self-attention cache with the prefix replicated per beam: [B*M, L, D].
struct BaselineSelfCache {
  Tensor k;
  Tensor v;
};

// Self-attention cache split into a beam-shared prefix part [B, 1, N, D]
// written once, and a per-beam generated part [B*M, t, D].
struct DedupSelfCache {
  Tensor prefix_k;
  Tensor prefix_v;
  Tensor gen_k;
  Tensor gen_v;
};

// Encoder-decoder keys/values replicated per beam: [B*M, N, D].
struct BaselineEncDecCache {
  Tensor k;
  Tensor v;
};

// Encoder-decoder keys/values stored once per batch element: [B, 1, N, D].
struct DedupEncDecCache {
  Tensor k;
  Tensor v;
};

struct AttnStepTrace {
  Tensor attn_w;     // raw scores [B*M, 1, L]
  Tensor attn_prob;  // softmax of scaled, masked scores [B*M, 1, L]
  Tensor attn_out;   // [B*M, 1, D], before the output projection
};

// Projects beam-free prefix states [B, 1, N, D] into shared keys and values.
std::pair<Tensor, Tensor> build_prefix_cache(const Tensor& x_hidden, const AttentionWeights& w);

// Appends the new key/value to the cache and attends over every cached position.
AttnStepTrace self_attn_step_baseline(const Tensor& y_hidden, BaselineSelfCache& cache, const AttentionWeights& w,
                                      const KeyPadding& padding = {});

// Same result as the baseline step, computed against the split cache: shared
// prefix scores via the beam broadcast contraction, generated scores via the
// ordinary product, one softmax across the joined row, and the two weighted
// value sums added back together. Only gen_k/gen_v are modified.
AttnStepTrace self_attn_step_dedup(const Tensor& y_hidden, DedupSelfCache& cache, const AttentionWeights& w,
                                   const KeyPadding& padding = {});

using EncDecCache = std::variant<BaselineEncDecCache, DedupEncDecCache>;

// S is the encoder output viewed as [B, 1, N, D]. Baseline replicates each
// batch row `beam` times; dedup keeps the singleton beam axis.
EncDecCache build_encdec_cache(const Tensor& s, const AttentionWeights& w, CacheMode mode, size_t beam);

AttnStepTrace encdec_attn_step_baseline(const Tensor& q_in, const BaselineEncDecCache& cache,
                                        const AttentionWeights& w, const KeyPadding& padding = {});
AttnStepTrace encdec_attn_step_dedup(const Tensor& q_in, const DedupEncDecCache& cache, const AttentionWeights& w,
                                     const KeyPadding& padding = {});

struct ReorderStats {
  size_t self_ops = 0;     // tensors gathered from self-attention caches
  size_t encdec_ops = 0;   // tensors gathered from encoder-decoder caches
  size_t gathered_elements = 0;
  size_t calls = 0;

  size_t total_ops() const { return self_ops + encdec_ops; }
};

// Source-side context a decoding session reads: the encoder output for the
// encoder-decoder kind, the prefix token ids for the prefix-lm kind.
struct SourceContext {
  Tensor encoder_hidden;  // [B, N, D] or empty
  TokenMatrix prefix;     // [B, N] or empty
  std::vector<size_t> lengths;
};

struct LayerCache {
  std::variant<std::monostate, BaselineSelfCache, DedupSelfCache> self;
  std::variant<std::monostate, BaselineEncDecCache, DedupEncDecCache> encdec;
};

// Per-session attention state for every decoder layer. All layers share one
// mode. Rows are grouped in contiguous blocks of `beam` per batch element.
class CacheSet {
 public:
  CacheSet(CacheMode mode, size_t batch, size_t beam, size_t layers, SourceContext source);

  CacheMode mode() const { return mode_; }
  size_t batch() const { return batch_; }
  size_t beam() const { return beam_; }
  size_t rows() const { return batch_ * beam_; }
  size_t num_layers() const { return layers_.size(); }

  LayerCache& layer(size_t i) { return layers_.at(i); }
  const LayerCache& layer(size_t i) const { return layers_.at(i); }

  const SourceContext& source() const { return source_; }

  // Tokens consumed so far per row (bos first). Reordered along with the caches.
  const std::vector<std::vector<TokenId>>& history() const { return history_; }
  size_t steps() const { return steps_; }
  void record_step(std::span<const TokenId> consumed);

  const ReorderStats& reorder_stats() const { return stats_; }
  size_t reorder_op_count() const { return stats_.total_ops(); }

  // Live cached keys and values across all layers.
  size_t element_count() const;

  friend void reorder_beams(CacheSet& caches, std::span<const size_t> beam_indices);

 private:
  CacheMode mode_;
  size_t batch_;
  size_t beam_;
  std::vector<LayerCache> layers_;
  SourceContext source_;
  std::vector<std::vector<TokenId>> history_;
  size_t steps_ = 0;
  ReorderStats stats_;
};

// Points every row at its surviving source row. Baseline gathers every cached
// tensor; dedup gathers only the per-beam generated keys/values; none only
// moves the token history. Each gathered tensor counts as one reorder op,
// whether or not its contents change.
void reorder_beams(CacheSet& caches, std::span<const size_t> beam_indices);

}  // namespace seqgen
