#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "seqgen/attention.h"
#include "seqgen/tensor.h"
#include "seqgen/tokens.h"

namespace seqgen {

enum class ArchKind { kEncoderDecoder, kPrefixLm };

std::string_view to_string(ArchKind kind);
ArchKind parse_arch(std::string_view name);  // "encdec" | "prefixlm"

struct ModelConfig {
  ArchKind kind = ArchKind::kEncoderDecoder;
  size_t num_encoder_layers = 1;
  size_t num_decoder_layers = 1;
  size_t embed_dim = 8;
  size_t ffn_dim = 16;
  size_t vocab_size = 16;
  size_t max_positions = 64;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct FeedForwardWeights {
  Tensor w1;  // [D, ffn]
  Tensor w2;  // [ffn, D]
  friend bool operator==(const FeedForwardWeights&, const FeedForwardWeights&) = default;
};

struct EncoderLayerWeights {
  AttentionWeights self;
  FeedForwardWeights ffn;
  friend bool operator==(const EncoderLayerWeights&, const EncoderLayerWeights&) = default;
};

struct DecoderLayerWeights {
  AttentionWeights self;
  AttentionWeights cross;  // empty for the prefix-lm kind
  FeedForwardWeights ffn;
  friend bool operator==(const DecoderLayerWeights&, const DecoderLayerWeights&) = default;
};

struct Weights {
  std::vector<EncoderLayerWeights> encoder;
  std::vector<DecoderLayerWeights> decoder;
  Tensor embedding;  // [V, D]; output projection is its transpose
  Tensor positions;  // [max_positions, D], sinusoidal

  friend bool operator==(const Weights&, const Weights&) = default;
};

// Uniform in [-1/sqrt(D), 1/sqrt(D)] from a 64-bit Mersenne Twister seeded
// with `seed`; bit-identical across runs and platforms.
Weights init_weights(uint64_t seed, const ModelConfig& config);

struct EncoderOutput {
  Tensor hidden;  // [B, N, D]
  std::vector<size_t> source_lengths;
};

// Bidirectional encoder stack over right-padded source ids. Padded positions
// are masked out of attention.
EncoderOutput encode(const TokenMatrix& tokens, const Weights& weights, const ModelConfig& config);

// Prefix-lm: decoder-layer inputs of the prefix positions, one [B, N, D]
// tensor per layer, computed with bidirectional attention inside the prefix.
std::vector<Tensor> prefix_layer_inputs(const TokenMatrix& prefix, const Weights& weights, const ModelConfig& config);

// Source context for a decoding session: encodes for the encoder-decoder kind,
// keeps the prefix ids for the prefix-lm kind.
SourceContext make_source_context(const TokenMatrix& source, const Weights& weights, const ModelConfig& config);

// Empty per-layer caches of the requested mode for B * beam rows. Shared
// parts (prefix or encoder keys/values) are built here, once.
CacheSet begin_decoding(CacheMode mode, SourceContext source, size_t beam, const Weights& weights,
                        const ModelConfig& config);

// One decoding step: consumes the previous token of each row and returns
// logits [B*M, V] for the next one. `step` is 1-based and must equal
// caches.steps() + 1.
Tensor decode_step(std::span<const TokenId> y_prev, CacheSet& caches, const Weights& weights,
                   const ModelConfig& config, size_t step);

// Recomputes every position from scratch. `full_prefix` holds the consumed
// tokens per row ([B*M, t], bos first); rows map to batch element row / beam.
// Returns the logits for the last position, [B*M, V].
Tensor decode_step_nocache(const TokenMatrix& full_prefix, const SourceContext& source, size_t beam,
                           const Weights& weights, const ModelConfig& config);

// As decode_step_nocache, but logits for every consumed position: [B*M, t, V].
Tensor decode_all_positions(const TokenMatrix& full_prefix, const SourceContext& source, size_t beam,
                            const Weights& weights, const ModelConfig& config);

}  // namespace seqgen
