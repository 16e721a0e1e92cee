#pragma once

#include <cstddef>
#include <cstdint>

#include "seqgen/attention.h"
#include "seqgen/model.h"

namespace seqgen {

// Shape of a decoding workload for the analytic cache-size model.
struct MemoryModelInput {
  uint64_t batch = 1;           // B
  uint64_t beam = 1;            // M
  uint64_t source_len = 0;      // N, max input length
  uint64_t output_len = 0;      // T
  uint64_t embed_dim = 1;       // D
  uint64_t decoder_layers = 1;
  uint64_t bytes_per_element = 4;  // 2 or 4
  ArchKind kind = ArchKind::kEncoderDecoder;
  CacheMode mode = CacheMode::kBaseline;

  void validate() const;
};

// Cached key+value bytes at step T (caches only grow, so this is the peak):
//   encdec   baseline  layers * 2 * (B*M*N*D + B*M*T*D) * bytes
//   encdec   dedup     layers * 2 * (B*N*D   + B*M*T*D) * bytes
//   prefixlm baseline  layers * 2 * B*M*(N+T)*D * bytes
//   prefixlm dedup     layers * 2 * (B*N*D   + B*M*T*D) * bytes
//   none               0
uint64_t cache_bytes(const MemoryModelInput& input);

// Extra bytes held briefly while one layer's caches are re-allocated to
// append a step: two copies of the appended K/V slice (2 * B*M*D each).
uint64_t concat_transient_bytes(const MemoryModelInput& input);

// Largest batch size whose cache_bytes fits in `budget_bytes`. The template's
// batch field is ignored.
uint64_t max_batch_under_budget(uint64_t budget_bytes, const MemoryModelInput& tmpl);

}  // namespace seqgen
