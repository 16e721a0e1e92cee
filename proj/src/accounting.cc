#include "seqgen/accounting.h"

#include <stdexcept>

namespace seqgen {

void MemoryModelInput::validate() const {
  if (batch == 0 || beam == 0 || embed_dim == 0 || decoder_layers == 0) {
    throw std::invalid_argument("MemoryModelInput: batch, beam, embed_dim and decoder_layers must be positive");
  }
  if (bytes_per_element != 2 && bytes_per_element != 4) {
    throw std::invalid_argument("MemoryModelInput: bytes_per_element must be 2 or 4");
  }
}

uint64_t cache_bytes(const MemoryModelInput& in) {
  in.validate();
  const uint64_t b = in.batch, m = in.beam, n = in.source_len, t = in.output_len, d = in.embed_dim;
  uint64_t per_layer = 0;
  switch (in.mode) {
    case CacheMode::kNone:
      return 0;
    case CacheMode::kBaseline:
      per_layer = in.kind == ArchKind::kEncoderDecoder ? b * m * n * d + b * m * t * d : b * m * (n + t) * d;
      break;
    case CacheMode::kDedup:
      per_layer = b * n * d + b * m * t * d;
      break;
  }
  return in.decoder_layers * 2 * per_layer * in.bytes_per_element;
}

uint64_t concat_transient_bytes(const MemoryModelInput& in) {
  in.validate();
  if (in.mode == CacheMode::kNone) return 0;
  return 2 * (2 * in.batch * in.beam * in.embed_dim) * in.bytes_per_element;
}

uint64_t max_batch_under_budget(uint64_t budget_bytes, const MemoryModelInput& tmpl) {
  MemoryModelInput one = tmpl;
  one.batch = 1;
  const uint64_t per_sample = cache_bytes(one);
  if (per_sample == 0) {
    throw std::invalid_argument("max_batch_under_budget: configuration holds no cache, batch is unbounded");
  }
  return budget_bytes / per_sample;
}

}  // namespace seqgen
