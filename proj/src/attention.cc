#include "seqgen/attention.h"

#include <cmath>
#include <string>

#include "seqgen/errors.h"

namespace seqgen {

namespace {

float inv_sqrt_dim(const AttentionWeights& w) {
  return 1.0f / std::sqrt(static_cast<float>(w.wq.dim(0)));
}

void require_step_input(const char* op, const Tensor& y, const AttentionWeights& w) {
  if (y.rank() != 3 || y.dim(1) != 1 || y.dim(2) != w.wq.dim(0)) {
    throw DimensionError(std::string(op) + ": expected input [rows, 1, " + std::to_string(w.wq.dim(0)) +
                         "], got " + shape_str(y.shape()));
  }
}

void require_cache_pair(const char* op, const Tensor& k, const Tensor& v, size_t rows, size_t d) {
  if (k.rank() != 3 || k.shape() != v.shape() || k.dim(0) != rows || k.dim(2) != d) {
    throw StateError(std::string(op) + ": cache K " + shape_str(k.shape()) + " / V " + shape_str(v.shape()) +
                     " inconsistent with " + std::to_string(rows) + " rows of width " + std::to_string(d));
  }
}

void require_shared_pair(const char* op, const Tensor& k, const Tensor& v, size_t d) {
  if (k.rank() != 4 || k.shape() != v.shape() || k.dim(1) != 1 || k.dim(3) != d) {
    throw StateError(std::string(op) + ": shared cache K " + shape_str(k.shape()) + " / V " +
                     shape_str(v.shape()) + " is not [B, 1, N, " + std::to_string(d) + "]");
  }
}

size_t beams_per_batch(const char* op, size_t rows, size_t batch) {
  if (batch == 0 || rows % batch != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) + " rows do not split into " +
                         std::to_string(batch) + " batch groups");
  }
  return rows / batch;
}

AttnStepTrace finish(Tensor attn_w, const AttentionWeights& w, const KeyPadding& padding) {
  Tensor scaled = scale(attn_w, inv_sqrt_dim(w));
  mask_padded_keys(scaled, padding);
  return AttnStepTrace{std::move(attn_w), softmax_rows(scaled), Tensor()};
}

}  // namespace

std::string_view to_string(CacheMode mode) {
  switch (mode) {
    case CacheMode::kNone:
      return "none";
    case CacheMode::kBaseline:
      return "baseline";
    case CacheMode::kDedup:
      return "dedup";
  }
  return "?";
}

CacheMode parse_cache_mode(std::string_view name) {
  if (name == "none") return CacheMode::kNone;
  if (name == "baseline") return CacheMode::kBaseline;
  if (name == "dedup") return CacheMode::kDedup;
  throw std::invalid_argument("unknown cache mode '" + std::string(name) + "'");
}

void mask_padded_keys(Tensor& scores, const KeyPadding& padding) {
  if (!padding.active() || scores.empty()) return;
  const size_t width = scores.shape().back();
  if (padding.width > width) {
    throw DimensionError("mask_padded_keys: padded segment " + std::to_string(padding.width) + " wider than " +
                         shape_str(scores.shape()));
  }
  const size_t rows = scores.numel() / width;
  if (rows != padding.valid.size() * padding.beam) {
    throw DimensionError("mask_padded_keys: " + std::to_string(rows) + " score rows for " +
                         std::to_string(padding.valid.size()) + " x " + std::to_string(padding.beam) + " queries");
  }
  auto data = scores.data();
  for (size_t r = 0; r < rows; ++r) {
    const size_t valid = padding.valid[r / padding.beam];
    for (size_t j = valid; j < padding.width; ++j) data[r * width + j] = kBannedScore;
  }
}

std::pair<Tensor, Tensor> build_prefix_cache(const Tensor& x_hidden, const AttentionWeights& w) {
  if (x_hidden.rank() != 4 || x_hidden.dim(1) != 1) {
    throw DimensionError("build_prefix_cache: expected [B, 1, N, D], got " + shape_str(x_hidden.shape()));
  }
  return {matmul(x_hidden, w.wk), matmul(x_hidden, w.wv)};
}

AttnStepTrace self_attn_step_baseline(const Tensor& y_hidden, BaselineSelfCache& cache, const AttentionWeights& w,
                                      const KeyPadding& padding) {
  require_step_input("self_attn_step_baseline", y_hidden, w);
  require_cache_pair("self_attn_step_baseline", cache.k, cache.v, y_hidden.dim(0), y_hidden.dim(2));

  const Tensor q = matmul(y_hidden, w.wq);
  cache.k = concat_time(cache.k, matmul(y_hidden, w.wk));
  cache.v = concat_time(cache.v, matmul(y_hidden, w.wv));

  AttnStepTrace trace = finish(matmul_transposed(q, cache.k), w, padding);
  trace.attn_out = batched_matmul(trace.attn_prob, cache.v);
  return trace;
}

AttnStepTrace self_attn_step_dedup(const Tensor& y_hidden, DedupSelfCache& cache, const AttentionWeights& w,
                                   const KeyPadding& padding) {
  require_step_input("self_attn_step_dedup", y_hidden, w);
  const size_t rows = y_hidden.dim(0), d = y_hidden.dim(2);
  require_shared_pair("self_attn_step_dedup", cache.prefix_k, cache.prefix_v, d);
  require_cache_pair("self_attn_step_dedup", cache.gen_k, cache.gen_v, rows, d);
  const size_t batch = cache.prefix_k.dim(0);
  const size_t beam = beams_per_batch("self_attn_step_dedup", rows, batch);
  const size_t n = cache.prefix_k.dim(2);

  const Tensor q = matmul(y_hidden, w.wq);
  cache.gen_k = concat_time(cache.gen_k, matmul(y_hidden, w.wk));
  cache.gen_v = concat_time(cache.gen_v, matmul(y_hidden, w.wv));

  Tensor w0 = beam_broadcast_qk(q.reshaped({batch, beam, 1, d}), cache.prefix_k).reshaped({rows, 1, n});
  Tensor w1 = matmul_transposed(q, cache.gen_k);
  AttnStepTrace trace = finish(concat_last(w0, w1), w, padding);

  auto [p0, p1] = split_last(trace.attn_prob, n);
  Tensor out0 = beam_broadcast_pv(std::move(p0).reshaped({batch, beam, 1, n}), cache.prefix_v).reshaped({rows, 1, d});
  Tensor out1 = batched_matmul(p1, cache.gen_v);
  trace.attn_out = add(out0, out1);
  return trace;
}

EncDecCache build_encdec_cache(const Tensor& s, const AttentionWeights& w, CacheMode mode, size_t beam) {
  if (s.rank() != 4 || s.dim(1) != 1) {
    throw DimensionError("build_encdec_cache: expected [B, 1, N, D], got " + shape_str(s.shape()));
  }
  Tensor k = matmul(s, w.wk);
  Tensor v = matmul(s, w.wv);
  switch (mode) {
    case CacheMode::kDedup:
      return DedupEncDecCache{std::move(k), std::move(v)};
    case CacheMode::kBaseline: {
      const size_t batch = s.dim(0), n = s.dim(2), d = s.dim(3);
      std::vector<size_t> rows;
      rows.reserve(batch * beam);
      for (size_t b = 0; b < batch; ++b) rows.insert(rows.end(), beam, b);
      return BaselineEncDecCache{gather_rows(std::move(k).reshaped({batch, n, d}), rows),
                                 gather_rows(std::move(v).reshaped({batch, n, d}), rows)};
    }
    case CacheMode::kNone:
      break;
  }
  throw std::invalid_argument("build_encdec_cache: mode 'none' keeps no cache");
}

AttnStepTrace encdec_attn_step_baseline(const Tensor& q_in, const BaselineEncDecCache& cache,
                                        const AttentionWeights& w, const KeyPadding& padding) {
  require_step_input("encdec_attn_step_baseline", q_in, w);
  require_cache_pair("encdec_attn_step_baseline", cache.k, cache.v, q_in.dim(0), q_in.dim(2));
  const Tensor q = matmul(q_in, w.wq);
  AttnStepTrace trace = finish(matmul_transposed(q, cache.k), w, padding);
  trace.attn_out = batched_matmul(trace.attn_prob, cache.v);
  return trace;
}

AttnStepTrace encdec_attn_step_dedup(const Tensor& q_in, const DedupEncDecCache& cache, const AttentionWeights& w,
                                     const KeyPadding& padding) {
  require_step_input("encdec_attn_step_dedup", q_in, w);
  const size_t rows = q_in.dim(0), d = q_in.dim(2);
  require_shared_pair("encdec_attn_step_dedup", cache.k, cache.v, d);
  const size_t batch = cache.k.dim(0);
  const size_t beam = beams_per_batch("encdec_attn_step_dedup", rows, batch);
  const size_t n = cache.k.dim(2);

  const Tensor q = matmul(q_in, w.wq).reshaped({batch, beam, 1, d});
  AttnStepTrace trace = finish(beam_broadcast_qk(q, cache.k).reshaped({rows, 1, n}), w, padding);
  trace.attn_out =
      beam_broadcast_pv(trace.attn_prob.reshaped({batch, beam, 1, n}), cache.v).reshaped({rows, 1, d});
  return trace;
}

CacheSet::CacheSet(CacheMode mode, size_t batch, size_t beam, size_t layers, SourceContext source)
    : mode_(mode), batch_(batch), beam_(beam), layers_(layers), source_(std::move(source)),
      history_(batch * beam) {
  if (beam == 0) throw std::invalid_argument("CacheSet: beam size must be >= 1");
}

void CacheSet::record_step(std::span<const TokenId> consumed) {
  if (consumed.size() != rows()) {
    throw DimensionError("CacheSet::record_step: " + std::to_string(consumed.size()) + " tokens for " +
                         std::to_string(rows()) + " rows");
  }
  for (size_t r = 0; r < rows(); ++r) history_[r].push_back(consumed[r]);
  ++steps_;
}

size_t CacheSet::element_count() const {
  size_t total = 0;
  for (const LayerCache& layer : layers_) {
    if (const auto* c = std::get_if<BaselineSelfCache>(&layer.self)) total += c->k.numel() + c->v.numel();
    if (const auto* c = std::get_if<DedupSelfCache>(&layer.self)) {
      total += c->prefix_k.numel() + c->prefix_v.numel() + c->gen_k.numel() + c->gen_v.numel();
    }
    if (const auto* c = std::get_if<BaselineEncDecCache>(&layer.encdec)) total += c->k.numel() + c->v.numel();
    if (const auto* c = std::get_if<DedupEncDecCache>(&layer.encdec)) total += c->k.numel() + c->v.numel();
  }
  return total;
}

void reorder_beams(CacheSet& caches, std::span<const size_t> beam_indices) {
  const size_t rows = caches.rows();
  if (beam_indices.size() != rows) {
    throw DimensionError("reorder_beams: " + std::to_string(beam_indices.size()) + " indices for " +
                         std::to_string(rows) + " rows");
  }
  for (size_t i = 0; i < rows; ++i) {
    if (beam_indices[i] >= rows || beam_indices[i] / caches.beam_ != i / caches.beam_) {
      throw IndexError("reorder_beams: row " + std::to_string(i) + " cannot take source row " +
                       std::to_string(beam_indices[i]) + " from another batch group");
    }
  }

  ReorderStats& stats = caches.stats_;
  ++stats.calls;
  auto gather = [&](Tensor& t, size_t& counter) {
    t = gather_rows(t, beam_indices);
    ++counter;
    stats.gathered_elements += t.numel();
  };

  for (LayerCache& layer : caches.layers_) {
    if (auto* c = std::get_if<BaselineSelfCache>(&layer.self)) {
      gather(c->k, stats.self_ops);
      gather(c->v, stats.self_ops);
    } else if (auto* c = std::get_if<DedupSelfCache>(&layer.self)) {
      gather(c->gen_k, stats.self_ops);
      gather(c->gen_v, stats.self_ops);
    }
    if (auto* c = std::get_if<BaselineEncDecCache>(&layer.encdec)) {
      gather(c->k, stats.encdec_ops);
      gather(c->v, stats.encdec_ops);
    }
  }

  std::vector<std::vector<TokenId>> history(rows);
  for (size_t i = 0; i < rows; ++i) history[i] = caches.history_[beam_indices[i]];
  caches.history_ = std::move(history);
}

}  // namespace seqgen
