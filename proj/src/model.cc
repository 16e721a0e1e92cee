#include "seqgen/model.h"

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "seqgen/errors.h"

namespace seqgen {

namespace {

class UniformSource {
 public:
  UniformSource(uint64_t seed, float bound) : rng_(seed), bound_(bound) {}

  // 24 high bits of the engine output give an exact float in [0, 1).
  float next() {
    const float u = static_cast<float>(rng_() >> 40) * 0x1.0p-24f;
    return (2.0f * u - 1.0f) * bound_;
  }

  Tensor fill(Shape shape) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = next();
    return t;
  }

 private:
  std::mt19937_64 rng_;
  float bound_;
};

AttentionWeights draw_attention(UniformSource& src, size_t d) {
  AttentionWeights w;
  w.wq = src.fill({d, d});
  w.wk = src.fill({d, d});
  w.wv = src.fill({d, d});
  w.wo = src.fill({d, d});
  return w;
}

Tensor sinusoidal_positions(size_t max_positions, size_t d) {
  Tensor t({max_positions, d});
  for (size_t p = 0; p < max_positions; ++p) {
    for (size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(p) / freq;
      t.at({p, i}) = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return t;
}

// Token embedding plus position encoding for each (id, position) pair: [n, D].
Tensor embed(std::span<const TokenId> ids, std::span<const size_t> positions, const Weights& weights) {
  const size_t vocab = weights.embedding.dim(0);
  const size_t d = weights.embedding.dim(1);
  const size_t max_positions = weights.positions.dim(0);
  Tensor out({ids.size(), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= vocab) {
      throw IndexError("embed: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    if (positions[i] >= max_positions) {
      throw StateError("embed: position " + std::to_string(positions[i]) + " exceeds max_positions " +
                       std::to_string(max_positions));
    }
    auto e = weights.embedding.row(static_cast<size_t>(ids[i]));
    auto p = weights.positions.row(positions[i]);
    auto o = out.row(i);
    for (size_t x = 0; x < d; ++x) o[x] = e[x] + p[x];
  }
  return out;
}

Tensor feed_forward(const Tensor& h, const FeedForwardWeights& w) {
  return add(h, matmul(relu(matmul(h, w.w1)), w.w2));
}

using KeyPredicate = std::function<bool(size_t row, size_t query, size_t key)>;

// Full (non-incremental) attention of x [R, P, D] over keys/values from kv
// [R, L, D], masking pairs where `allowed` is false.
Tensor full_attention(const Tensor& x, const Tensor& kv, const AttentionWeights& w, const KeyPredicate& allowed) {
  if (x.dim(1) == 0 || kv.dim(1) == 0) return Tensor(x.shape());
  const Tensor q = matmul(x, w.wq);
  const Tensor k = matmul(kv, w.wk);
  const Tensor v = matmul(kv, w.wv);
  Tensor scores = scale(matmul_transposed(q, k), 1.0f / std::sqrt(static_cast<float>(w.wq.dim(0))));
  const size_t rows = scores.dim(0), p = scores.dim(1), l = scores.dim(2);
  auto data = scores.data();
  for (size_t r = 0; r < rows; ++r) {
    for (size_t i = 0; i < p; ++i) {
      for (size_t j = 0; j < l; ++j) {
        if (!allowed(r, i, j)) data[(r * p + i) * l + j] = kBannedScore;
      }
    }
  }
  return matmul(batched_matmul(softmax_rows(scores), v), w.wo);
}

// One bidirectional layer over right-padded rows [B, N, D].
Tensor bidirectional_layer(const Tensor& x, const AttentionWeights& attn, const FeedForwardWeights& ffn,
                           std::span<const size_t> lengths) {
  auto allowed = [lengths](size_t r, size_t, size_t j) { return j < lengths[r]; };
  return feed_forward(add(x, full_attention(x, x, attn, allowed)), ffn);
}

Tensor embed_rows(const TokenMatrix& tokens, const Weights& weights) {
  std::vector<size_t> positions(tokens.cols());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  const size_t d = weights.embedding.dim(1);
  Tensor out({tokens.rows(), tokens.cols(), d});
  for (size_t r = 0; r < tokens.rows(); ++r) {
    Tensor e = embed(tokens.row(r), positions, weights);
    std::copy(e.data().begin(), e.data().end(), out.row(r).begin());
  }
  return out;
}

std::vector<size_t> lengths_of(const TokenMatrix& tokens) {
  return {tokens.valid_lengths().begin(), tokens.valid_lengths().end()};
}

std::vector<size_t> replicate_rows(size_t batch, size_t beam) {
  std::vector<size_t> rows;
  rows.reserve(batch * beam);
  for (size_t b = 0; b < batch; ++b) rows.insert(rows.end(), beam, b);
  return rows;
}

// Position of the j-th consumed token (bos is j = 0) in row r.
size_t generated_position(const SourceContext& source, ArchKind kind, size_t batch_row, size_t j) {
  return kind == ArchKind::kPrefixLm ? source.lengths[batch_row] + j : j;
}

Tensor project_logits(const Tensor& hidden, const Weights& weights) {
  const size_t rows = hidden.numel() / hidden.shape().back();
  const size_t d = hidden.shape().back();
  const size_t vocab = weights.embedding.dim(0);
  return matmul_transposed(hidden.reshaped({1, rows, d}), weights.embedding.reshaped({1, vocab, d}))
      .reshaped({rows, vocab});
}

KeyPadding source_padding(const SourceContext& source, size_t width, size_t beam) {
  return KeyPadding{source.lengths, width, beam};
}

}  // namespace

std::string_view to_string(ArchKind kind) {
  return kind == ArchKind::kEncoderDecoder ? "encdec" : "prefixlm";
}

ArchKind parse_arch(std::string_view name) {
  if (name == "encdec") return ArchKind::kEncoderDecoder;
  if (name == "prefixlm") return ArchKind::kPrefixLm;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (embed_dim < 1) throw std::invalid_argument("embed_dim must be >= 1");
  if (ffn_dim < 1) throw std::invalid_argument("ffn_dim must be >= 1");
  if (vocab_size < 4) throw std::invalid_argument("vocab_size must be >= 4 (pad, bos, eos, unk are reserved)");
  if (num_decoder_layers < 1) throw std::invalid_argument("num_decoder_layers must be >= 1");
  if (max_positions < 1) throw std::invalid_argument("max_positions must be >= 1");
  if (kind == ArchKind::kPrefixLm && num_encoder_layers != 0) {
    throw std::invalid_argument("prefix-lm models have no encoder layers");
  }
}

Weights init_weights(uint64_t seed, const ModelConfig& config) {
  config.validate();
  const size_t d = config.embed_dim;
  UniformSource src(seed, 1.0f / std::sqrt(static_cast<float>(d)));

  Weights w;
  w.embedding = src.fill({config.vocab_size, d});
  w.positions = sinusoidal_positions(config.max_positions, d);
  for (size_t l = 0; l < config.num_encoder_layers; ++l) {
    EncoderLayerWeights layer;
    layer.self = draw_attention(src, d);
    layer.ffn = {src.fill({d, config.ffn_dim}), src.fill({config.ffn_dim, d})};
    w.encoder.push_back(std::move(layer));
  }
  for (size_t l = 0; l < config.num_decoder_layers; ++l) {
    DecoderLayerWeights layer;
    layer.self = draw_attention(src, d);
    if (config.kind == ArchKind::kEncoderDecoder) layer.cross = draw_attention(src, d);
    layer.ffn = {src.fill({d, config.ffn_dim}), src.fill({config.ffn_dim, d})};
    w.decoder.push_back(std::move(layer));
  }
  return w;
}

EncoderOutput encode(const TokenMatrix& tokens, const Weights& weights, const ModelConfig& config) {
  if (config.kind != ArchKind::kEncoderDecoder) {
    throw UnsupportedError("encode: prefix-lm models have no encoder");
  }
  EncoderOutput out{embed_rows(tokens, weights), lengths_of(tokens)};
  for (const EncoderLayerWeights& layer : weights.encoder) {
    out.hidden = bidirectional_layer(out.hidden, layer.self, layer.ffn, out.source_lengths);
  }
  return out;
}

std::vector<Tensor> prefix_layer_inputs(const TokenMatrix& prefix, const Weights& weights,
                                        const ModelConfig& config) {
  if (config.kind != ArchKind::kPrefixLm) {
    throw UnsupportedError("prefix_layer_inputs: only prefix-lm models decode from a prefix");
  }
  const std::vector<size_t> lengths = lengths_of(prefix);
  std::vector<Tensor> inputs;
  inputs.reserve(weights.decoder.size());
  Tensor x = embed_rows(prefix, weights);
  for (const DecoderLayerWeights& layer : weights.decoder) {
    inputs.push_back(x);
    x = bidirectional_layer(x, layer.self, layer.ffn, lengths);
  }
  return inputs;
}

SourceContext make_source_context(const TokenMatrix& source, const Weights& weights, const ModelConfig& config) {
  SourceContext ctx;
  ctx.lengths = lengths_of(source);
  if (config.kind == ArchKind::kEncoderDecoder) {
    ctx.encoder_hidden = encode(source, weights, config).hidden;
  } else {
    ctx.prefix = source;
  }
  return ctx;
}

CacheSet begin_decoding(CacheMode mode, SourceContext source, size_t beam, const Weights& weights,
                        const ModelConfig& config) {
  const size_t batch = source.lengths.size();
  const size_t layers = weights.decoder.size();
  const size_t d = config.embed_dim;
  const size_t rows = batch * beam;

  std::vector<Tensor> prefix_inputs;
  if (mode != CacheMode::kNone && config.kind == ArchKind::kPrefixLm) {
    prefix_inputs = prefix_layer_inputs(source.prefix, weights, config);
  }
  CacheSet caches(mode, batch, beam, layers, std::move(source));
  if (mode == CacheMode::kNone) return caches;

  const std::vector<size_t> replicate = replicate_rows(batch, beam);
  for (size_t l = 0; l < layers; ++l) {
    const DecoderLayerWeights& lw = weights.decoder[l];
    LayerCache& layer = caches.layer(l);

    Tensor prefix_k({batch, 1, 0, d}), prefix_v({batch, 1, 0, d});
    if (config.kind == ArchKind::kPrefixLm) {
      const size_t n = prefix_inputs[l].dim(1);
      std::tie(prefix_k, prefix_v) = build_prefix_cache(prefix_inputs[l].reshaped({batch, 1, n, d}), lw.self);
    }
    if (mode == CacheMode::kDedup) {
      layer.self = DedupSelfCache{std::move(prefix_k), std::move(prefix_v), Tensor({rows, 0, d}), Tensor({rows, 0, d})};
    } else {
      const size_t n = prefix_k.dim(2);
      layer.self = BaselineSelfCache{gather_rows(prefix_k.reshaped({batch, n, d}), replicate),
                                     gather_rows(prefix_v.reshaped({batch, n, d}), replicate)};
    }

    if (config.kind == ArchKind::kEncoderDecoder) {
      const Tensor& s = caches.source().encoder_hidden;
      EncDecCache built = build_encdec_cache(s.reshaped({batch, 1, s.dim(1), d}), lw.cross, mode, beam);
      std::visit([&layer](auto&& c) { layer.encdec = std::move(c); }, std::move(built));
    }
  }
  return caches;
}

Tensor decode_step(std::span<const TokenId> y_prev, CacheSet& caches, const Weights& weights,
                   const ModelConfig& config, size_t step) {
  if (step != caches.steps() + 1) {
    throw StateError("decode_step: step " + std::to_string(step) + " but caches hold " +
                     std::to_string(caches.steps()) + " steps");
  }
  const size_t rows = caches.rows();
  if (y_prev.size() != rows) {
    throw DimensionError("decode_step: " + std::to_string(y_prev.size()) + " tokens for " + std::to_string(rows) +
                         " rows");
  }

  if (caches.mode() == CacheMode::kNone) {
    caches.record_step(y_prev);
    return decode_step_nocache(TokenMatrix::from_rows(caches.history()), caches.source(), caches.beam(), weights,
                               config);
  }

  const SourceContext& source = caches.source();
  std::vector<size_t> positions(rows);
  for (size_t r = 0; r < rows; ++r) {
    positions[r] = generated_position(source, config.kind, r / caches.beam(), step - 1);
  }
  const size_t d = config.embed_dim;
  Tensor x = embed(y_prev, positions, weights).reshaped({rows, 1, d});

  KeyPadding self_padding;
  KeyPadding cross_padding;
  if (config.kind == ArchKind::kPrefixLm) {
    self_padding = source_padding(source, source.prefix.cols(), caches.beam());
  } else {
    cross_padding = source_padding(source, source.encoder_hidden.dim(1), caches.beam());
  }

  for (size_t l = 0; l < caches.num_layers(); ++l) {
    const DecoderLayerWeights& lw = weights.decoder[l];
    LayerCache& layer = caches.layer(l);

    AttnStepTrace self;
    if (auto* c = std::get_if<BaselineSelfCache>(&layer.self)) {
      self = self_attn_step_baseline(x, *c, lw.self, self_padding);
    } else {
      self = self_attn_step_dedup(x, std::get<DedupSelfCache>(layer.self), lw.self, self_padding);
    }
    Tensor h = add(x, matmul(self.attn_out, lw.self.wo));

    if (config.kind == ArchKind::kEncoderDecoder) {
      AttnStepTrace cross;
      if (auto* c = std::get_if<BaselineEncDecCache>(&layer.encdec)) {
        cross = encdec_attn_step_baseline(h, *c, lw.cross, cross_padding);
      } else {
        cross = encdec_attn_step_dedup(h, std::get<DedupEncDecCache>(layer.encdec), lw.cross, cross_padding);
      }
      h = add(h, matmul(cross.attn_out, lw.cross.wo));
    }
    x = feed_forward(h, lw.ffn);
  }
  caches.record_step(y_prev);
  return project_logits(x, weights);
}

Tensor decode_all_positions(const TokenMatrix& full_prefix, const SourceContext& source, size_t beam,
                            const Weights& weights, const ModelConfig& config) {
  const size_t rows = full_prefix.rows();
  const size_t t = full_prefix.cols();
  const size_t d = config.embed_dim;
  if (beam == 0 || rows != source.lengths.size() * beam) {
    throw DimensionError("decode_all_positions: " + std::to_string(rows) + " rows for " +
                         std::to_string(source.lengths.size()) + " batch elements x " + std::to_string(beam) +
                         " beams");
  }
  const size_t n = config.kind == ArchKind::kPrefixLm ? source.prefix.cols() : 0;
  const size_t len = n + t;

  // Sequence per row: prefix (prefix-lm only) followed by the consumed tokens.
  Tensor x({rows, len, d});
  for (size_t r = 0; r < rows; ++r) {
    const size_t b = r / beam;
    std::vector<TokenId> ids;
    std::vector<size_t> positions;
    for (size_t p = 0; p < n; ++p) {
      ids.push_back(source.prefix.at(b, p));
      positions.push_back(p);
    }
    for (size_t j = 0; j < t; ++j) {
      ids.push_back(full_prefix.at(r, j));
      positions.push_back(generated_position(source, config.kind, b, j));
    }
    Tensor e = embed(ids, positions, weights);
    std::copy(e.data().begin(), e.data().end(), x.row(r).begin());
  }

  auto self_allowed = [&](size_t r, size_t i, size_t j) {
    if (j < n) return j < source.lengths[r / beam];
    return i >= n && j <= i;
  };

  Tensor memory;
  if (config.kind == ArchKind::kEncoderDecoder) {
    const size_t src_len = source.encoder_hidden.dim(1);
    std::vector<size_t> map(rows);
    for (size_t r = 0; r < rows; ++r) map[r] = r / beam;
    memory = gather_rows(source.encoder_hidden, map).reshaped({rows, src_len, d});
  }
  auto cross_allowed = [&](size_t r, size_t, size_t j) { return j < source.lengths[r / beam]; };

  for (const DecoderLayerWeights& lw : weights.decoder) {
    Tensor h = add(x, full_attention(x, x, lw.self, self_allowed));
    if (config.kind == ArchKind::kEncoderDecoder) {
      h = add(h, full_attention(h, memory, lw.cross, cross_allowed));
    }
    x = feed_forward(h, lw.ffn);
  }

  // Keep only the generated positions.
  Tensor generated({rows, t, d});
  for (size_t r = 0; r < rows; ++r) {
    auto src = x.row(r);
    std::copy(src.begin() + n * d, src.end(), generated.row(r).begin());
  }
  return project_logits(generated, weights).reshaped({rows, t, weights.embedding.dim(0)});
}

Tensor decode_step_nocache(const TokenMatrix& full_prefix, const SourceContext& source, size_t beam,
                           const Weights& weights, const ModelConfig& config) {
  if (full_prefix.cols() == 0) throw StateError("decode_step_nocache: empty prefix");
  const Tensor all = decode_all_positions(full_prefix, source, beam, weights, config);
  const size_t rows = all.dim(0), t = all.dim(1), vocab = all.dim(2);
  Tensor last({rows, vocab});
  for (size_t r = 0; r < rows; ++r) {
    auto src = all.row(r);
    std::copy(src.begin() + (t - 1) * vocab, src.end(), last.row(r).begin());
  }
  return last;
}

}  // namespace seqgen
