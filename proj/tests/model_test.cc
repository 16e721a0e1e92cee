#include <cmath>

#include "doctest.h"
#include "seqgen/errors.h"
#include "seqgen/model.h"
#include "support.h"

using namespace seqgen;
using namespace seqgen::testing;

namespace {

ModelConfig toy_config(ArchKind kind, size_t layers = 2, size_t d = 8, size_t vocab = 16) {
  ModelConfig c;
  c.kind = kind;
  c.num_encoder_layers = kind == ArchKind::kEncoderDecoder ? layers : 0;
  c.num_decoder_layers = layers;
  c.embed_dim = d;
  c.ffn_dim = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = 64;
  return c;
}

TokenMatrix random_source(Rng& rng, size_t batch, size_t max_len, size_t vocab) {
  std::vector<std::vector<TokenId>> rows(batch);
  for (auto& row : rows) {
    const size_t len = uniform(rng, 1, max_len);
    for (size_t i = 0; i < len; ++i) row.push_back(static_cast<TokenId>(uniform(rng, kFirstWordId, vocab - 1)));
  }
  return TokenMatrix::from_rows(rows);
}

std::vector<TokenId> random_step_tokens(Rng& rng, size_t rows, size_t vocab) {
  std::vector<TokenId> ids(rows);
  for (TokenId& id : ids) id = static_cast<TokenId>(uniform(rng, 0, vocab - 1));
  return ids;
}

Tensor slice_step(const Tensor& all, size_t step) {  // [R, t, V] -> [R, V] at position step
  const size_t rows = all.dim(0), t = all.dim(1), v = all.dim(2);
  Tensor out({rows, v});
  for (size_t r = 0; r < rows; ++r) {
    std::copy_n(all.row(r).begin() + step * v, v, out.row(r).begin());
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = toy_config(ArchKind::kPrefixLm);
  CHECK_NOTHROW(c.validate());
  c.num_encoder_layers = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy_config(ArchKind::kEncoderDecoder);
  c.vocab_size = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy_config(ArchKind::kEncoderDecoder);
  c.embed_dim = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(parse_arch("prefixlm") == ArchKind::kPrefixLm);
  CHECK(parse_arch(to_string(ArchKind::kEncoderDecoder)) == ArchKind::kEncoderDecoder);
  CHECK_THROWS_AS(parse_arch("gpt"), std::invalid_argument);
}

TEST_CASE("weight initialization is seeded and bounded") {
  const ModelConfig c = toy_config(ArchKind::kEncoderDecoder);
  const Weights a = init_weights(7, c);
  CHECK(a == init_weights(7, c));
  CHECK_FALSE(a == init_weights(8, c));
  CHECK(a.encoder.size() == 2);
  CHECK(a.decoder.size() == 2);
  CHECK(a.decoder[0].cross.wq.shape() == Shape{8, 8});
  CHECK(init_weights(7, toy_config(ArchKind::kPrefixLm)).decoder[0].cross.wq.empty());

  ModelConfig one = toy_config(ArchKind::kEncoderDecoder, 1, 1);
  const Weights w = init_weights(3, one);
  for (const Tensor* t : {&w.embedding, &w.decoder[0].self.wq, &w.decoder[0].cross.wv, &w.decoder[0].ffn.w2,
                          &w.encoder[0].ffn.w1}) {
    for (float v : t->data()) {
      CHECK(std::isfinite(v));
      CHECK(std::fabs(v) <= 1.0f);
    }
  }
  const float bound = 1.0f / std::sqrt(8.0f);
  for (float v : a.embedding.data()) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("encoder shapes and batch independence") {
  const ModelConfig c = toy_config(ArchKind::kEncoderDecoder);
  const Weights w = init_weights(1, c);
  CHECK(encode(TokenMatrix::from_rows({{5}}), w, c).hidden.shape() == Shape{1, 1, 8});

  const std::vector<TokenId> a{4, 9, 7}, b{12, 5};
  const Tensor single = encode(TokenMatrix::from_rows({a}), w, c).hidden;
  const Tensor pair = encode(TokenMatrix::from_rows({a, a}), w, c).hidden;
  CHECK(std::equal(pair.row(0).begin(), pair.row(0).end(), pair.row(1).begin()));
  CHECK(std::equal(single.row(0).begin(), single.row(0).end(), pair.row(0).begin()));

  const Tensor ab = encode(TokenMatrix::from_rows({a, b}), w, c).hidden;
  const Tensor ba = encode(TokenMatrix::from_rows({b, a}), w, c).hidden;
  CHECK(std::equal(ab.row(0).begin(), ab.row(0).end(), ba.row(1).begin()));
  // b is padded to width 3 in both; its valid positions agree.
  CHECK(std::equal(ab.row(1).begin(), ab.row(1).begin() + 2 * 8, ba.row(0).begin()));

  CHECK_THROWS_AS(encode(TokenMatrix::from_rows({a}), w, toy_config(ArchKind::kPrefixLm)), UnsupportedError);
}

TEST_CASE("cached decoding matches the full recompute") {
  Rng rng(41);
  for (ArchKind kind : {ArchKind::kEncoderDecoder, ArchKind::kPrefixLm}) {
    for (int trial = 0; trial < 6; ++trial) {
      const ModelConfig c = toy_config(kind, uniform(rng, 1, 2), 8, 16);
      const Weights w = init_weights(100 + trial, c);
      const size_t batch = uniform(rng, 1, 3), beam = uniform(rng, 1, 3), rows = batch * beam;
      const SourceContext ctx = make_source_context(random_source(rng, batch, 6, 16), w, c);

      CacheSet none = begin_decoding(CacheMode::kNone, ctx, beam, w, c);
      CacheSet base = begin_decoding(CacheMode::kBaseline, ctx, beam, w, c);
      CacheSet dedup = begin_decoding(CacheMode::kDedup, ctx, beam, w, c);
      std::vector<TokenId> y(rows, kBosId);
      std::vector<std::vector<TokenId>> consumed(rows);
      for (size_t step = 1; step <= 4; ++step) {
        for (size_t r = 0; r < rows; ++r) consumed[r].push_back(y[r]);
        const Tensor ln = decode_step(y, none, w, c, step);
        const Tensor lb = decode_step(y, base, w, c, step);
        const Tensor ld = decode_step(y, dedup, w, c, step);
        REQUIRE(lb.shape() == Shape{rows, 16});
        CHECK(max_abs_diff(ln, lb) <= 1e-5f);
        CHECK(max_abs_diff(ln, ld) <= 1e-5f);
        const Tensor all = decode_all_positions(TokenMatrix::from_rows(consumed), ctx, beam, w, c);
        CHECK(max_abs_diff(slice_step(all, step - 1), lb) <= 1e-5f);
        y = random_step_tokens(rng, rows, 16);
      }
      CHECK(base.steps() == 4);
    }
  }
}

TEST_CASE("first step logits are finite and agree across modes") {
  const ModelConfig c = toy_config(ArchKind::kEncoderDecoder, 1);
  const Weights w = init_weights(5, c);
  const SourceContext ctx = make_source_context(TokenMatrix::from_rows({{4, 5, 6}}), w, c);
  const std::vector<TokenId> bos{kBosId};
  CacheSet base = begin_decoding(CacheMode::kBaseline, ctx, 1, w, c);
  const Tensor l = decode_step(bos, base, w, c, 1);
  for (float v : l.data()) CHECK(std::isfinite(v));
  CHECK(max_abs_diff(l, decode_step_nocache(TokenMatrix::from_rows({bos}), ctx, 1, w, c)) <= 1e-5f);
}

TEST_CASE("decode_step enforces step order and row count") {
  const ModelConfig c = toy_config(ArchKind::kEncoderDecoder, 1);
  const Weights w = init_weights(5, c);
  CacheSet caches =
      begin_decoding(CacheMode::kDedup, make_source_context(TokenMatrix::from_rows({{4, 5}}), w, c), 2, w, c);
  const std::vector<TokenId> y{kBosId, kBosId};
  CHECK_THROWS_AS(decode_step(y, caches, w, c, 2), StateError);
  CHECK_THROWS_AS(decode_step(std::vector<TokenId>{kBosId}, caches, w, c, 1), DimensionError);
  CHECK_NOTHROW(decode_step(y, caches, w, c, 1));
  CHECK_THROWS_AS(decode_step(y, caches, w, c, 1), StateError);
}

TEST_CASE("duplicated rows give duplicated logits") {
  const ModelConfig c = toy_config(ArchKind::kPrefixLm);
  const Weights w = init_weights(9, c);
  const std::vector<TokenId> p{4, 8, 6, 5};
  const SourceContext one = make_source_context(TokenMatrix::from_rows({p}), w, c);
  const SourceContext two = make_source_context(TokenMatrix::from_rows({p, p}), w, c);
  const Tensor a = decode_all_positions(TokenMatrix::from_rows({{1, 7, 9}}), one, 1, w, c);
  const Tensor b = decode_all_positions(TokenMatrix::from_rows({{1, 7, 9}, {1, 7, 9}}), two, 1, w, c);
  CHECK(std::equal(a.row(0).begin(), a.row(0).end(), b.row(0).begin()));
  CHECK(std::equal(a.row(0).begin(), a.row(0).end(), b.row(1).begin()));
}

TEST_CASE("prefix-lm logits do not look ahead") {
  Rng rng(43);
  const ModelConfig c = toy_config(ArchKind::kPrefixLm);
  const Weights w = init_weights(11, c);
  const SourceContext ctx = make_source_context(random_source(rng, 2, 5, 16), w, c);
  std::vector<std::vector<TokenId>> tokens{{1, 5, 9, 4, 7, 7}, {1, 6, 6, 10, 12, 4}};
  const Tensor before = decode_all_positions(TokenMatrix::from_rows(tokens), ctx, 1, w, c);
  for (auto& row : tokens) {
    row[4] = 13;
    row[5] = 14;
  }
  const Tensor after = decode_all_positions(TokenMatrix::from_rows(tokens), ctx, 1, w, c);
  for (size_t r = 0; r < 2; ++r) {
    for (size_t i = 0; i < 4 * 16; ++i) CHECK(before.row(r)[i] == after.row(r)[i]);
  }
  bool changed = false;
  for (size_t i = 4 * 16; i < 6 * 16; ++i) changed |= before.row(0)[i] != after.row(0)[i];
  CHECK(changed);
}

TEST_CASE("padding the prefix does not change results") {
  const ModelConfig c = toy_config(ArchKind::kPrefixLm);
  const Weights w = init_weights(12, c);
  const std::vector<TokenId> a{4, 5}, b{6, 7, 8, 9, 10};
  const SourceContext alone = make_source_context(TokenMatrix::from_rows({a}), w, c);
  const SourceContext padded = make_source_context(TokenMatrix::from_rows({a, b}), w, c);
  const std::vector<TokenId> y1{kBosId}, y2{kBosId, kBosId}, z1{7}, z2{7, 11};
  CacheSet c1 = begin_decoding(CacheMode::kDedup, alone, 1, w, c);
  CacheSet c2 = begin_decoding(CacheMode::kDedup, padded, 1, w, c);
  const std::vector<TokenId>* steps[2][2] = {{&y1, &y2}, {&z1, &z2}};
  for (size_t s = 1; s <= 2; ++s) {
    const Tensor l1 = decode_step(*steps[s - 1][0], c1, w, c, s);
    const Tensor l2 = decode_step(*steps[s - 1][1], c2, w, c, s);
    CHECK(max_abs_diff(l1, Tensor({1, 16}, std::vector<float>(l2.row(0).begin(), l2.row(0).end()))) <= 1e-6f);
  }
}

TEST_CASE("live cache sizes follow the mode") {
  const ModelConfig c = toy_config(ArchKind::kEncoderDecoder, 2, 8);
  const Weights w = init_weights(13, c);
  const SourceContext ctx = make_source_context(TokenMatrix::from_rows({{4, 5, 6}, {7, 8, 9}}), w, c);
  const size_t beam = 3, rows = 6, n = 3, d = 8, layers = 2;
  CacheSet base = begin_decoding(CacheMode::kBaseline, ctx, beam, w, c);
  CacheSet dedup = begin_decoding(CacheMode::kDedup, ctx, beam, w, c);
  CHECK(base.element_count() == layers * 2 * rows * n * d);
  CHECK(dedup.element_count() == layers * 2 * 2 * n * d);
  const std::vector<TokenId> y(rows, kBosId);
  for (size_t s = 1; s <= 3; ++s) {
    decode_step(y, base, w, c, s);
    decode_step(y, dedup, w, c, s);
    CHECK(base.element_count() == layers * 2 * (rows * n * d + rows * s * d));
    CHECK(dedup.element_count() == layers * 2 * (2 * n * d + rows * s * d));
    CHECK(dedup.element_count() < base.element_count());
  }
  CHECK(begin_decoding(CacheMode::kNone, ctx, beam, w, c).element_count() == 0);
}
