#include <cmath>

#include "doctest.h"
#include "seqgen/decode.h"
#include "seqgen/errors.h"
#include "support.h"

using namespace seqgen;
using namespace seqgen::testing;

namespace {

ModelConfig toy_config(ArchKind kind, size_t layers, size_t d, size_t vocab) {
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

bool same_tokens(const std::vector<Hypothesis>& a, const std::vector<Hypothesis>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].tokens != b[i].tokens) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("finalize_score") {
  CHECK(finalize_score(-3.5f, 7, 0.0f) == -3.5f);
  CHECK(finalize_score(-4.0f, 2, 1.0f) == -2.0f);
  CHECK(finalize_score(-4.0f, 0, 2.0f) == -4.0f);
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    const float a = -static_cast<float>(uniform(rng, 0, 1000)) / 37.0f;
    const float b = -static_cast<float>(uniform(rng, 0, 1000)) / 37.0f;
    const size_t len = uniform(rng, 1, 50);
    const float lp1 = static_cast<float>(uniform(rng, 0, 30)) / 10.0f, lp2 = lp1 + 0.5f;
    if (a > b) {
      CHECK(finalize_score(a, len, lp1) >= finalize_score(b, len, lp1));
      CHECK(finalize_score(a, len, lp2) >= finalize_score(b, len, lp2));
    }
  }
}

TEST_CASE("min length eos ban") {
  Rng rng(62);
  const Tensor scores = random_tensor(rng, {3, 7});
  Tensor a = scores;
  ban_eos_below_min_len(a, 4, 4);
  CHECK(a == scores);
  Tensor b = scores;
  ban_eos_below_min_len(b, 0, 1);
  for (size_t r = 0; r < 3; ++r) {
    for (size_t v = 0; v < 7; ++v) {
      if (v == static_cast<size_t>(kEosId)) {
        CHECK(b.at({r, v}) == kBannedScore);
      } else {
        CHECK(b.at({r, v}) == scores.at({r, v}));
      }
    }
  }
}

TEST_CASE("generation config validation") {
  GenerationConfig g;
  CHECK_NOTHROW(g.validate());
  g.beam_size = 0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = {};
  g.max_len = 0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = {};
  g.min_len = 20;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g = {};
  g.length_penalty = -1;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("three step beam search by hand") {
  // B=1, M=2, V=3 (id 2 is eos), lenpen 1.
  GenerationConfig config;
  config.beam_size = 2;
  BeamState state(1, 2);
  CHECK(state.alive(0));
  CHECK_FALSE(state.alive(1));

  // Only row 0 is alive. Ranked: 1 (-0.5), 0 (-1.0), eos (-2.0); eos is third,
  // outside the top 2, so nothing is finalized.
  const Tensor s1({2, 3}, {-1.0f, -0.5f, -2.0f, 9.0f, 9.0f, 9.0f});
  StepSelection a = beam_step(s1, state, config);
  CHECK(a.next_tokens == std::vector<TokenId>{1, 0});
  CHECK(a.beam_indices == std::vector<size_t>{0, 0});
  CHECK(state.cum_logprob(0) == -0.5f);
  CHECK(state.cum_logprob(1) == -1.0f);
  CHECK(state.finalized(0).empty());

  // Totals: row 0 -> {0: -0.7, 1: -3.5, eos: -0.6}; row 1 -> {0: -1.3, 1: -1.4, eos: -6.0}.
  // Ranked: eos/r0 (finalized), 0/r0, 0/r1, 1/r1.
  const Tensor s2({2, 3}, {-0.2f, -3.0f, -0.1f, -0.3f, -0.4f, -5.0f});
  StepSelection b = beam_step(s2, state, config);
  CHECK(b.beam_indices == std::vector<size_t>{0, 1});
  CHECK(b.next_tokens == std::vector<TokenId>{0, 0});
  REQUIRE(state.finalized(0).size() == 1);
  CHECK(state.finalized(0)[0].tokens == std::vector<TokenId>{1, kEosId});
  CHECK(state.finalized(0)[0].cum_logprob == doctest::Approx(-0.6));
  CHECK(state.finalized(0)[0].score == doctest::Approx(-0.3));
  CHECK_FALSE(state.done(0));
  CHECK(state.tokens(0) == std::vector<TokenId>{1, 0});
  CHECK(state.tokens(1) == std::vector<TokenId>{0, 0});

  // Totals: row 0 ([1,0], -0.7) -> {0: -2.7, 1: -2.2, eos: -0.75};
  //         row 1 ([0,0], -1.3) -> {0: -1.4, 1: -4.3, eos: -1.5}.
  // Ranked: eos/r0 (finalized), 0/r1, eos/r1 (third, dropped), 1/r0.
  const Tensor s3({2, 3}, {-2.0f, -1.5f, -0.05f, -0.1f, -3.0f, -0.2f});
  StepSelection c = beam_step(s3, state, config);
  CHECK(c.beam_indices == std::vector<size_t>{1, 0});
  CHECK(c.next_tokens == std::vector<TokenId>{0, 1});
  REQUIRE(state.finalized(0).size() == 2);
  const Hypothesis& h = state.finalized(0)[1];
  CHECK(h.tokens == std::vector<TokenId>{1, 0, kEosId});
  CHECK(h.cum_logprob == doctest::Approx(-0.75));
  CHECK(h.score == doctest::Approx(-0.25));
  CHECK(h.step_logprobs.size() == 3);
  CHECK(h.eos_terminated);
  CHECK(state.done(0));
  CHECK(state.all_done());
  CHECK(state.best(0).tokens == h.tokens);
}

TEST_CASE("first step fans out and ties go to lower token ids") {
  GenerationConfig config;
  config.beam_size = 3;
  BeamState state(2, 3);
  Tensor scores({6, 6});  // all zero
  for (size_t r = 0; r < 6; ++r) scores.at({r, static_cast<size_t>(kEosId)}) = kBannedScore;
  StepSelection sel = beam_step(scores, state, config);
  CHECK(sel.next_tokens == std::vector<TokenId>{0, 1, 3, 0, 1, 3});
  CHECK(sel.beam_indices == std::vector<size_t>{0, 0, 0, 3, 3, 3});
  CHECK(state.alive_count(0) == 3);

  // Second step, everything equal again: row 0 wins ties over rows 1 and 2.
  StepSelection next = beam_step(scores, state, config);
  CHECK(next.beam_indices == std::vector<size_t>{0, 0, 0, 3, 3, 3});
  CHECK(state.tokens(1) == std::vector<TokenId>{0, 1});
}

TEST_CASE("beam_step validates its input") {
  GenerationConfig config;
  config.beam_size = 2;
  BeamState state(1, 2);
  CHECK_THROWS_AS(beam_step(Tensor({3, 4}), state, config), DimensionError);
  CHECK_THROWS_AS(BeamState(1, 0), std::invalid_argument);
  CHECK_THROWS_AS(state.best(0), StateError);
}

TEST_CASE("max length finalization keeps surviving beams") {
  GenerationConfig config;
  config.beam_size = 2;
  config.length_penalty = 0;
  BeamState state(1, 2);
  Tensor scores({2, 5}, {kBannedScore, kBannedScore, kBannedScore, -1.0f, -2.0f,  //
                         0, 0, 0, 0, 0});
  beam_step(scores, state, config);
  state.finalize_at_max_len(config.length_penalty);
  REQUIRE(state.finalized(0).size() == 2);
  CHECK(state.finalized(0)[0].tokens == std::vector<TokenId>{3});
  CHECK_FALSE(state.finalized(0)[0].eos_terminated);
  CHECK(state.best(0).score == -1.0f);
  CHECK(state.all_done());
}

TEST_CASE("single beam search equals the greedy loop") {
  Rng rng(63);
  for (int trial = 0; trial < 12; ++trial) {
    const ArchKind kind = trial % 2 ? ArchKind::kPrefixLm : ArchKind::kEncoderDecoder;
    const ModelConfig mc = toy_config(kind, 2, 8, 24);
    const Weights w = init_weights(200 + trial, mc);
    GenerationConfig g;
    g.beam_size = 1;
    g.max_len = 10;
    g.no_repeat_ngram_size = trial % 3;
    g.min_len = trial % 4;
    const TokenMatrix src = random_source(rng, 3, 5, 24);
    const GenerationResult beam = generate(src, w, mc, g);
    const std::vector<Hypothesis> greedy = greedy_generate(src, w, mc, g);
    CHECK(same_tokens(beam.best, greedy));
    for (size_t b = 0; b < 3; ++b) CHECK(beam.best[b].cum_logprob == greedy[b].cum_logprob);
  }
}

TEST_CASE("cache modes and kernels produce the same hypotheses") {
  Rng rng(64);
  for (int trial = 0; trial < 8; ++trial) {
    const ArchKind kind = trial % 2 ? ArchKind::kPrefixLm : ArchKind::kEncoderDecoder;
    const ModelConfig mc = toy_config(kind, 1 + trial % 2, 8, 32);
    const Weights w = init_weights(300 + trial, mc);
    const TokenMatrix src = random_source(rng, 3, 6, 32);
    GenerationConfig g;
    g.beam_size = 1 + trial % 4;
    g.max_len = 12;
    g.no_repeat_ngram_size = 2 + trial % 2;
    g.length_penalty = 1.0f;

    g.cache_mode = CacheMode::kNone;
    g.ngram_kernel = NgramKernel::kReference;
    const GenerationResult ref = generate(src, w, mc, g);
    for (CacheMode mode : {CacheMode::kBaseline, CacheMode::kDedup}) {
      for (NgramKernel kernel : {NgramKernel::kReference, NgramKernel::kParallel}) {
        g.cache_mode = mode;
        g.ngram_kernel = kernel;
        const GenerationResult r = generate(src, w, mc, g);
        CHECK(same_tokens(r.best, ref.best));
        for (size_t b = 0; b < 3; ++b) CHECK(std::fabs(r.best[b].score - ref.best[b].score) <= 1e-5f);
        CHECK(r.steps == ref.steps);
      }
    }
  }
}

TEST_CASE("length clamp, blocked n-grams and score replay") {
  Rng rng(65);
  const ModelConfig mc = toy_config(ArchKind::kEncoderDecoder, 2, 8, 20);
  const Weights w = init_weights(400, mc);
  const TokenMatrix src = random_source(rng, 4, 6, 20);
  GenerationConfig g;
  g.beam_size = 3;
  g.min_len = 7;
  g.max_len = 7;
  for (const Hypothesis& h : generate(src, w, mc, g).best) {
    CHECK(h.tokens.size() == 7);
    CHECK_FALSE(h.eos_terminated);
  }

  g.min_len = 2;
  g.max_len = 14;
  for (size_t n : {2, 3}) {
    g.no_repeat_ngram_size = n;
    const GenerationResult r = generate(src, w, mc, g);
    const SourceContext ctx = make_source_context(src, w, mc);
    for (size_t b = 0; b < r.finalized.size(); ++b) {
      for (const Hypothesis& h : r.finalized[b]) {
        CHECK_FALSE(has_repeated_ngram(h.tokens, n));
        if (h.eos_terminated) CHECK(h.tokens.size() >= g.min_len + 1);
        for (TokenId t : h.tokens) CHECK((t != kPadId && t != kBosId));

        // Replay the hypothesis through the full recompute path.
        std::vector<TokenId> consumed{kBosId};
        consumed.insert(consumed.end(), h.tokens.begin(), h.tokens.end() - 1);
        TokenMatrix one = TokenMatrix::from_rows({consumed});
        SourceContext single;
        single.encoder_hidden = Tensor({1, ctx.encoder_hidden.dim(1), 8},
                                       std::vector<float>(ctx.encoder_hidden.row(b).begin(),
                                                          ctx.encoder_hidden.row(b).end()));
        single.lengths = {ctx.lengths[b]};
        const Tensor logp = log_softmax_rows(decode_all_positions(one, single, 1, w, mc));
        double sum = 0;
        for (size_t j = 0; j < h.tokens.size(); ++j) sum += logp.at({0, j, static_cast<size_t>(h.tokens[j])});
        CHECK(std::fabs(sum - h.cum_logprob) <= 1e-4);
        CHECK(h.score == doctest::Approx(finalize_score(h.cum_logprob, h.tokens.size(), g.length_penalty)));
      }
    }
  }
}

TEST_CASE("empty batch and determinism") {
  const ModelConfig mc = toy_config(ArchKind::kPrefixLm, 1, 8, 16);
  const Weights w = init_weights(500, mc);
  GenerationConfig g;
  g.beam_size = 2;
  CHECK(generate(TokenMatrix(0, 0), w, mc, g).best.empty());
  const TokenMatrix src = TokenMatrix::from_rows({{4, 5, 6}, {7}});
  const GenerationResult a = generate(src, w, mc, g);
  const GenerationResult b = generate(src, w, mc, g);
  CHECK(same_tokens(a.best, b.best));
  CHECK(a.best[0].cum_logprob == b.best[0].cum_logprob);
}

TEST_CASE("hooks see every step and reorder counts follow the mode") {
  const ModelConfig mc = toy_config(ArchKind::kEncoderDecoder, 2, 8, 16);
  const Weights w = init_weights(600, mc);
  const TokenMatrix src = TokenMatrix::from_rows({{4, 5, 6, 7}, {8, 9}});
  GenerationConfig g;
  g.beam_size = 3;
  g.max_len = 6;
  g.min_len = 6;
  for (CacheMode mode : {CacheMode::kNone, CacheMode::kBaseline, CacheMode::kDedup}) {
    g.cache_mode = mode;
    size_t calls = 0;
    StageTimes times;
    GenerateHooks hooks;
    hooks.timings = &times;
    hooks.on_step = [&](const StepInfo& info) {
      ++calls;
      CHECK(info.step == calls);
      CHECK(info.logits.shape() == Shape{6, 16});
    };
    const GenerationResult r = generate(src, w, mc, g, hooks);
    CHECK(calls == 6);
    CHECK(r.steps == 6);
    CHECK(r.reorder.calls == 6);
    const size_t expect_enc = mode == CacheMode::kBaseline ? 6 * 2 * 2 : 0;
    const size_t expect_self = mode == CacheMode::kNone ? 0 : 6 * 2 * 2;
    CHECK(r.reorder.encdec_ops == expect_enc);
    CHECK(r.reorder.self_ops == expect_self);
    CHECK(times[Stage::kDecode] > 0);
  }
}

TEST_CASE("wider beams do not lose score on these seeds") {
  // Beam search is not monotone in general; this pins the behaviour on a fixed
  // set of seeds so regressions in candidate handling show up.
  Rng rng(66);
  size_t checked = 0, violations = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig mc = toy_config(trial % 2 ? ArchKind::kPrefixLm : ArchKind::kEncoderDecoder, 2, 8, 24);
    const Weights w = init_weights(700 + trial, mc);
    const TokenMatrix src = random_source(rng, 2, 5, 24);
    GenerationConfig g;
    g.max_len = 10;
    g.length_penalty = 1.0f;
    std::vector<float> prev;
    for (size_t m : {1, 2, 4}) {
      g.beam_size = m;
      const GenerationResult r = generate(src, w, mc, g);
      for (size_t b = 0; b < 2; ++b) {
        if (!prev.empty()) {
          ++checked;
          if (r.best[b].score < prev[b] - 1e-6f) ++violations;
        }
      }
      prev.clear();
      for (const Hypothesis& h : r.best) prev.push_back(h.score);
    }
  }
  MESSAGE("beam dominance held in " << checked - violations << " of " << checked << " comparisons");
  CHECK(violations == 0);
}
