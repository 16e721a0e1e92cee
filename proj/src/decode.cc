#include "seqgen/decode.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "seqgen/errors.h"

namespace seqgen {

namespace {

struct Candidate {
  float total;
  size_t row;
  TokenId token;
  float step_logprob;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.total != b.total) return a.total > b.total;
  if (a.row != b.row) return a.row < b.row;
  return a.token < b.token;
}

void ban_reserved(Tensor& scores) {
  const size_t vocab = scores.dim(1);
  for (size_t r = 0; r < scores.dim(0); ++r) {
    scores.data()[r * vocab + kPadId] = kBannedScore;
    scores.data()[r * vocab + kBosId] = kBannedScore;
  }
}

void block_ngrams(const TokenMatrix& tokens, Tensor& scores, const GenerationConfig& config) {
  if (config.ngram_kernel == NgramKernel::kReference) {
    block_repeated_ngrams_reference(tokens, scores, config.no_repeat_ngram_size);
  } else {
    block_repeated_ngrams_parallel(tokens, scores, config.no_repeat_ngram_size, config.ngram_threads);
  }
}

}  // namespace

void GenerationConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam size must be >= 1");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (min_len > max_len) throw std::invalid_argument("min_len must not exceed max_len");
  if (!(length_penalty >= 0.0f)) throw std::invalid_argument("length penalty must be >= 0");
}

float finalize_score(float cum_logprob, size_t length, float length_penalty) {
  const float len = static_cast<float>(std::max<size_t>(length, 1));
  return cum_logprob / std::pow(len, length_penalty);
}

void ban_eos_below_min_len(Tensor& scores, size_t current_len, size_t min_len) {
  if (current_len >= min_len) return;
  const size_t vocab = scores.shape().back();
  const size_t rows = scores.numel() / vocab;
  for (size_t r = 0; r < rows; ++r) scores.data()[r * vocab + kEosId] = kBannedScore;
}

BeamState::BeamState(size_t batch, size_t beam)
    : batch_(batch), beam_(beam), tokens_(batch * beam), cum_logprob_(batch * beam, 0.0f),
      step_logprobs_(batch * beam), alive_(batch * beam, 0), done_(batch, 0), finalized_(batch) {
  if (beam == 0) throw std::invalid_argument("BeamState: beam size must be >= 1");
  for (size_t b = 0; b < batch; ++b) alive_[b * beam] = 1;
}

size_t BeamState::alive_count(size_t batch_index) const {
  return static_cast<size_t>(std::count(alive_.begin() + batch_index * beam_,
                                        alive_.begin() + (batch_index + 1) * beam_, 1));
}

bool BeamState::all_done() const {
  return std::all_of(done_.begin(), done_.end(), [](char d) { return d != 0; });
}

TokenMatrix BeamState::token_matrix() const {
  size_t cols = 0;
  for (const auto& t : tokens_) cols = std::max(cols, t.size());
  TokenMatrix m(rows(), cols);
  for (size_t r = 0; r < rows(); ++r) {
    if (!alive(r)) {
      m.set_valid_length(r, 0);
      continue;
    }
    std::copy(tokens_[r].begin(), tokens_[r].end(), m.row(r).begin());
    m.set_valid_length(r, tokens_[r].size());
  }
  return m;
}

void BeamState::finalize_at_max_len(float length_penalty) {
  for (size_t b = 0; b < batch_; ++b) {
    if (done_[b]) continue;
    for (size_t k = 0; k < beam_ && finalized_[b].size() < beam_; ++k) {
      const size_t r = b * beam_ + k;
      if (!alive_[r]) continue;
      finalized_[b].push_back(Hypothesis{tokens_[r], finalize_score(cum_logprob_[r], tokens_[r].size(), length_penalty),
                                         cum_logprob_[r], step_logprobs_[r], false});
    }
    for (size_t k = 0; k < beam_; ++k) alive_[b * beam_ + k] = 0;
    done_[b] = 1;
  }
}

const Hypothesis& BeamState::best(size_t batch_index) const {
  const auto& hyps = finalized_.at(batch_index);
  if (hyps.empty()) throw StateError("BeamState::best: no finalized hypothesis for batch " + std::to_string(batch_index));
  const Hypothesis* best = &hyps.front();
  for (const Hypothesis& h : hyps) {
    if (h.score > best->score) best = &h;
  }
  return *best;
}

struct BeamStepAccess {
  static StepSelection step(const Tensor& scores, BeamState& s, const GenerationConfig& config) {
    const size_t beam = s.beam_;
    const size_t rows = s.rows();
    if (scores.rank() != 2 || scores.dim(0) != rows) {
      throw DimensionError("beam_step: scores " + shape_str(scores.shape()) + " for " + std::to_string(rows) +
                           " rows");
    }
    const size_t vocab = scores.dim(1);

    StepSelection sel;
    sel.next_tokens.assign(rows, kPadId);
    sel.beam_indices.resize(rows);
    for (size_t r = 0; r < rows; ++r) sel.beam_indices[r] = r;

    auto tokens = s.tokens_;
    auto cum = s.cum_logprob_;
    auto step_lp = s.step_logprobs_;
    std::vector<char> alive(rows, 0);

    std::vector<Candidate> pool;
    for (size_t b = 0; b < s.batch_; ++b) {
      if (s.done_[b]) continue;
      if (s.alive_count(b) == 0) {
        throw StateError("beam_step: batch element " + std::to_string(b) + " has no alive beams");
      }

      pool.clear();
      for (size_t r = b * beam; r < (b + 1) * beam; ++r) {
        if (!s.alive_[r]) continue;
        const float* row = scores.data().data() + r * vocab;
        for (size_t v = 0; v < vocab; ++v) {
          if (row[v] == kBannedScore) continue;
          pool.push_back(Candidate{s.cum_logprob_[r] + row[v], r, static_cast<TokenId>(v), row[v]});
        }
      }
      const size_t keep = std::min(pool.size(), 2 * beam);
      std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(), ranks_before);

      auto& finalized = s.finalized_[b];
      size_t next = 0;
      for (size_t i = 0; i < keep; ++i) {
        const Candidate& c = pool[i];
        const auto& prev = s.tokens_[c.row];
        if (c.token == kEosId) {
          // Only an eos ranked within the top M ends a hypothesis; lower ones
          // are dropped, as they would not have survived as beams either.
          if (i >= beam || prev.size() < config.min_len || finalized.size() >= beam) continue;
          Hypothesis h{prev, 0.0f, c.total, s.step_logprobs_[c.row], true};
          h.tokens.push_back(kEosId);
          h.step_logprobs.push_back(c.step_logprob);
          h.score = finalize_score(c.total, h.tokens.size(), config.length_penalty);
          finalized.push_back(std::move(h));
          continue;
        }
        if (next == beam) continue;
        const size_t dst = b * beam + next++;
        tokens[dst] = prev;
        tokens[dst].push_back(c.token);
        step_lp[dst] = s.step_logprobs_[c.row];
        step_lp[dst].push_back(c.step_logprob);
        cum[dst] = c.total;
        alive[dst] = 1;
        sel.next_tokens[dst] = c.token;
        sel.beam_indices[dst] = c.row;
      }

      if (finalized.size() >= beam) {
        s.done_[b] = 1;
        for (size_t k = 0; k < beam; ++k) alive[b * beam + k] = 0;
      } else if (next == 0) {
        // Every continuation was banned or finished early: keep what survived.
        if (finalized.empty()) {
          for (size_t r = b * beam; r < (b + 1) * beam; ++r) {
            if (!s.alive_[r]) continue;
            finalized.push_back(Hypothesis{s.tokens_[r],
                                           finalize_score(s.cum_logprob_[r], s.tokens_[r].size(), config.length_penalty),
                                           s.cum_logprob_[r], s.step_logprobs_[r], false});
          }
        }
        s.done_[b] = 1;
      }
    }

    s.tokens_ = std::move(tokens);
    s.cum_logprob_ = std::move(cum);
    s.step_logprobs_ = std::move(step_lp);
    s.alive_ = std::move(alive);
    return sel;
  }
};

StepSelection beam_step(const Tensor& scores, BeamState& state, const GenerationConfig& config) {
  return BeamStepAccess::step(scores, state, config);
}

GenerationResult generate(const TokenMatrix& source, const Weights& weights, const ModelConfig& model_config,
                          const GenerationConfig& config, const GenerateHooks& hooks) {
  config.validate();
  GenerationResult result;
  const size_t batch = source.rows();
  if (batch == 0) return result;
  StageTimes* times = hooks.timings;

  SourceContext context;
  {
    StageTimer t(times, Stage::kEncode);
    context = make_source_context(source, weights, model_config);
  }
  CacheSet caches = [&] {
    StageTimer t(times, Stage::kCacheMaintenance);
    return begin_decoding(config.cache_mode, std::move(context), config.beam_size, weights, model_config);
  }();

  BeamState state(batch, config.beam_size);
  std::vector<TokenId> y(state.rows(), kBosId);

  for (size_t step = 1; step <= config.max_len; ++step) {
    Tensor logits;
    {
      StageTimer t(times, Stage::kDecode);
      logits = decode_step(y, caches, weights, model_config, step);
    }
    Tensor scores;
    {
      StageTimer t(times, Stage::kOther);
      scores = log_softmax_rows(logits);
      ban_reserved(scores);
      ban_eos_below_min_len(scores, step - 1, config.min_len);
    }
    if (config.no_repeat_ngram_size > 0) {
      StageTimer t(times, Stage::kNgramBlocking);
      block_ngrams(state.token_matrix(), scores, config);
    }
    StepSelection sel;
    {
      StageTimer t(times, Stage::kSearchBookkeeping);
      sel = beam_step(scores, state, config);
      if (step == config.max_len) state.finalize_at_max_len(config.length_penalty);
    }
    if (hooks.on_step) hooks.on_step(StepInfo{step, logits, caches, state, sel});
    {
      StageTimer t(times, Stage::kCacheMaintenance);
      reorder_beams(caches, sel.beam_indices);
    }
    result.steps = step;
    if (state.all_done()) break;
    y = std::move(sel.next_tokens);
  }

  for (size_t b = 0; b < batch; ++b) {
    result.best.push_back(state.best(b));
    result.finalized.push_back(state.finalized(b));
  }
  result.final_element_count = caches.element_count();
  result.reorder = caches.reorder_stats();
  return result;
}

std::vector<Hypothesis> greedy_generate(const TokenMatrix& source, const Weights& weights,
                                        const ModelConfig& model_config, const GenerationConfig& config) {
  config.validate();
  const size_t batch = source.rows();
  std::vector<Hypothesis> hyps(batch);
  if (batch == 0) return hyps;

  CacheSet caches =
      begin_decoding(config.cache_mode, make_source_context(source, weights, model_config), 1, weights, model_config);
  std::vector<char> finished(batch, 0);
  std::vector<TokenId> y(batch, kBosId);

  for (size_t step = 1; step <= config.max_len; ++step) {
    Tensor scores = log_softmax_rows(decode_step(y, caches, weights, model_config, step));
    ban_reserved(scores);
    ban_eos_below_min_len(scores, step - 1, config.min_len);
    if (config.no_repeat_ngram_size > 0) {
      TokenMatrix history(batch, step - 1);
      for (size_t b = 0; b < batch; ++b) {
        std::copy(hyps[b].tokens.begin(), hyps[b].tokens.end(), history.row(b).begin());
        history.set_valid_length(b, finished[b] ? 0 : hyps[b].tokens.size());
      }
      block_ngrams(history, scores, config);
    }

    for (size_t b = 0; b < batch; ++b) {
      if (finished[b]) {
        y[b] = kPadId;
        continue;
      }
      auto row = scores.row(b);
      const auto best = std::max_element(row.begin(), row.end());  // first maximum = lowest id
      if (*best == kBannedScore) {
        finished[b] = 1;
        y[b] = kPadId;
        continue;
      }
      Hypothesis& h = hyps[b];
      h.tokens.push_back(static_cast<TokenId>(best - row.begin()));
      h.step_logprobs.push_back(*best);
      h.cum_logprob += *best;
      y[b] = h.tokens.back();
      if (y[b] == kEosId) {
        h.eos_terminated = true;
        finished[b] = 1;
      }
    }
    if (std::all_of(finished.begin(), finished.end(), [](char f) { return f != 0; })) break;
  }
  for (Hypothesis& h : hyps) h.score = finalize_score(h.cum_logprob, h.tokens.size(), config.length_penalty);
  return hyps;
}

}  // namespace seqgen
