#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "seqgen/attention.h"
#include "seqgen/model.h"
#include "seqgen/ngram.h"
#include "seqgen/tensor.h"
#include "seqgen/timing.h"
#include "seqgen/tokens.h"

namespace seqgen {

struct GenerationConfig {
  size_t beam_size = 1;
  size_t no_repeat_ngram_size = 0;
  size_t min_len = 0;
  size_t max_len = 16;
  float length_penalty = 1.0f;
  CacheMode cache_mode = CacheMode::kDedup;
  NgramKernel ngram_kernel = NgramKernel::kParallel;
  size_t ngram_threads = 1;

  void validate() const;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens, bos excluded; ends in eos unless truncated
  float score = 0.0f;           // cum_logprob / length^lenpen
  float cum_logprob = 0.0f;
  std::vector<float> step_logprobs;  // selected log-probability per step
  bool eos_terminated = false;
};

// cum_logprob / length^lenpen. Lengths below 1 count as 1.
float finalize_score(float cum_logprob, size_t length, float length_penalty);

// Floors the eos column to kBannedScore while current_len < min_len.
void ban_eos_below_min_len(Tensor& scores, size_t current_len, size_t min_len);

// Per-batch beam hypotheses. Rows are grouped `beam` per batch element. At
// the start only the first row of each group is alive, so the first step fans
// out from a single bos row.
class BeamState {
 public:
  BeamState(size_t batch, size_t beam);

  size_t batch() const { return batch_; }
  size_t beam() const { return beam_; }
  size_t rows() const { return batch_ * beam_; }

  const std::vector<TokenId>& tokens(size_t row) const { return tokens_[row]; }
  float cum_logprob(size_t row) const { return cum_logprob_[row]; }
  const std::vector<float>& step_logprobs(size_t row) const { return step_logprobs_[row]; }
  bool alive(size_t row) const { return alive_[row] != 0; }
  size_t alive_count(size_t batch_index) const;

  bool done(size_t batch_index) const { return done_[batch_index] != 0; }
  bool all_done() const;

  const std::vector<Hypothesis>& finalized(size_t batch_index) const { return finalized_[batch_index]; }

  // Generated tokens as a matrix for n-gram blocking; rows that are not alive
  // get valid length 0 so they are skipped.
  TokenMatrix token_matrix() const;

  // Finalizes the surviving beams of every unfinished group without eos
  // (in rank order, up to beam size in total) and marks all groups done.
  void finalize_at_max_len(float length_penalty);

  // Highest-scoring finalized hypothesis; earlier finalization wins ties.
  const Hypothesis& best(size_t batch_index) const;

 private:
  friend struct BeamStepAccess;

  size_t batch_;
  size_t beam_;
  std::vector<std::vector<TokenId>> tokens_;
  std::vector<float> cum_logprob_;
  std::vector<std::vector<float>> step_logprobs_;
  std::vector<char> alive_;
  std::vector<char> done_;
  std::vector<std::vector<Hypothesis>> finalized_;
};

struct StepSelection {
  std::vector<TokenId> next_tokens;  // [B*M], pad for rows that are not alive
  std::vector<size_t> beam_indices;  // [B*M], source row of each new row
};

// One beam-search step over log-probabilities [B*M, V]. Per unfinished group,
// ranks every (alive row, token) candidate by cum_logprob + score, ties by
// lower row then lower token id, skipping banned scores. The best 2M
// candidates are scanned in order: eos candidates ranked within the top M at
// length >= min_len are finalized (up to M per group), the first M non-eos
// candidates become the next beams.
StepSelection beam_step(const Tensor& scores, BeamState& state, const GenerationConfig& config);

struct StepInfo {
  size_t step;
  const Tensor& logits;
  const CacheSet& caches;
  const BeamState& state;
  const StepSelection& selection;
};

struct GenerateHooks {
  StageTimes* timings = nullptr;
  // Called after selection and before the caches are reordered.
  std::function<void(const StepInfo&)> on_step;
};

struct GenerationResult {
  std::vector<Hypothesis> best;                    // one per batch element
  std::vector<std::vector<Hypothesis>> finalized;  // all finalized per batch element
  size_t steps = 0;
  size_t final_element_count = 0;
  ReorderStats reorder;
};

// Beam search over a right-padded source batch (encoder input or prefix).
// Every hypothesis starts from bos. Each step: decode, log-softmax, pad/bos
// and min-length eos bans, n-gram blocking, beam selection, cache reorder.
GenerationResult generate(const TokenMatrix& source, const Weights& weights, const ModelConfig& model_config,
                          const GenerationConfig& config, const GenerateHooks& hooks = {});

// Plain argmax loop (beam size is ignored) with the same bans, for checking
// beam search at M = 1.
std::vector<Hypothesis> greedy_generate(const TokenMatrix& source, const Weights& weights,
                                        const ModelConfig& model_config, const GenerationConfig& config);

}  // namespace seqgen
