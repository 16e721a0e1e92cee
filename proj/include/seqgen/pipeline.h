#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "seqgen/decode.h"
#include "seqgen/model.h"
#include "seqgen/timing.h"
#include "seqgen/tokens.h"

namespace seqgen {

// Whitespace vocabulary. Ids 0-3 are reserved (pad, bos, eos, unk); words
// follow in order of first occurrence.
class Vocab {
 public:
  Vocab();

  size_t size() const { return words_.size(); }
  // Word for an id, "<unk>" for unk and ids past the end.
  const std::string& word(TokenId id) const;
  TokenId id(std::string_view word) const;  // unk when absent
  bool contains(std::string_view word) const { return ids_.contains(std::string(word)); }
  void add(std::string_view word);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Truncated to `vocab_size` entries, reserved ids included.
Vocab build_vocab(std::span<const std::string> lines, size_t vocab_size);

// Whitespace split, unk for unknown words, at most max_positions - 1 ids. No
// bos/eos is added.
std::vector<TokenId> tokenize(std::string_view line, const Vocab& vocab, size_t max_positions);

// Space-joined words; pad/bos/eos are dropped, unk renders as "<unk>".
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);

enum class PipelineMode { kSync, kAsync };

std::string_view to_string(PipelineMode mode);
PipelineMode parse_pipeline_mode(std::string_view name);

// One contiguous slice of the input.
struct WorkBatch {
  size_t batch_index = 0;
  std::vector<size_t> sample_indices;  // input line numbers, increasing
  TokenMatrix tokens;
};

struct PipelineOptions {
  std::filesystem::path input_path;
  std::filesystem::path output_path;
  ModelConfig model;
  uint64_t seed = 0;
  GenerationConfig generation;
  size_t batch_size = 8;
  PipelineMode mode = PipelineMode::kSync;
  size_t post_process_workers = 1;
  size_t injected_post_delay_ms = 0;
};

struct PipelineReport {
  StageTimes stages;
  size_t samples = 0;
  size_t batches = 0;
  size_t max_source_len = 0;  // longest tokenized source row, as fed to the model
  double end_to_end_seconds = 0;  // first batch read to last line written; excludes model load
  double end_to_end_seconds_with_load = 0;
  double samples_per_second = 0;  // samples / end_to_end_seconds
  double samples_per_second_with_load = 0;
  double overlap_seconds = 0;  // generation and post-process running at the same time
  std::vector<double> generation_seconds_per_batch;
};

nlohmann::json to_json(const PipelineReport& report);

// Source batch for one slice of lines: tokenized, with eos appended for the
// encoder-decoder kind, and truncated so that every decoder position fits.
WorkBatch make_work_batch(size_t batch_index, size_t first_sample, std::span<const std::string> lines,
                          const Vocab& vocab, const ModelConfig& model, const GenerationConfig& generation);

// Reads one sample per line, generates, and writes one hypothesis per line in
// input order. Sync runs preprocess, generate and post-process back to back
// per batch. Async connects them with capacity-2 queues so batch i+1 is
// tokenized and batch i-1 post-processed while batch i generates; samples of a
// batch are detokenized across post_process_workers threads.
PipelineReport run_pipeline(const PipelineOptions& options);

}  // namespace seqgen
