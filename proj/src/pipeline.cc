#include "seqgen/pipeline.h"

#include <algorithm>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "seqgen/concurrency.h"
#include "seqgen/errors.h"

namespace seqgen {

namespace {

const std::string kUnkWord = "<unk>";

struct Interval {
  Clock::time_point begin;
  Clock::time_point end;
};

double overlap_seconds(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  double total = 0;
  for (const Interval& x : a) {
    for (const Interval& y : b) {
      const auto lo = std::max(x.begin, y.begin);
      const auto hi = std::min(x.end, y.end);
      if (hi > lo) total += seconds_between(lo, hi);
    }
  }
  return total;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open input file '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("error reading input file '" + path.string() + "'");
  return lines;
}

struct GeneratedBatch {
  size_t batch_index = 0;
  std::vector<std::vector<TokenId>> hypotheses;
};

class OrderedWriter {
 public:
  explicit OrderedWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open output file '" + path.string() + "'");
  }

  // Buffers a batch and writes every batch that is now contiguous.
  void submit(size_t batch_index, std::vector<std::string> lines) {
    pending_.emplace(batch_index, std::move(lines));
    for (auto it = pending_.find(next_); it != pending_.end(); it = pending_.find(next_)) {
      for (const std::string& line : it->second) out_ << line << '\n';
      pending_.erase(it);
      ++next_;
    }
    if (!out_) throw IoError("error writing output file");
  }

  void close() {
    if (!pending_.empty()) throw StateError("OrderedWriter: batch " + std::to_string(next_) + " never arrived");
    out_.close();
    if (!out_) throw IoError("error closing output file");
  }

 private:
  std::ofstream out_;
  std::map<size_t, std::vector<std::string>> pending_;
  size_t next_ = 0;
};

std::vector<std::string> detokenize_batch(const GeneratedBatch& batch, const Vocab& vocab, WorkerPool* pool) {
  std::vector<std::string> lines(batch.hypotheses.size());
  auto one = [&](size_t i) { lines[i] = detokenize(batch.hypotheses[i], vocab); };
  if (pool) {
    pool->parallel_for(lines.size(), one);
  } else {
    for (size_t i = 0; i < lines.size(); ++i) one(i);
  }
  return lines;
}

GeneratedBatch generate_batch(const WorkBatch& work, const Weights& weights, const PipelineOptions& options,
                              StageTimes& times) {
  GenerateHooks hooks;
  hooks.timings = &times;
  GenerationResult result = generate(work.tokens, weights, options.model, options.generation, hooks);
  GeneratedBatch out;
  out.batch_index = work.batch_index;
  for (Hypothesis& h : result.best) out.hypotheses.push_back(std::move(h.tokens));
  return out;
}

void post_delay(const PipelineOptions& options) {
  if (options.injected_post_delay_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(options.injected_post_delay_ms));
  }
}

}  // namespace

Vocab::Vocab() {
  words_ = {"<pad>", "<s>", "</s>", kUnkWord};
}

const std::string& Vocab::word(TokenId id) const {
  if (id < 0 || static_cast<size_t>(id) >= words_.size() || id == kUnkId) return kUnkWord;
  return words_[static_cast<size_t>(id)];
}

TokenId Vocab::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnkId : it->second;
}

void Vocab::add(std::string_view word) {
  if (contains(word)) return;
  ids_.emplace(std::string(word), static_cast<TokenId>(words_.size()));
  words_.emplace_back(word);
}

Vocab build_vocab(std::span<const std::string> lines, size_t vocab_size) {
  Vocab vocab;
  for (const std::string& line : lines) {
    std::istringstream words(line);
    for (std::string w; words >> w;) {
      if (vocab.size() >= vocab_size) return vocab;
      vocab.add(w);
    }
  }
  return vocab;
}

std::vector<TokenId> tokenize(std::string_view line, const Vocab& vocab, size_t max_positions) {
  const size_t limit = max_positions == 0 ? 0 : max_positions - 1;
  std::vector<TokenId> ids;
  std::istringstream words{std::string(line)};
  for (std::string w; ids.size() < limit && words >> w;) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (!out.empty()) out += ' ';
    out += vocab.word(id);
  }
  return out;
}

std::string_view to_string(PipelineMode mode) {
  return mode == PipelineMode::kSync ? "sync" : "async";
}

PipelineMode parse_pipeline_mode(std::string_view name) {
  if (name == "sync") return PipelineMode::kSync;
  if (name == "async") return PipelineMode::kAsync;
  throw std::invalid_argument("unknown pipeline mode '" + std::string(name) + "'");
}

nlohmann::json to_json(const PipelineReport& report) {
  nlohmann::json stages = nlohmann::json::object();
  for (size_t i = 0; i < kNumStages; ++i) {
    const auto stage = static_cast<Stage>(i);
    stages[std::string(stage_name(stage))] = report.stages[stage];
  }
  return {
      {"stages", stages},
      {"samples", report.samples},
      {"batches", report.batches},
      {"max_source_len", report.max_source_len},
      {"end_to_end_seconds", report.end_to_end_seconds},
      {"end_to_end_seconds_with_load", report.end_to_end_seconds_with_load},
      {"samples_per_second", report.samples_per_second},
      {"samples_per_second_with_load", report.samples_per_second_with_load},
      {"overlap_seconds", report.overlap_seconds},
      {"generation_seconds_per_batch", report.generation_seconds_per_batch},
  };
}

WorkBatch make_work_batch(size_t batch_index, size_t first_sample, std::span<const std::string> lines,
                          const Vocab& vocab, const ModelConfig& model, const GenerationConfig& generation) {
  WorkBatch batch;
  batch.batch_index = batch_index;
  std::vector<std::vector<TokenId>> rows;
  rows.reserve(lines.size());
  for (size_t i = 0; i < lines.size(); ++i) {
    batch.sample_indices.push_back(first_sample + i);
    if (model.kind == ArchKind::kEncoderDecoder) {
      rows.push_back(tokenize(lines[i], vocab, model.max_positions));
      rows.back().push_back(kEosId);
    } else {
      // Generated tokens occupy positions len .. len + max_len - 1.
      rows.push_back(tokenize(lines[i], vocab, model.max_positions - generation.max_len + 1));
    }
  }
  batch.tokens = TokenMatrix::from_rows(rows);
  return batch;
}

PipelineReport run_pipeline(const PipelineOptions& options) {
  options.model.validate();
  options.generation.validate();
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (options.generation.max_len >= options.model.max_positions) {
    throw std::invalid_argument("max_len must be below max_positions");
  }

  PipelineReport report;
  const auto load_begin = Clock::now();
  const Weights weights = init_weights(options.seed, options.model);
  report.stages[Stage::kModelLoad] = seconds_between(load_begin, Clock::now());

  const auto begin = Clock::now();
  std::vector<std::string> lines;
  Vocab vocab;
  {
    StageTimer t(&report.stages, Stage::kPreprocess);
    lines = read_lines(options.input_path);
    vocab = build_vocab(lines, options.model.vocab_size);
  }
  report.samples = lines.size();
  report.batches = (lines.size() + options.batch_size - 1) / options.batch_size;

  std::vector<size_t> batch_widths(report.batches);
  auto slice = [&](size_t i) {
    const size_t first = i * options.batch_size;
    const size_t count = std::min(options.batch_size, lines.size() - first);
    WorkBatch work = make_work_batch(i, first, std::span<const std::string>(lines).subspan(first, count), vocab,
                                     options.model, options.generation);
    batch_widths[i] = work.tokens.cols();
    return work;
  };

  OrderedWriter writer(options.output_path);
  std::vector<Interval> gen_intervals(report.batches);
  std::vector<Interval> post_intervals(report.batches);
  report.generation_seconds_per_batch.resize(report.batches);

  if (options.mode == PipelineMode::kSync) {
    for (size_t i = 0; i < report.batches; ++i) {
      WorkBatch work = [&] {
        StageTimer t(&report.stages, Stage::kPreprocess);
        return slice(i);
      }();
      gen_intervals[i].begin = Clock::now();
      GeneratedBatch generated = generate_batch(work, weights, options, report.stages);
      gen_intervals[i].end = Clock::now();

      post_intervals[i].begin = gen_intervals[i].end;
      writer.submit(i, detokenize_batch(generated, vocab, nullptr));
      post_delay(options);
      post_intervals[i].end = Clock::now();
      report.stages[Stage::kPostProcess] += seconds_between(post_intervals[i].begin, post_intervals[i].end);
    }
    writer.close();
  } else {
    BoundedQueue<WorkBatch> to_generate(2);
    BoundedQueue<GeneratedBatch> to_post(2);
    StageTimes pre_times, gen_times, post_times;
    std::exception_ptr errors[3];
    auto fail = [&](int stage) {
      errors[stage] = std::current_exception();
      to_generate.close();
      to_post.close();
    };

    std::thread preprocess([&] {
      try {
        for (size_t i = 0; i < report.batches; ++i) {
          WorkBatch work = [&] {
            StageTimer t(&pre_times, Stage::kPreprocess);
            return slice(i);
          }();
          to_generate.push(std::move(work));
        }
        to_generate.close();
      } catch (...) {
        fail(0);
      }
    });

    std::thread generation([&] {
      try {
        while (auto work = to_generate.pop()) {
          const size_t i = work->batch_index;
          gen_intervals[i].begin = Clock::now();
          GeneratedBatch generated = generate_batch(*work, weights, options, gen_times);
          gen_intervals[i].end = Clock::now();
          to_post.push(std::move(generated));
        }
        to_post.close();
      } catch (...) {
        fail(1);
      }
    });

    std::thread post_process([&] {
      try {
        WorkerPool detokenizers(options.post_process_workers);
        while (auto generated = to_post.pop()) {
          const size_t i = generated->batch_index;
          post_intervals[i].begin = Clock::now();
          writer.submit(i, detokenize_batch(*generated, vocab, &detokenizers));
          post_delay(options);
          post_intervals[i].end = Clock::now();
          post_times[Stage::kPostProcess] += seconds_between(post_intervals[i].begin, post_intervals[i].end);
        }
        writer.close();
      } catch (...) {
        fail(2);
      }
    });

    preprocess.join();
    generation.join();
    post_process.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    report.stages += pre_times;
    report.stages += gen_times;
    report.stages += post_times;
  }

  const auto end = Clock::now();
  for (size_t i = 0; i < report.batches; ++i) {
    report.generation_seconds_per_batch[i] = seconds_between(gen_intervals[i].begin, gen_intervals[i].end);
  }
  report.overlap_seconds = overlap_seconds(gen_intervals, post_intervals);
  for (size_t w : batch_widths) report.max_source_len = std::max(report.max_source_len, w);
  report.end_to_end_seconds = seconds_between(begin, end);
  report.end_to_end_seconds_with_load = report.end_to_end_seconds + report.stages[Stage::kModelLoad];
  if (report.end_to_end_seconds > 0) {
    report.samples_per_second = static_cast<double>(report.samples) / report.end_to_end_seconds;
    report.samples_per_second_with_load = static_cast<double>(report.samples) / report.end_to_end_seconds_with_load;
  }
  return report;
}

}  // namespace seqgen
