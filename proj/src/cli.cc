#include "seqgen/cli.h"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqgen/accounting.h"
#include "seqgen/errors.h"
#include "seqgen/pipeline.h"

namespace seqgen::cli {

namespace {

using nlohmann::json;

struct CliConfig {
  std::string input;
  std::string output;
  std::string report;
  std::string arch = "encdec";
  size_t layers = 2;
  size_t dim = 16;
  size_t ffn_dim = 0;  // 0: 2 * dim
  size_t vocab_size = 512;
  size_t max_positions = 512;
  uint64_t seed = 1;
  size_t beam = 4;
  size_t batch_size = 32;
  size_t no_repeat_ngram_size = 3;
  size_t min_len = 0;
  size_t max_len = 32;
  float lenpen = 2.0f;
  std::string cache_mode = "dedup";
  std::string ngram_kernel = "parallel";
  size_t ngram_threads = 1;
  std::string pipeline = "async";
  size_t post_workers = 4;
  size_t inject_post_delay_ms = 0;
  size_t repetitions = 10;
};

void add_common_options(CLI::App& app, CliConfig& c) {
  app.add_option("--input", c.input, "Input text, one sample per line")->required();
  app.add_option("--output", c.output, "Output hypotheses, one per line")->required();
  app.add_option("--report", c.report, "Write the JSON report here");
  app.add_option("--arch", c.arch, "Model architecture")->check(CLI::IsMember({"encdec", "prefixlm"}));
  app.add_option("--layers", c.layers, "Decoder layers (and encoder layers for encdec)")->check(CLI::PositiveNumber);
  app.add_option("--dim", c.dim, "Embedding dimension D")->check(CLI::PositiveNumber);
  app.add_option("--ffn-dim", c.ffn_dim, "Feed-forward width (default 2*D)");
  app.add_option("--vocab-size", c.vocab_size, "Vocabulary size including 4 reserved ids")->check(CLI::Range(4, 1 << 24));
  app.add_option("--max-positions", c.max_positions, "Position table size")->check(CLI::PositiveNumber);
  app.add_option("--seed", c.seed, "Weight seed");
  app.add_option("--beam", c.beam, "Beam size M")->check(CLI::PositiveNumber);
  app.add_option("--batch-size", c.batch_size, "Samples per batch")->check(CLI::PositiveNumber);
  app.add_option("--no-repeat-ngram-size", c.no_repeat_ngram_size, "Block repeated n-grams of this size (0 = off)");
  app.add_option("--min-len", c.min_len, "Minimum generated tokens before eos");
  app.add_option("--max-len", c.max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
  app.add_option("--lenpen", c.lenpen, "Length penalty exponent")->check(CLI::NonNegativeNumber);
  app.add_option("--cache-mode", c.cache_mode, "Attention cache strategy")
      ->check(CLI::IsMember({"none", "baseline", "dedup"}));
  app.add_option("--ngram-kernel", c.ngram_kernel, "N-gram blocking kernel")
      ->check(CLI::IsMember({"reference", "parallel"}));
  app.add_option("--ngram-threads", c.ngram_threads, "Worker threads for the parallel n-gram kernel")
      ->check(CLI::PositiveNumber);
  app.add_option("--pipeline", c.pipeline, "Batch pipeline")->check(CLI::IsMember({"sync", "async"}));
  app.add_option("--post-workers", c.post_workers, "Detokenization workers in async mode")->check(CLI::PositiveNumber);
  app.add_option("--inject-post-delay-ms", c.inject_post_delay_ms, "Artificial post-process delay per batch");
}

ModelConfig model_config(const CliConfig& c) {
  ModelConfig m;
  m.kind = parse_arch(c.arch);
  m.num_decoder_layers = c.layers;
  m.num_encoder_layers = m.kind == ArchKind::kEncoderDecoder ? c.layers : 0;
  m.embed_dim = c.dim;
  m.ffn_dim = c.ffn_dim ? c.ffn_dim : 2 * c.dim;
  m.vocab_size = c.vocab_size;
  m.max_positions = c.max_positions;
  return m;
}

PipelineOptions pipeline_options(const CliConfig& c) {
  PipelineOptions o;
  o.input_path = c.input;
  o.output_path = c.output;
  o.model = model_config(c);
  o.seed = c.seed;
  o.generation.beam_size = c.beam;
  o.generation.no_repeat_ngram_size = c.no_repeat_ngram_size;
  o.generation.min_len = c.min_len;
  o.generation.max_len = c.max_len;
  o.generation.length_penalty = c.lenpen;
  o.generation.cache_mode = parse_cache_mode(c.cache_mode);
  o.generation.ngram_kernel = parse_ngram_kernel(c.ngram_kernel);
  o.generation.ngram_threads = c.ngram_threads;
  o.batch_size = c.batch_size;
  o.mode = parse_pipeline_mode(c.pipeline);
  o.post_process_workers = c.post_workers;
  o.injected_post_delay_ms = c.inject_post_delay_ms;
  return o;
}

json config_json(const CliConfig& c) {
  return {{"input", c.input},
          {"output", c.output},
          {"arch", c.arch},
          {"layers", c.layers},
          {"dim", c.dim},
          {"ffn_dim", c.ffn_dim ? c.ffn_dim : 2 * c.dim},
          {"vocab_size", c.vocab_size},
          {"max_positions", c.max_positions},
          {"seed", c.seed},
          {"beam", c.beam},
          {"batch_size", c.batch_size},
          {"no_repeat_ngram_size", c.no_repeat_ngram_size},
          {"min_len", c.min_len},
          {"max_len", c.max_len},
          {"lenpen", c.lenpen},
          {"cache_mode", c.cache_mode},
          {"ngram_kernel", c.ngram_kernel},
          {"ngram_threads", c.ngram_threads},
          {"pipeline", c.pipeline},
          {"post_workers", c.post_workers},
          {"inject_post_delay_ms", c.inject_post_delay_ms},
          {"repetitions", c.repetitions}};
}

MemoryModelInput memory_input(const PipelineOptions& o, size_t source_len, CacheMode mode) {
  MemoryModelInput in;
  in.batch = o.batch_size;
  in.beam = o.generation.beam_size;
  in.source_len = source_len;
  in.output_len = o.generation.max_len;
  in.embed_dim = o.model.embed_dim;
  in.decoder_layers = o.model.num_decoder_layers;
  in.bytes_per_element = 4;
  in.kind = o.model.kind;
  in.mode = mode;
  return in;
}

void add_memory_fields(json& j, const PipelineOptions& o, size_t source_len) {
  const uint64_t baseline = cache_bytes(memory_input(o, source_len, CacheMode::kBaseline));
  const uint64_t dedup = cache_bytes(memory_input(o, source_len, CacheMode::kDedup));
  j["cache_bytes_baseline"] = baseline;
  j["cache_bytes_dedup"] = dedup;
  j["reduction_factor"] = dedup ? static_cast<double>(baseline) / static_cast<double>(dedup) : 0.0;
  j["cache_bytes_transient"] = concat_transient_bytes(memory_input(o, source_len, o.generation.cache_mode));
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_report(const std::string& path, const json& j) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open report file '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("error writing report file '" + path + "'");
}

void print_stages(std::ostream& out, const StageTimes& stages) {
  const double total = stages.total();
  for (size_t i = 0; i < kNumStages; ++i) {
    const auto stage = static_cast<Stage>(i);
    out << "  " << std::left << std::setw(20) << stage_name(stage) << std::right << std::fixed << std::setprecision(4)
        << std::setw(10) << stages[stage] << " s";
    if (total > 0) out << std::setw(8) << std::setprecision(1) << 100.0 * stages[stage] / total << " %";
    out << '\n';
  }
}

int cmd_generate(const CliConfig& c, std::ostream& out) {
  const PipelineOptions options = pipeline_options(c);
  const PipelineReport report = run_pipeline(options);

  json j = to_json(report);
  j["config"] = config_json(c);
  add_memory_fields(j, options, report.max_source_len);
  write_report(c.report, j);

  out << "generated " << report.samples << " samples in " << report.batches << " batches, " << std::fixed
      << std::setprecision(2) << report.samples_per_second << " samples/s\n";
  print_stages(out, report.stages);
  return kExitOk;
}

struct CellResult {
  CacheMode cache_mode;
  NgramKernel kernel;
  PipelineMode pipeline;
  size_t batch_size;
  double mean_samples_per_second = 0;
  StageTimes mean_stages;
};

class Bench {
 public:
  Bench(const CliConfig& c, std::ostream& out) : config_(c), out_(out), base_(pipeline_options(c)) {}

  // Runs one configuration `repetitions` times. Every run's output must match
  // the first reference run byte for byte.
  CellResult run_cell(CacheMode mode, NgramKernel kernel, PipelineMode pipeline, size_t batch_size) {
    PipelineOptions o = base_;
    o.generation.cache_mode = mode;
    o.generation.ngram_kernel = kernel;
    o.mode = pipeline;
    o.batch_size = batch_size;
    o.output_path = scratch_path();

    CellResult cell{mode, kernel, pipeline, batch_size, 0.0, {}};
    for (size_t rep = 0; rep < config_.repetitions; ++rep) {
      const PipelineReport r = run_pipeline(o);
      const std::string produced = read_file(o.output_path);
      if (!reference_) {
        reference_ = produced;
        max_source_len_ = r.max_source_len;
      } else if (produced != *reference_) {
        std::filesystem::remove(o.output_path);
        throw OutputMismatch("outputs of cache_mode=" + std::string(to_string(mode)) +
                             " ngram_kernel=" + std::string(to_string(kernel)) + " pipeline=" +
                             std::string(to_string(pipeline)) + " batch_size=" + std::to_string(batch_size) +
                             " differ from the reference run; no timings reported");
      }
      cell.mean_samples_per_second += r.samples_per_second;
      cell.mean_stages += r.stages;
    }
    std::filesystem::remove(o.output_path);
    const double reps = static_cast<double>(config_.repetitions);
    cell.mean_samples_per_second /= reps;
    for (size_t i = 0; i < kNumStages; ++i) cell.mean_stages[static_cast<Stage>(i)] /= reps;
    return cell;
  }

  int run() {
    std::vector<CellResult> cells;
    for (CacheMode mode : {CacheMode::kNone, CacheMode::kBaseline, CacheMode::kDedup}) {
      for (NgramKernel kernel : {NgramKernel::kReference, NgramKernel::kParallel}) {
        for (PipelineMode pipeline : {PipelineMode::kSync, PipelineMode::kAsync}) {
          cells.push_back(run_cell(mode, kernel, pipeline, base_.batch_size));
        }
      }
    }
    auto find = [&](CacheMode m, NgramKernel k, PipelineMode p) -> const CellResult& {
      for (const CellResult& c : cells) {
        if (c.cache_mode == m && c.kernel == k && c.pipeline == p) return c;
      }
      throw StateError("bench: missing cell");
    };

    const MemoryModelInput baseline_mem = memory_input(base_, max_source_len_, CacheMode::kBaseline);
    MemoryModelInput dedup_mem = memory_input(base_, max_source_len_, CacheMode::kDedup);
    const size_t larger_batch = std::max<size_t>(
        base_.batch_size, static_cast<size_t>(max_batch_under_budget(cache_bytes(baseline_mem), dedup_mem)));
    const CellResult larger =
        run_cell(CacheMode::kDedup, NgramKernel::kParallel, PipelineMode::kAsync, larger_batch);

    struct Row {
      const char* name;
      const CellResult* cell;
    };
    const std::vector<Row> rows = {
        {"no cache", &find(CacheMode::kNone, NgramKernel::kReference, PipelineMode::kSync)},
        {"baseline", &find(CacheMode::kBaseline, NgramKernel::kReference, PipelineMode::kSync)},
        {"+async pipeline", &find(CacheMode::kBaseline, NgramKernel::kReference, PipelineMode::kAsync)},
        {"+parallel n-gram", &find(CacheMode::kBaseline, NgramKernel::kParallel, PipelineMode::kAsync)},
        {"+dedup cache", &find(CacheMode::kDedup, NgramKernel::kParallel, PipelineMode::kAsync)},
        {"+larger batch", &larger},
    };
    const double reference_speed = rows[1].cell->mean_samples_per_second;

    json j;
    j["config"] = config_json(config_);
    add_memory_fields(j, base_, max_source_len_);
    json cell_json = json::array();
    for (const CellResult& c : cells) {
      json stages = json::object();
      for (size_t i = 0; i < kNumStages; ++i) {
        stages[std::string(stage_name(static_cast<Stage>(i)))] = c.mean_stages[static_cast<Stage>(i)];
      }
      cell_json.push_back({{"cache_mode", to_string(c.cache_mode)},
                           {"ngram_kernel", to_string(c.kernel)},
                           {"pipeline", to_string(c.pipeline)},
                           {"samples_per_second", c.mean_samples_per_second},
                           {"stages", stages}});
    }
    j["cells"] = cell_json;

    out_ << "ablation (" << config_.repetitions << " repetitions per row, outputs verified identical)\n";
    out_ << std::left << std::setw(20) << "row" << std::right << std::setw(8) << "batch" << std::setw(12) << "cache MB"
         << std::setw(14) << "samples/s" << std::setw(10) << "speedup" << '\n';
    json ablation = json::array();
    for (const Row& row : rows) {
      MemoryModelInput mem = memory_input(base_, max_source_len_, row.cell->cache_mode);
      mem.batch = row.cell->batch_size;
      const uint64_t bytes = cache_bytes(mem);
      const double speedup = reference_speed > 0 ? row.cell->mean_samples_per_second / reference_speed : 0.0;
      out_ << std::left << std::setw(20) << row.name << std::right << std::setw(8) << row.cell->batch_size
           << std::setw(12) << std::fixed << std::setprecision(3) << static_cast<double>(bytes) / 1e6
           << std::setw(14) << std::setprecision(2) << row.cell->mean_samples_per_second << std::setw(9)
           << std::setprecision(2) << speedup << "x\n";
      ablation.push_back({{"name", row.name},
                          {"batch_size", row.cell->batch_size},
                          {"cache_bytes", bytes},
                          {"samples_per_second", row.cell->mean_samples_per_second},
                          {"speedup", speedup}});
    }
    j["ablation"] = ablation;

    const CellResult& best = *rows[4].cell;
    json stages = json::object();
    for (size_t i = 0; i < kNumStages; ++i) {
      stages[std::string(stage_name(static_cast<Stage>(i)))] = best.mean_stages[static_cast<Stage>(i)];
    }
    j["stages"] = stages;
    j["samples_per_second"] = best.mean_samples_per_second;

    out_ << "stage breakdown, baseline row:\n";
    print_stages(out_, rows[1].cell->mean_stages);
    out_ << "stage breakdown, +dedup cache row:\n";
    print_stages(out_, best.mean_stages);

    // Reference output goes to --output.
    std::ofstream final_out(config_.output, std::ios::binary | std::ios::trunc);
    if (!final_out) throw IoError("cannot open output file '" + config_.output + "'");
    final_out << *reference_;
    write_report(config_.report, j);
    return kExitOk;
  }

  class OutputMismatch : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
  };

 private:
  std::filesystem::path scratch_path() const { return config_.output + ".bench.tmp"; }

  const CliConfig& config_;
  std::ostream& out_;
  PipelineOptions base_;
  std::optional<std::string> reference_;
  size_t max_source_len_ = 0;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sequence generation engine with deduplicated attention caches, parallel n-gram blocking and an "
               "asynchronous batch pipeline"};
  app.name(args.empty() ? "seqgen" : args[0]);
  app.require_subcommand(1);

  CliConfig gen_config, bench_config;
  CLI::App* generate = app.add_subcommand("generate", "Run the batch pipeline once and write hypotheses");
  add_common_options(*generate, gen_config);
  CLI::App* bench = app.add_subcommand("bench", "Benchmark every cache/kernel/pipeline combination");
  add_common_options(*bench, bench_config);
  bench->add_option("--repetitions", bench_config.repetitions, "Runs per configuration")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // CLI11 consumes arguments from the back and expects argv[0] removed.
  std::vector<std::string> reversed;
  for (size_t i = args.size(); i > 1; --i) reversed.push_back(args[i - 1]);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << (app.got_subcommand(generate) ? generate->help()
                                  : app.got_subcommand(bench)  ? bench->help()
                                                               : app.help());
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(generate)) return cmd_generate(gen_config, out);
    return Bench(bench_config, out).run();
  } catch (const Bench::OutputMismatch& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace seqgen::cli
