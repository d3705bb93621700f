#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "declab/decoding.hpp"
#include "declab/kvconfig.hpp"
#include "declab/trainer.hpp"

namespace declab {

enum class EncoderMode { kFrozen, kFinetune, kFromScratch };

const char* encoder_mode_name(EncoderMode m);
EncoderMode encoder_mode_from_name(const std::string& name);

struct TaskRunConfig {
  SynthTaskConfig synth;
  double pairs_per_image = 1.0;
  int dedup_group = -1;
  // Registered (vocabulary, prompt token, datasets) but excluded from the
  // training mixture when false. Keeps model init identical across
  // single-task and multi-task cells.
  bool in_mixture = true;
  std::string metric;  // empty = default for the task category
  std::string decode;  // decode section name; empty = default for the category
};

// Everything needed to reproduce one experiment: architecture, training
// hyperparameters, mixture, conditioning, compression, decoding and seeds.
struct ExperimentConfig {
  std::string name = "experiment";
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  int eval_size = 96;
  std::string analysis = "none";  // none | prompt_confusion | decode_frontier

  ConditioningMode mode = ConditioningMode::kTaskPrompt;
  bool class_remap = false;

  DecoderConfig decoder;  // vocab_size / num_pos_tables / enc_dim derived at build time
  TrainConfig train;

  MixStrategy strategy = MixStrategy::kConcatImages;
  BatchComposition composition = BatchComposition::kMixed;

  EncoderMode encoder_mode = EncoderMode::kFrozen;
  int enc_dim = 64;
  int enc_heads = 4;
  std::uint64_t encoder_seed = 7;  // frozen-encoder init; the "pretrained" weights

  CompressionSpec compression;

  std::vector<TaskRunConfig> tasks;
  std::map<std::string, DecodeParams> decode_sections;  // keyed by section suffix

  KvConfig to_kv() const;
  static ExperimentConfig from_kv(const KvConfig& kv);
  void validate() const;
};

DecodeParams default_decode_params(TaskCategory category, int max_len);

// One (config, seed) training cell, fully wired: registry, datasets,
// encoder, provider, decoder, trainer.
class SeedRun {
 public:
  SeedRun(const ExperimentConfig& cfg, std::uint64_t seed);

  // Trains, evaluates per the config, optionally writes metrics JSON-lines
  // and a checkpoint (plus a flat key-value manifest next to it).
  TrainResult run(const std::string& metrics_path = "", const std::string& checkpoint_path = "");

  // Final eval metric per (task, metric), from the last eval pass.
  const std::map<std::string, std::map<std::string, double>>& finals() const { return finals_; }

  void evaluate(std::int64_t step, std::vector<MetricRecord>& out);

  Decoder& decoder() { return *decoder_; }
  TaskRegistry& registry() { return registry_; }
  EncodedProvider& provider() { return *provider_; }
  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Example>& eval_data(int task) const {
    return eval_data_[static_cast<size_t>(task)];
  }
  const std::vector<Example>& train_data(int task) const {
    return train_data_[static_cast<size_t>(task)];
  }
  const MixtureSpec& mixture() const { return mixture_; }
  CompressionParamsT<float>& compression_params() { return compression_params_; }
  const EmbeddingStore& frozen_store() const { return store_; }

  // Decodes one example with the given params; returns the prediction text.
  std::string predict(const Example& example, const TaskSpec& task, const DecodeParams& params);

  DecodeParams decode_params_for(const TaskSpec& task) const;

  // Conditioned prefix (BOS, prompt, separators, question) for one example.
  std::vector<int> prefix_ids(const Example& example, const TaskSpec& task) const;

  // Restores decoder (and any encoder/compression) parameters from a
  // checkpoint written by run().
  void load_params(const ArrayMap& arrays);

 private:

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  TaskRegistry registry_;
  std::vector<std::vector<Example>> train_data_, eval_data_;
  ToyEncoderParamsT<float> encoder_params_;
  EmbeddingStore store_;
  CompressionParamsT<float> compression_params_;
  std::unique_ptr<EncodedProvider> provider_;
  std::unique_ptr<Decoder> decoder_;
  MixtureSpec mixture_;
  std::map<std::string, std::map<std::string, double>> finals_;
};

// Per-seed metric files plus a mean/stddev summary (the spec's 3-run
// convention). Returns one artifact set per seed.
struct RunOutcome {
  bool any_aborted = false;
  std::vector<std::map<std::string, std::map<std::string, double>>> per_seed_finals;
};

RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Presets and sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
  std::string name;
  std::vector<std::string> overrides;  // "section.key=value"
};

struct Sweep {
  std::string name;
  ExperimentConfig base;
  std::vector<SweepCell> cells;
};

std::vector<std::string> preset_names();
Sweep preset(const std::string& name);

ExperimentConfig apply_cell(const ExperimentConfig& base, const SweepCell& cell);

struct SweepOutcome {
  int cells_run = 0;
  int cells_skipped = 0;
  int cells_failed = 0;
};

// Runs every (cell, seed), skipping cells whose done-marker exists, then
// writes summary.csv and plots under output_dir.
SweepOutcome run_sweep(const Sweep& sweep, const std::string& output_dir,
                       std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct SummaryRow {
  std::string cell, task, metric;
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

void write_metrics_jsonl(const std::string& path, const std::vector<MetricRecord>& records);
// Malformed lines are skipped; *warnings counts them when non-null.
std::vector<MetricRecord> read_metrics_jsonl(const std::string& path, int* warnings = nullptr);

// Final-step records grouped into mean +- sample stddev per (cell, task, metric).
std::vector<SummaryRow> summarize(
    const std::map<std::string, std::vector<std::vector<MetricRecord>>>& per_cell_seed_records);

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(const std::string& path);

// Aggregates already-written metrics files into CSV + SVG plots.
// Never recomputes model outputs.
int report_metrics(const std::vector<std::string>& metric_files, const std::string& output_dir,
                   std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Post-training analyses
// ---------------------------------------------------------------------------

// Cross-prompts every task's prompt against every task's eval images and
// tabulates which task domain the outputs land in.
struct PromptConfusionRow {
  std::string image_task, prompt_task;
  double frac_prompt_domain = 0.0;
  double frac_image_domain = 0.0;
};
std::vector<PromptConfusionRow> prompt_confusion(SeedRun& run);
void write_prompt_confusion(const std::string& dir, const std::vector<PromptConfusionRow>& rows);

// Time/quality frontier over decoding strategies (greedy, temperature,
// top-k, beam at 1/4/8/16, scoring for classification).
struct FrontierRow {
  std::string task, strategy;
  int k = 1;
  double metric_value = 0.0;
  double seconds = 0.0;
};
std::vector<FrontierRow> decode_frontier(SeedRun& run);
// Normalizes per task (best method at 0, slowest at 1) and writes CSV + SVG.
void write_frontier(const std::string& dir, std::vector<FrontierRow> rows);

// True when `text` is a well-formed output for the task's label domain.
bool in_task_domain(const std::string& text, const TaskSpec& task);

}  // namespace declab
