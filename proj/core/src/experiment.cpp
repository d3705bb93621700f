#include "declab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "declab/errors.hpp"
#include "declab/metrics.hpp"
#include "declab/svg.hpp"

namespace fs = std::filesystem;

namespace declab {

const char* encoder_mode_name(EncoderMode m) {
  switch (m) {
    case EncoderMode::kFrozen: return "frozen";
    case EncoderMode::kFinetune: return "finetune";
    case EncoderMode::kFromScratch: return "from_scratch";
  }
  return "?";
}

EncoderMode encoder_mode_from_name(const std::string& name) {
  for (EncoderMode m : {EncoderMode::kFrozen, EncoderMode::kFinetune, EncoderMode::kFromScratch})
    if (name == encoder_mode_name(m)) return m;
  throw ConfigError("unknown encoder mode '" + name + "'");
}

DecodeParams default_decode_params(TaskCategory category, int max_len) {
  DecodeParams p;
  p.max_len = max_len;
  if (category == TaskCategory::kCap || category == TaskCategory::kOcr) {
    p.strategy = DecodeParams::Strategy::kBeam;
    p.k = 4;
    p.gumbel_scale = 0.0;
    p.length_norm_alpha = 0.1;
  } else {
    p.strategy = DecodeParams::Strategy::kGreedy;
  }
  return p;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (tasks.empty()) throw ConfigError("experiment needs at least one task");
  if (eval_size < 1) throw ConfigError("eval_size must be >= 1");
  int grid = tasks[0].synth.grid;
  bool any_mixture = false;
  for (const TaskRunConfig& t : tasks) {
    if (t.synth.grid != grid) throw ConfigError("all tasks must share one glyph grid size");
    any_mixture = any_mixture || t.in_mixture;
  }
  if (!any_mixture) throw ConfigError("at least one task must be in the mixture");
  if (compression.mode != CompressionSpec::Mode::kNone && encoder_mode != EncoderMode::kFrozen)
    throw ConfigError("token compression requires a frozen encoder");
  train.validate();
}

KvConfig ExperimentConfig::to_kv() const {
  KvConfig kv;
  kv.set("experiment", "name", name);
  kv.set("experiment", "output_dir", output_dir);
  std::string seed_list;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (i) seed_list += ",";
    seed_list += std::to_string(seeds[i]);
  }
  kv.set("experiment", "seeds", seed_list);
  kv.set_int("experiment", "eval_size", eval_size);
  kv.set("experiment", "analysis", analysis);
  kv.set("experiment", "conditioning", conditioning_mode_name(mode));
  kv.set_bool("experiment", "class_remap", class_remap);

  kv.set_int("decoder", "depth", decoder.depth);
  kv.set_int("decoder", "model_dim", decoder.model_dim);
  kv.set_int("decoder", "heads", decoder.heads);
  kv.set_int("decoder", "mlp_dim", decoder.mlp_dim);
  kv.set_int("decoder", "max_len", decoder.max_len);
  kv.set_bool("decoder", "tie_embeddings", decoder.tie_embeddings);

  kv.set_double("train", "learning_rate", train.learning_rate);
  kv.set_double("train", "weight_decay", train.weight_decay);
  kv.set_double("train", "dropout", train.dropout);
  kv.set_double("train", "label_smoothing", train.label_smoothing);
  kv.set_double("train", "grad_clip_norm", train.grad_clip_norm);
  kv.set_int("train", "epochs", train.epochs);
  kv.set_int("train", "batch_size", train.batch_size);
  kv.set("train", "schedule", schedule_name(train.schedule));
  kv.set_double("train", "warmup_fraction", train.warmup_fraction);
  kv.set_int("train", "eval_every_epochs", train.eval_every_epochs);
  kv.set_double("train", "encoder_lr_multiplier", train.encoder_lr_multiplier);

  kv.set("mixture", "strategy", mix_strategy_name(strategy));
  kv.set("mixture", "composition", batch_composition_name(composition));

  kv.set("encoder", "mode", encoder_mode_name(encoder_mode));
  kv.set_int("encoder", "enc_dim", enc_dim);
  kv.set_int("encoder", "heads", enc_heads);
  kv.set_int("encoder", "seed", static_cast<std::int64_t>(encoder_seed));

  kv.set("compression", "mode", CompressionSpec::mode_name(compression.mode));
  kv.set_int("compression", "reduction", compression.reduction);

  for (const TaskRunConfig& t : tasks) {
    std::string s = "task." + t.synth.name;
    kv.set(s, "kind", task_kind_name(t.synth.kind));
    kv.set_int(s, "size", t.synth.size);
    kv.set_int(s, "seed", static_cast<std::int64_t>(t.synth.seed));
    kv.set(s, "language", t.synth.language);
    kv.set_double(s, "vocab_overlap", t.synth.vocab_overlap);
    kv.set_int(s, "grid", t.synth.grid);
    kv.set_int(s, "digit_cells", t.synth.digit_cells);
    kv.set_double(s, "pairs_per_image", t.pairs_per_image);
    kv.set_int(s, "dedup_group", t.dedup_group);
    kv.set_bool(s, "in_mixture", t.in_mixture);
    kv.set(s, "metric", t.metric);
    kv.set(s, "decode", t.decode);
  }

  for (const auto& [suffix, p] : decode_sections) {
    std::string s = "decode." + suffix;
    kv.set(s, "strategy", DecodeParams::strategy_name(p.strategy));
    kv.set_double(s, "temperature", p.temperature);
    kv.set_int(s, "k", p.k);
    kv.set_double(s, "gumbel", p.gumbel_scale);
    kv.set_double(s, "alpha", p.length_norm_alpha);
    kv.set_int(s, "max_len", p.max_len);
    kv.set_int(s, "seed", static_cast<std::int64_t>(p.seed));
  }
  return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const KvConfig& kv) {
  ExperimentConfig cfg;
  cfg.name = kv.get_or("experiment", "name", cfg.name);
  cfg.output_dir = kv.get_or("experiment", "output_dir", cfg.output_dir);
  if (kv.has("experiment", "seeds")) {
    cfg.seeds.clear();
    std::istringstream in(kv.get("experiment", "seeds"));
    std::string item;
    while (std::getline(in, item, ','))
      if (!item.empty()) cfg.seeds.push_back(std::stoull(item));
  }
  if (kv.has("experiment", "eval_size")) cfg.eval_size = kv.get_int("experiment", "eval_size");
  cfg.analysis = kv.get_or("experiment", "analysis", cfg.analysis);
  if (kv.has("experiment", "conditioning"))
    cfg.mode = conditioning_mode_from_name(kv.get("experiment", "conditioning"));
  if (kv.has("experiment", "class_remap"))
    cfg.class_remap = kv.get_bool("experiment", "class_remap");

  if (kv.has_section("decoder")) {
    cfg.decoder.depth = kv.has("decoder", "depth") ? kv.get_int("decoder", "depth") : cfg.decoder.depth;
    if (kv.has("decoder", "model_dim")) cfg.decoder.model_dim = kv.get_int("decoder", "model_dim");
    if (kv.has("decoder", "heads")) cfg.decoder.heads = kv.get_int("decoder", "heads");
    if (kv.has("decoder", "mlp_dim")) cfg.decoder.mlp_dim = kv.get_int("decoder", "mlp_dim");
    if (kv.has("decoder", "max_len")) cfg.decoder.max_len = kv.get_int("decoder", "max_len");
    if (kv.has("decoder", "tie_embeddings"))
      cfg.decoder.tie_embeddings = kv.get_bool("decoder", "tie_embeddings");
  }

  if (kv.has_section("train")) {
    if (kv.has("train", "learning_rate")) cfg.train.learning_rate = kv.get_double("train", "learning_rate");
    if (kv.has("train", "weight_decay")) cfg.train.weight_decay = kv.get_double("train", "weight_decay");
    if (kv.has("train", "dropout")) cfg.train.dropout = kv.get_double("train", "dropout");
    if (kv.has("train", "label_smoothing"))
      cfg.train.label_smoothing = kv.get_double("train", "label_smoothing");
    if (kv.has("train", "grad_clip_norm"))
      cfg.train.grad_clip_norm = kv.get_double("train", "grad_clip_norm");
    if (kv.has("train", "epochs")) cfg.train.epochs = kv.get_int("train", "epochs");
    if (kv.has("train", "batch_size")) cfg.train.batch_size = kv.get_int("train", "batch_size");
    if (kv.has("train", "schedule"))
      cfg.train.schedule = schedule_from_name(kv.get("train", "schedule"));
    if (kv.has("train", "warmup_fraction"))
      cfg.train.warmup_fraction = kv.get_double("train", "warmup_fraction");
    if (kv.has("train", "eval_every_epochs"))
      cfg.train.eval_every_epochs = kv.get_int("train", "eval_every_epochs");
    if (kv.has("train", "encoder_lr_multiplier"))
      cfg.train.encoder_lr_multiplier = kv.get_double("train", "encoder_lr_multiplier");
  }

  if (kv.has("mixture", "strategy"))
    cfg.strategy = mix_strategy_from_name(kv.get("mixture", "strategy"));
  if (kv.has("mixture", "composition"))
    cfg.composition = batch_composition_from_name(kv.get("mixture", "composition"));

  if (kv.has("encoder", "mode")) cfg.encoder_mode = encoder_mode_from_name(kv.get("encoder", "mode"));
  if (kv.has("encoder", "enc_dim")) cfg.enc_dim = kv.get_int("encoder", "enc_dim");
  if (kv.has("encoder", "heads")) cfg.enc_heads = kv.get_int("encoder", "heads");
  if (kv.has("encoder", "seed")) cfg.encoder_seed = kv.get_u64("encoder", "seed");

  if (kv.has("compression", "mode")) {
    std::string m = kv.get("compression", "mode");
    if (m == "none") cfg.compression.mode = CompressionSpec::Mode::kNone;
    else if (m == "map_pool") cfg.compression.mode = CompressionSpec::Mode::kMapPool;
    else if (m == "bottleneck") cfg.compression.mode = CompressionSpec::Mode::kBottleneck;
    else throw ConfigError("unknown compression mode '" + m + "'");
  }
  if (kv.has("compression", "reduction"))
    cfg.compression.reduction = kv.get_int("compression", "reduction");

  for (const std::string& section : kv.sections_with_prefix("task.")) {
    TaskRunConfig t;
    t.synth.name = section.substr(5);
    t.synth.kind = task_kind_from_name(kv.get(section, "kind"));
    t.synth.size = kv.get_int(section, "size");
    t.synth.seed = kv.get_u64(section, "seed");
    t.synth.language = kv.get_or(section, "language", "en");
    if (kv.has(section, "vocab_overlap"))
      t.synth.vocab_overlap = kv.get_double(section, "vocab_overlap");
    if (kv.has(section, "grid")) t.synth.grid = kv.get_int(section, "grid");
    if (kv.has(section, "digit_cells")) t.synth.digit_cells = kv.get_int(section, "digit_cells");
    if (kv.has(section, "pairs_per_image"))
      t.pairs_per_image = kv.get_double(section, "pairs_per_image");
    if (kv.has(section, "dedup_group")) t.dedup_group = kv.get_int(section, "dedup_group");
    if (kv.has(section, "in_mixture")) t.in_mixture = kv.get_bool(section, "in_mixture");
    t.metric = kv.get_or(section, "metric", "");
    t.decode = kv.get_or(section, "decode", "");
    cfg.tasks.push_back(std::move(t));
  }

  for (const std::string& section : kv.sections_with_prefix("decode.")) {
    DecodeParams p;
    p.strategy = DecodeParams::strategy_from_name(kv.get(section, "strategy"));
    if (kv.has(section, "temperature")) p.temperature = kv.get_double(section, "temperature");
    if (kv.has(section, "k")) p.k = kv.get_int(section, "k");
    if (kv.has(section, "gumbel")) p.gumbel_scale = kv.get_double(section, "gumbel");
    if (kv.has(section, "alpha")) p.length_norm_alpha = kv.get_double(section, "alpha");
    if (kv.has(section, "max_len")) p.max_len = kv.get_int(section, "max_len");
    if (kv.has(section, "seed")) p.seed = kv.get_u64(section, "seed");
    cfg.decode_sections.emplace(section.substr(7), p);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// SeedRun
// ---------------------------------------------------------------------------

SeedRun::SeedRun(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  for (const TaskRunConfig& t : cfg_.tasks) {
    std::string metric = t.metric;
    if (metric.empty())
      metric = category_of(t.synth.kind) == TaskCategory::kCap ? "cider" : "exact_match";
    registry_.add_task(t.synth, metric);
  }
  if (cfg_.class_remap) {
    for (TaskSpec& spec : registry_.tasks())
      if (spec.category == TaskCategory::kCls) class_token_remap(spec, registry_.vocab());
  }
  if (cfg_.mode == ConditioningMode::kCategoryPrompt) {
    // Category tokens must exist before the vocabulary size is frozen.
    for (TaskSpec& spec : registry_.tasks()) category_token(registry_, spec.category);
  }
  int n_tables = 1;
  if (cfg_.mode == ConditioningMode::kTaskPositionEmbeddings)
    n_tables = registry_.assign_pos_tables();

  for (const TaskRunConfig& t : cfg_.tasks) {
    train_data_.push_back(generate(t.synth));
    SynthTaskConfig ev = t.synth;
    ev.seed = Rng::derive(t.synth.seed, "eval_split");
    ev.size = cfg_.eval_size;
    eval_data_.push_back(generate(ev));
  }

  ToyEncoderConfig ecfg;
  ecfg.feat_dim = kPatchFeatureDim;
  ecfg.n_patches = cfg_.tasks[0].synth.grid * cfg_.tasks[0].synth.grid;
  ecfg.enc_dim = cfg_.enc_dim;
  ecfg.heads = cfg_.enc_heads;
  bool trainable = cfg_.encoder_mode != EncoderMode::kFrozen;
  std::uint64_t enc_seed = cfg_.encoder_mode == EncoderMode::kFromScratch
                               ? Rng::derive(seed_, "encoder_from_scratch")
                               : cfg_.encoder_seed;
  encoder_params_.init(ecfg, enc_seed, trainable);

  if (!trainable) {
    for (const auto* split : {&train_data_, &eval_data_}) {
      for (const auto& dataset : *split) {
        for (const Example& ex : dataset) {
          FeatureGrid g = render(ex.image);
          Tensor feats = Tensor::from({g.n, g.f}, std::move(g.values));
          store_.emplace(ex.id, from_tensor(toy_encode<float>(nullptr, feats, encoder_params_,
                                                              false)));
        }
      }
    }
    if (cfg_.compression.mode != CompressionSpec::Mode::kNone) {
      Rng crng(Rng::derive(seed_, "compression_init"));
      compression_params_.init(cfg_.compression, cfg_.enc_dim, crng, true);
      provider_ = std::make_unique<CompressionProvider>(store_, compression_params_, cfg_.enc_heads);
    } else {
      provider_ = std::make_unique<StoreProvider>(store_);
    }
  } else {
    provider_ = std::make_unique<ToyEncoderProvider>(encoder_params_, true);
  }

  DecoderConfig dcfg = cfg_.decoder;
  dcfg.vocab_size = registry_.vocab().size();
  dcfg.num_pos_tables = n_tables;
  dcfg.dropout_rate = cfg_.train.dropout;
  dcfg.enc_dim = cfg_.enc_dim;
  decoder_ = std::make_unique<Decoder>(dcfg, seed_);

  mixture_.strategy = cfg_.strategy;
  mixture_.composition = cfg_.composition;
  mixture_.batch_size = cfg_.train.batch_size;
  mixture_.seed = Rng::derive(seed_, "mixture");
  for (const TaskRunConfig& t : cfg_.tasks) {
    if (!t.in_mixture) continue;
    mixture_.tasks.push_back({t.synth.name, t.synth.size, t.pairs_per_image, t.dedup_group});
  }
}

std::vector<int> SeedRun::prefix_ids(const Example& example, const TaskSpec& task) const {
  auto& self = const_cast<SeedRun&>(*this);
  BuiltSequence seq =
      build_sequence(example, task, cfg_.mode, self.registry_, decoder_->config().max_len);
  return std::vector<int>(seq.ids.begin(), seq.ids.begin() + seq.prefix_len);
}

DecodeParams SeedRun::decode_params_for(const TaskSpec& task) const {
  for (const TaskRunConfig& t : cfg_.tasks) {
    if (t.synth.name != task.name) continue;
    if (!t.decode.empty()) {
      auto it = cfg_.decode_sections.find(t.decode);
      if (it == cfg_.decode_sections.end())
        throw ConfigError("task '" + task.name + "' references missing decode section '" +
                          t.decode + "'");
      return it->second;
    }
  }
  auto it = cfg_.decode_sections.find("default");
  if (it != cfg_.decode_sections.end()) return it->second;
  return default_decode_params(task.category, decoder_->config().max_len);
}

std::string SeedRun::predict(const Example& example, const TaskSpec& task,
                             const DecodeParams& params) {
  Tensor encoded = provider_->get(example, nullptr, false);
  std::vector<int> prefix = prefix_ids(example, task);
  int pos_table = cfg_.mode == ConditioningMode::kTaskPositionEmbeddings ? task.pos_table : 0;
  if (params.strategy == DecodeParams::Strategy::kScoreClasses) {
    std::vector<std::string> labels = class_labels(task.dataset);
    if (labels.empty()) throw ContractError("score_classes needs a closed label set");
    std::vector<std::vector<int>> candidates;
    candidates.reserve(labels.size());
    for (const std::string& label : labels) {
      std::vector<int> ids;
      if (task.class_remap)
        ids.push_back(task.class_token_of.at(label));
      else
        ids = registry_.vocab().tokenize(label);
      ids.push_back(kEosId);
      candidates.push_back(std::move(ids));
    }
    ScoreClassesResult sc =
        score_classes(*decoder_, encoded, prefix, candidates, pos_table);
    return labels[static_cast<size_t>(sc.best_index)];
  }
  DecodeResult res = decode(*decoder_, encoded, prefix, params, nullptr, pos_table);
  return registry_.vocab().detokenize(res.ids);
}

void SeedRun::evaluate(std::int64_t step, std::vector<MetricRecord>& out) {
  for (const MixtureTask& mt : mixture_.tasks) {
    const TaskSpec& task = registry_.task(mt.name);
    int task_index = -1;
    for (size_t i = 0; i < cfg_.tasks.size(); ++i)
      if (cfg_.tasks[i].synth.name == mt.name) task_index = static_cast<int>(i);
    const std::vector<Example>& data = eval_data_[static_cast<size_t>(task_index)];
    DecodeParams params = decode_params_for(task);
    double value = 0.0;
    if (task.metric == "cider") {
      std::vector<std::string> candidates;
      std::vector<std::vector<std::string>> references;
      for (const Example& ex : data) {
        candidates.push_back(predict(ex, task, params));
        references.push_back({ex.target_text});
      }
      value = cider(candidates, references);
    } else {
      double hits = 0.0;
      for (const Example& ex : data)
        hits += exact_match(predict(ex, task, params), ex.target_text);
      value = 100.0 * hits / static_cast<double>(data.size());
    }
    out.push_back({step, task.name, task.metric, value});
    finals_[task.name][task.metric] = value;
  }
}

void SeedRun::load_params(const ArrayMap& arrays) {
  decoder_->from_arrays(arrays);
  auto restore = [&arrays](const std::string& name, Tensor& t) {
    auto it = arrays.find(name);
    if (it == arrays.end()) return;
    if (it->second.shape != t.shape())
      throw FormatError("checkpoint array '" + name + "' has wrong shape");
    std::copy(it->second.data.begin(), it->second.data.end(), t.data());
  };
  encoder_params_.for_each_named(restore);
  compression_params_.for_each_named(restore);
}

TrainResult SeedRun::run(const std::string& metrics_path, const std::string& checkpoint_path) {
  TrainConfig tc = cfg_.train;
  tc.seed = seed_;
  Trainer trainer(*decoder_, *provider_, registry_, cfg_.mode, tc);
  std::vector<const std::vector<Example>*> datasets;
  for (const MixtureTask& mt : mixture_.tasks) {
    for (size_t i = 0; i < cfg_.tasks.size(); ++i)
      if (cfg_.tasks[i].synth.name == mt.name)
        datasets.push_back(&train_data_[i]);
  }
  TrainResult result = trainer.train(
      mixture_, datasets,
      [this](std::int64_t step, std::vector<MetricRecord>& out) { evaluate(step, out); },
      checkpoint_path);
  if (!metrics_path.empty()) write_metrics_jsonl(metrics_path, result.records);
  if (!checkpoint_path.empty()) {
    KvConfig manifest;
    for (const auto& [k, v] : decoder_config_to_kv(decoder_->config())) manifest.set("decoder", k, v);
    manifest.set("experiment", "name", cfg_.name);
    manifest.set("experiment", "conditioning", conditioning_mode_name(cfg_.mode));
    manifest.save(checkpoint_path + ".meta");
  }
  return result;
}

// ---------------------------------------------------------------------------
// run_experiment / sweeps
// ---------------------------------------------------------------------------

RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  RunOutcome outcome;
  std::map<std::string, std::vector<std::vector<MetricRecord>>> cell_records;
  auto& seed_records = cell_records[cfg.name];
  for (std::uint64_t seed : cfg.seeds) {
    std::string metrics_path = cfg.output_dir + "/seed" + std::to_string(seed) + ".jsonl";
    std::string ckpt_path = cfg.output_dir + "/seed" + std::to_string(seed) + ".litd";
    SeedRun run(cfg, seed);
    TrainResult result = run.run(metrics_path, ckpt_path);
    outcome.any_aborted = outcome.any_aborted || result.aborted;
    outcome.per_seed_finals.push_back(run.finals());
    seed_records.push_back(result.records);
    if (log)
      *log << "[run] " << cfg.name << " seed " << seed << (result.aborted ? " ABORTED" : " done")
           << " steps=" << result.steps << "\n";
    if (cfg.analysis == "prompt_confusion") {
      write_prompt_confusion(cfg.output_dir + "/prompt_confusion_seed" + std::to_string(seed),
                             prompt_confusion(run));
    } else if (cfg.analysis == "decode_frontier") {
      write_frontier(cfg.output_dir + "/frontier_seed" + std::to_string(seed),
                     decode_frontier(run));
    }
  }
  write_summary_csv(cfg.output_dir + "/summary.csv", summarize(cell_records));
  return outcome;
}

ExperimentConfig apply_cell(const ExperimentConfig& base, const SweepCell& cell) {
  KvConfig kv = base.to_kv();
  for (const std::string& o : cell.overrides) kv.apply_override(o);
  ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
  cfg.name = cell.name;
  return cfg;
}

SweepOutcome run_sweep(const Sweep& sweep, const std::string& output_dir, std::ostream* log) {
  SweepOutcome outcome;
  fs::create_directories(output_dir + "/cells");
  std::map<std::string, std::vector<std::vector<MetricRecord>>> cell_records;
  for (const SweepCell& cell : sweep.cells) {
    std::string cell_dir = output_dir + "/cells/" + cell.name;
    std::string marker = cell_dir + "/done";
    if (fs::exists(marker)) {
      outcome.cells_skipped++;
      if (log) *log << "[sweep] skip completed cell " << cell.name << "\n";
      // Re-read records so the summary still covers skipped cells.
      ExperimentConfig cfg = apply_cell(sweep.base, cell);
      auto& seed_records = cell_records[cell.name];
      for (std::uint64_t seed : cfg.seeds) {
        std::string metrics_path = cell_dir + "/seed" + std::to_string(seed) + ".jsonl";
        if (fs::exists(metrics_path)) seed_records.push_back(read_metrics_jsonl(metrics_path));
      }
      continue;
    }
    try {
      ExperimentConfig cfg = apply_cell(sweep.base, cell);
      cfg.output_dir = cell_dir;
      if (log) *log << "[sweep] cell " << cell.name << " (" << cfg.seeds.size() << " seeds)\n";
      run_experiment(cfg, log);
      auto& seed_records = cell_records[cell.name];
      for (std::uint64_t seed : cfg.seeds)
        seed_records.push_back(
            read_metrics_jsonl(cell_dir + "/seed" + std::to_string(seed) + ".jsonl"));
      std::ofstream(marker) << "ok\n";
      outcome.cells_run++;
    } catch (const Error& e) {
      outcome.cells_failed++;
      if (log) *log << "[sweep] cell " << cell.name << " FAILED: " << e.what() << "\n";
    }
  }
  std::vector<SummaryRow> rows = summarize(cell_records);
  write_summary_csv(output_dir + "/summary.csv", rows);

  // One bar chart per metric: cells x tasks.
  std::map<std::string, std::vector<const SummaryRow*>> by_metric;
  for (const SummaryRow& r : rows)
    if (r.metric != "loss") by_metric[r.metric].push_back(&r);
  for (const auto& [metric, metric_rows] : by_metric) {
    std::vector<std::string> cells;
    std::map<std::string, std::map<std::string, double>> values;  // task -> cell -> mean
    for (const SummaryRow* r : metric_rows) {
      if (std::find(cells.begin(), cells.end(), r->cell) == cells.end()) cells.push_back(r->cell);
      values[r->task][r->cell] = r->mean;
    }
    SvgPlot plot(900, 420, sweep.name + ": " + metric);
    plot.set_axis_labels("cell", metric);
    plot.set_bar_labels(cells);
    for (const auto& [task, cell_vals] : values) {
      std::vector<double> series;
      for (const std::string& c : cells) {
        auto it = cell_vals.find(c);
        series.push_back(it == cell_vals.end() ? 0.0 : it->second);
      }
      plot.add_bars(task, series);
    }
    plot.save(output_dir + "/" + metric + ".svg");
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Analyses
// ---------------------------------------------------------------------------

bool in_task_domain(const std::string& text, const TaskSpec& task) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string w;
  while (in >> w) words.push_back(w);
  auto member = [](const std::vector<std::string>& set, const std::string& word) {
    return std::find(set.begin(), set.end(), word) != set.end();
  };
  switch (task.category) {
    case TaskCategory::kCls:
      return words.size() == 1 && member(glyph_names(), words[0]);
    case TaskCategory::kOcr: {
      if (words.empty()) return false;
      for (const std::string& word : words)
        if (!member(digit_words(), word)) return false;
      return true;
    }
    case TaskCategory::kQa:
      return words.size() == 1 && member(count_words(), words[0]);
    case TaskCategory::kCap: {
      if (words.size() != 5) return false;
      const SynthTaskConfig& c = task.dataset;
      // Checked against the caption template; remapped-language tasks check
      // their own remapped word surfaces.
      auto in_remapped = [&](const std::vector<std::string>& base, const std::string& word) {
        std::uint64_t lang_seed = language_remap_seed(c.language);
        for (const std::string& b : base)
          if (remap_word(b, c.language, c.vocab_overlap, lang_seed) == word) return true;
        return false;
      };
      return in_remapped(count_words(), words[0]) && in_remapped(color_names(), words[1]) &&
             in_remapped(glyph_names(), words[2]) && in_remapped({"at"}, words[3]) &&
             in_remapped(row_words(), words[4]);
    }
  }
  return false;
}

std::vector<PromptConfusionRow> prompt_confusion(SeedRun& run) {
  if (run.config().mode != ConditioningMode::kTaskPrompt)
    throw ConfigError("prompt_confusion requires task-prompt conditioning");
  std::vector<PromptConfusionRow> rows;
  const auto& mixture = run.mixture();
  int cap = std::min(48, run.config().eval_size);
  for (size_t r = 0; r < mixture.tasks.size(); ++r) {
    int image_task_index = -1;
    for (size_t i = 0; i < run.config().tasks.size(); ++i)
      if (run.config().tasks[i].synth.name == mixture.tasks[r].name)
        image_task_index = static_cast<int>(i);
    const TaskSpec& image_task = run.registry().task(mixture.tasks[r].name);
    for (size_t p = 0; p < mixture.tasks.size(); ++p) {
      const TaskSpec& prompt_task = run.registry().task(mixture.tasks[p].name);
      DecodeParams params = run.decode_params_for(prompt_task);
      if (params.strategy == DecodeParams::Strategy::kScoreClasses)
        params = default_decode_params(prompt_task.category, params.max_len);
      int n = 0, in_prompt = 0, in_image = 0;
      const auto& data = run.eval_data(image_task_index);
      for (int i = 0; i < cap && i < static_cast<int>(data.size()); ++i) {
        std::string out = run.predict(data[static_cast<size_t>(i)], prompt_task, params);
        n++;
        in_prompt += in_task_domain(out, prompt_task) ? 1 : 0;
        in_image += in_task_domain(out, image_task) ? 1 : 0;
      }
      rows.push_back({image_task.name, prompt_task.name,
                      n ? static_cast<double>(in_prompt) / n : 0.0,
                      n ? static_cast<double>(in_image) / n : 0.0});
    }
  }
  return rows;
}

void write_prompt_confusion(const std::string& stem, const std::vector<PromptConfusionRow>& rows) {
  std::ofstream csv(stem + ".csv");
  csv << "image_task,prompt_task,frac_prompt_domain,frac_image_domain\n";
  for (const auto& r : rows)
    csv << r.image_task << "," << r.prompt_task << "," << format_double(r.frac_prompt_domain)
        << "," << format_double(r.frac_image_domain) << "\n";

  std::vector<std::string> image_tasks;
  std::map<std::string, std::vector<double>> series;  // prompt -> per image-task frac
  for (const auto& r : rows)
    if (std::find(image_tasks.begin(), image_tasks.end(), r.image_task) == image_tasks.end())
      image_tasks.push_back(r.image_task);
  for (const auto& r : rows) series[r.prompt_task].push_back(r.frac_prompt_domain);
  SvgPlot plot(900, 420, "prompt-domain adherence by image source");
  plot.set_axis_labels("image task", "fraction of outputs in prompt domain");
  plot.set_bar_labels(image_tasks);
  for (auto& [prompt, vals] : series) plot.add_bars("prompt " + prompt, vals);
  plot.save(stem + ".svg");
}

std::vector<FrontierRow> decode_frontier(SeedRun& run) {
  std::vector<FrontierRow> rows;
  const auto& mixture = run.mixture();
  int cap = std::min(32, run.config().eval_size);
  const int ks[] = {1, 4, 8, 16};
  for (size_t t = 0; t < mixture.tasks.size(); ++t) {
    int task_index = -1;
    for (size_t i = 0; i < run.config().tasks.size(); ++i)
      if (run.config().tasks[i].synth.name == mixture.tasks[t].name)
        task_index = static_cast<int>(i);
    const TaskSpec& task = run.registry().task(mixture.tasks[t].name);
    const auto& data = run.eval_data(task_index);
    int max_len = run.decoder().config().max_len;

    struct Variant {
      std::string strategy;
      int k;
      DecodeParams params;
      bool best_of = false;
    };
    std::vector<Variant> variants;
    {
      DecodeParams p;
      p.max_len = max_len;
      p.strategy = DecodeParams::Strategy::kGreedy;
      variants.push_back({"greedy", 1, p, false});
      for (int k : ks) {
        DecodeParams b = p;
        b.strategy = DecodeParams::Strategy::kBeam;
        b.k = k;
        variants.push_back({"beam", k, b, false});
        DecodeParams ts = p;
        ts.strategy = DecodeParams::Strategy::kTemperature;
        ts.temperature = 1.0;
        ts.k = k;
        variants.push_back({"temperature", k, ts, true});
        DecodeParams tk = p;
        tk.strategy = DecodeParams::Strategy::kTopK;
        tk.k = 5;
        tk.temperature = 1.0;
        variants.push_back({"top_k", k, tk, true});
      }
      if (task.category == TaskCategory::kCls) {
        DecodeParams sc = p;
        sc.strategy = DecodeParams::Strategy::kScoreClasses;
        variants.push_back({"score_classes", 1, sc, false});
      }
    }

    for (const Variant& variant : variants) {
      std::vector<std::string> candidates;
      std::vector<std::vector<std::string>> references;
      double hits = 0.0;
      auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < cap && i < static_cast<int>(data.size()); ++i) {
        const Example& ex = data[static_cast<size_t>(i)];
        std::string out;
        if (variant.best_of) {
          // k independent samples; keep the model-preferred one.
          Tensor encoded = run.provider().get(ex, nullptr, false);
          double best_lp = -1e300;
          DecodeParams p = variant.params;
          for (int s = 0; s < variant.k; ++s) {
            p.seed = Rng::derive(run.seed(), task.name + "/sample/" + std::to_string(i) + "/" +
                                                 std::to_string(s));
            DecodeResult res = decode(run.decoder(), encoded,
                                      run.prefix_ids(ex, task), p, nullptr,
                                      run.config().mode == ConditioningMode::kTaskPositionEmbeddings
                                          ? task.pos_table
                                          : 0);
            if (res.log_prob > best_lp) {
              best_lp = res.log_prob;
              out = run.registry().vocab().detokenize(res.ids);
            }
          }
        } else {
          DecodeParams p = variant.params;
          p.seed = Rng::derive(run.seed(), task.name + "/decode/" + std::to_string(i));
          out = run.predict(ex, task, p);
        }
        if (task.metric == "cider") {
          candidates.push_back(out);
          references.push_back({ex.target_text});
        } else {
          hits += exact_match(out, ex.target_text);
        }
      }
      auto t1 = std::chrono::steady_clock::now();
      double seconds = std::chrono::duration<double>(t1 - t0).count();
      double value = task.metric == "cider"
                         ? cider(candidates, references)
                         : 100.0 * hits / static_cast<double>(std::min(cap, static_cast<int>(data.size())));
      rows.push_back({task.name, variant.strategy, variant.k, value, seconds});
    }
  }
  return rows;
}

void write_frontier(const std::string& stem, std::vector<FrontierRow> rows) {
  // Normalize per task: best-performing method at 0, slowest method at 1.
  std::map<std::string, std::pair<double, double>> best_and_slowest;
  for (const FrontierRow& r : rows) {
    auto it = best_and_slowest.find(r.task);
    if (it == best_and_slowest.end())
      best_and_slowest[r.task] = {r.metric_value, r.seconds};
    else {
      it->second.first = std::max(it->second.first, r.metric_value);
      it->second.second = std::max(it->second.second, r.seconds);
    }
  }
  std::ofstream csv(stem + ".csv");
  csv << "task,strategy,k,metric_value,seconds,quality_below_best,time_fraction\n";
  SvgPlot plot(760, 460, "decode strategies: quality vs time");
  plot.set_axis_labels("time (fraction of slowest)", "quality below best");
  std::map<std::string, std::vector<std::pair<double, double>>> scatter;
  for (const FrontierRow& r : rows) {
    auto [best, slowest] = best_and_slowest[r.task];
    double q = best - r.metric_value;
    double tf = slowest > 0 ? r.seconds / slowest : 0.0;
    csv << r.task << "," << r.strategy << "," << r.k << "," << format_double(r.metric_value)
        << "," << format_double(r.seconds) << "," << format_double(q) << ","
        << format_double(tf) << "\n";
    scatter[r.task].push_back({tf, q});
  }
  for (auto& [task, pts] : scatter) plot.add_scatter(task, pts);
  plot.save(stem + ".svg");
}

}  // namespace declab
