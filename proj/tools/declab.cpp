// Experiment runner CLI: training, evaluation, decoding, sweeps and reports
// for the frozen-encoder multi-task decoder laboratory.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "declab/decoding.hpp"
#include "declab/experiment.hpp"
#include "declab/gradcheck.hpp"
#include "declab/metrics.hpp"

namespace fs = std::filesystem;
using namespace declab;

namespace {

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  KvConfig kv = KvConfig::parse_file(path);
  for (const std::string& s : sets) kv.apply_override(s);
  return ExperimentConfig::from_kv(kv);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out) {
  ExperimentConfig cfg = load_config(config_path, sets);
  if (!out.empty()) cfg.output_dir = out;
  RunOutcome outcome = run_experiment(cfg, &std::cout);
  std::cout << "metrics and summary written to " << cfg.output_dir << "\n";
  return outcome.any_aborted ? 1 : 0;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& sets,
             const std::string& checkpoint, std::uint64_t seed, const std::string& out) {
  ExperimentConfig cfg = load_config(config_path, sets);
  SeedRun run(cfg, seed);
  run.load_params(load_checkpoint(checkpoint));
  std::vector<MetricRecord> records;
  run.evaluate(0, records);
  for (const MetricRecord& r : records)
    std::cout << r.task << " " << r.metric << " = " << r.value << "\n";
  if (!out.empty()) write_metrics_jsonl(out, records);
  return 0;
}

int cmd_decode(const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& checkpoint, const std::string& task_name, int example_index,
               const DecodeParams& params, std::uint64_t seed) {
  ExperimentConfig cfg = load_config(config_path, sets);
  SeedRun run(cfg, seed);
  run.load_params(load_checkpoint(checkpoint));
  const TaskSpec& task = run.registry().task(task_name);
  int task_index = -1;
  for (size_t i = 0; i < cfg.tasks.size(); ++i)
    if (cfg.tasks[i].synth.name == task_name) task_index = static_cast<int>(i);
  const std::vector<Example>& data = run.eval_data(task_index);
  if (example_index < 0 || example_index >= static_cast<int>(data.size()))
    throw ConfigError("example index out of range (eval split has " +
                      std::to_string(data.size()) + " examples)");
  const Example& ex = data[static_cast<size_t>(example_index)];
  std::string text = run.predict(ex, task, params);
  std::cout << "example: " << ex.id << "\n";
  if (!ex.prefix_text.empty()) std::cout << "prefix:  " << ex.prefix_text << "\n";
  std::cout << "target:  " << ex.target_text << "\n";
  std::cout << "output:  " << text << "\n";
  return 0;
}

int cmd_sweep(const std::string& preset_name, const std::string& config_path,
              const std::vector<std::string>& sets, const std::string& out) {
  Sweep sweep;
  if (!preset_name.empty()) {
    sweep = preset(preset_name);
  } else {
    sweep.name = fs::path(config_path).stem().string();
    sweep.base = load_config(config_path, {});
    sweep.cells.push_back({"base", {}});
  }
  if (!sets.empty()) {
    KvConfig kv = sweep.base.to_kv();
    for (const std::string& s : sets) kv.apply_override(s);
    std::string name = sweep.base.name;
    sweep.base = ExperimentConfig::from_kv(kv);
    sweep.base.name = name;
  }
  std::string dir = out.empty() ? "out/" + sweep.name : out;
  SweepOutcome outcome = run_sweep(sweep, dir, &std::cout);
  std::cout << "cells run=" << outcome.cells_run << " skipped=" << outcome.cells_skipped
            << " failed=" << outcome.cells_failed << "\n";
  return outcome.cells_failed > 0 ? 1 : 0;
}

int cmd_oracle_check() {
  int failures = 0;
  auto report = [&failures](const std::string& name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    if (!ok) failures++;
  };

  {
    // Reverse-mode gradients of a tiny decoder against central differences.
    DecoderConfig cfg;
    cfg.depth = 1;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.mlp_dim = 16;
    cfg.vocab_size = 11;
    cfg.max_len = 6;
    cfg.dropout_rate = 0.0;
    cfg.enc_dim = 8;
    DecoderT<double> model(cfg, 3);
    Rng rng(5);
    TensorT<double> enc = TensorT<double>::randn({4, 8}, 0.5, rng);
    std::vector<int> ids = {kBosId, 5, 6, kEosId};
    std::vector<double> theta;
    model.params().for_each_named([&theta](const std::string&, TensorT<double>& t) {
      theta.insert(theta.end(), t.values().begin(), t.values().end());
    });
    auto loss_at = [&](const std::vector<double>& flat) {
      size_t off = 0;
      model.params().for_each_named([&flat, &off](const std::string&, TensorT<double>& t) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data());
        off += static_cast<size_t>(t.size());
      });
      auto f = model.forward_teacher_forced(enc, ids, 1);
      TapeT<double> tape;
      return smoothed_cross_entropy<double>(nullptr, f.logits, f.targets, f.loss_mask, 0.1)
          .item();
    };
    TapeT<double> tape;
    std::vector<DecoderT<double>::Item> items{{enc, &ids, 1, 0}};
    auto f = model.forward_teacher_forced(items, &tape, false, nullptr);
    TensorT<double> loss =
        smoothed_cross_entropy(&tape, f.logits, f.targets, f.loss_mask, 0.1);
    tape.backward(loss);
    std::vector<double> analytic;
    model.params().for_each_named([&analytic](const std::string&, TensorT<double>& t) {
      analytic.insert(analytic.end(), t.grad_values().begin(), t.grad_values().end());
    });
    // Check a deterministic subsample so the command stays fast.
    std::vector<double> got, want;
    Rng pick(17);
    for (int i = 0; i < 200; ++i) {
      size_t idx = static_cast<size_t>(pick.uniform_int(static_cast<int>(theta.size())));
      std::vector<double> probe = theta;
      double saved = probe[idx];
      probe[idx] = saved + 1e-5;
      double fp = loss_at(probe);
      probe[idx] = saved - 1e-5;
      double fm = loss_at(probe);
      got.push_back(analytic[idx]);
      want.push_back((fp - fm) / 2e-5);
    }
    report("decoder gradients vs central differences (200 coords)",
           max_relative_error(got, want, 1e-6) < 1e-3);
  }

  {
    // Beam search at full width against the exhaustive oracle.
    DecoderConfig cfg;
    cfg.depth = 1;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.mlp_dim = 16;
    cfg.vocab_size = 5;
    cfg.max_len = 6;
    cfg.dropout_rate = 0.0;
    cfg.enc_dim = 8;
    bool all_match = true;
    for (int trial = 0; trial < 10; ++trial) {
      Decoder model(cfg, 100 + static_cast<std::uint64_t>(trial));
      Rng rng(200 + static_cast<std::uint64_t>(trial));
      Tensor enc = Tensor::randn({3, 8}, 1.0f, rng);
      std::vector<int> prefix = {kBosId};
      DecodeResult beam = beam_search(model, enc, prefix, 625, 0.0, 0.1, 4);
      DecodeResult oracle = brute_force_oracle(model, enc, prefix, 4, 0.1);
      all_match = all_match && beam.ids == oracle.ids;
    }
    report("full-width beam equals exhaustive oracle (10 models)", all_match);
  }

  {
    // Corpus CIDEr sanity: identical candidate maximizes the metric.
    std::vector<std::string> cands = {"two red star at top", "one blue arch at bottom"};
    std::vector<std::vector<std::string>> refs = {{"two red star at top"},
                                                  {"one blue arch at top"}};
    double full = cider(cands, refs);
    double off = cider({"gold gate", cands[1]}, refs);
    report("cider favors exact candidate", full > off && full >= 0.0);
  }

  {
    // Paper-sized mixture facts.
    MixtureSpec spec;
    spec.strategy = MixStrategy::kConcatImages;
    spec.batch_size = 256;
    spec.tasks = {{"inet1k", 1200000, 1.0, -1}, {"sun397", 76000, 1.0, -1},
                  {"food101", 74000, 1.0, -1},  {"resisc45", 19000, 1.0, -1},
                  {"pet", 2944, 1.0, -1},       {"coco", 112000, 1.0, 1},
                  {"flickr30k", 28000, 1.0, -1}, {"ocrvqa", 166000, 4.8, -1},
                  {"vqav2", 83000, 1.0, 1},     {"gqa", 72000, 1.0, 1}};
    std::vector<double> w = sampling_weights(spec);
    report("concat-images weight of the largest task exceeds one half", w[0] > 0.5);
  }

  std::cout << (failures ? "oracle-check: FAILURES\n" : "oracle-check: all passed\n");
  return failures ? 1 : 0;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& task_name, const std::string& out_stem) {
  ExperimentConfig cfg = load_config(config_path, sets);
  const TaskRunConfig* task = nullptr;
  for (const TaskRunConfig& t : cfg.tasks)
    if (t.synth.name == task_name) task = &t;
  if (!task) throw ConfigError("unknown task '" + task_name + "'");
  std::vector<Example> data = generate(task->synth);
  write_dataset_jsonl(data, out_stem + ".jsonl");

  ToyEncoderConfig ecfg;
  ecfg.feat_dim = kPatchFeatureDim;
  ecfg.n_patches = task->synth.grid * task->synth.grid;
  ecfg.enc_dim = cfg.enc_dim;
  ecfg.heads = cfg.enc_heads;
  ToyEncoderParamsT<float> enc_params;
  enc_params.init(ecfg, cfg.encoder_seed, false);
  EmbeddingStore store;
  for (const Example& ex : data) {
    FeatureGrid g = render(ex.image);
    Tensor feats = Tensor::from({g.n, g.f}, std::move(g.values));
    store.emplace(ex.id, from_tensor(toy_encode<float>(nullptr, feats, enc_params, false)));
  }
  save_store(store, out_stem + ".lite");
  std::cout << "wrote " << data.size() << " examples to " << out_stem << ".jsonl and "
            << out_stem << ".lite\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task autoregressive decoder laboratory"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, task_name, preset_name, show_name;
  std::vector<std::string> sets, metric_files;
  std::uint64_t seed = 0;
  int example_index = 0;

  auto add_common = [&](CLI::App* cmd, bool need_config) {
    auto* opt = cmd->add_option("--config", config_path, "experiment config file");
    if (need_config) opt->required();
    cmd->add_option("--set", sets, "override section.key=value")->take_all();
  };

  auto* train = app.add_subcommand("train", "train an experiment config (all seeds)");
  add_common(train, true);
  train->add_option("--out", out, "output directory override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the eval splits");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--seed", seed, "seed used to rebuild datasets");
  eval->add_option("--out", out, "metrics JSON-lines output path");

  auto* dec = app.add_subcommand("decode", "decode one eval example");
  add_common(dec, true);
  dec->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  dec->add_option("--task", task_name, "task name")->required();
  dec->add_option("--example", example_index, "eval example index");
  std::string strategy = "greedy";
  DecodeParams dparams;
  dec->add_option("--strategy", strategy, "greedy|temperature|top_k|beam|score_classes");
  dec->add_option("--beams,-k", dparams.k, "beams or samples");
  dec->add_option("--temperature", dparams.temperature, "sampling temperature");
  dec->add_option("--gumbel", dparams.gumbel_scale, "gumbel perturbation scale");
  dec->add_option("--alpha", dparams.length_norm_alpha, "length normalization exponent");
  dec->add_option("--max-len", dparams.max_len, "max generated tokens");
  dec->add_option("--seed", dparams.seed, "decode seed");

  auto* sweep = app.add_subcommand("sweep", "run a preset or config sweep");
  sweep->add_option("--preset", preset_name, "preset name");
  add_common(sweep, false);
  sweep->add_option("--out", out, "output directory");

  auto* rep = app.add_subcommand("report", "aggregate metrics files into CSV and plots");
  rep->add_option("files", metric_files, "metrics JSON-lines files")->required();
  rep->add_option("--out", out, "output directory")->required();

  auto* oracle = app.add_subcommand("oracle-check", "run built-in oracle comparisons");
  (void)oracle;

  auto* pre = app.add_subcommand("preset", "list or show presets");
  auto* pre_list = pre->add_subcommand("list", "list preset names");
  auto* pre_show = pre->add_subcommand("show", "print a preset's base config");
  pre_show->add_option("name", show_name, "preset name")->required();
  pre->require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "write a task's dataset JSONL + embedding store");
  add_common(gen, true);
  gen->add_option("--task", task_name, "task name")->required();
  gen->add_option("--out", out, "output path stem")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, sets, out);
    if (eval->parsed()) return cmd_eval(config_path, sets, checkpoint, seed, out);
    if (dec->parsed()) {
      dparams.strategy = DecodeParams::strategy_from_name(strategy);
      return cmd_decode(config_path, sets, checkpoint, task_name, example_index, dparams, seed);
    }
    if (sweep->parsed()) {
      if (preset_name.empty() && config_path.empty())
        throw ConfigError("sweep needs --preset or --config");
      return cmd_sweep(preset_name, config_path, sets, out);
    }
    if (rep->parsed()) {
      report_metrics(metric_files, out, &std::cout);
      std::cout << "report written to " << out << "\n";
      return 0;
    }
    if (oracle->parsed()) return cmd_oracle_check();
    if (pre->parsed()) {
      if (pre_list->parsed()) {
        for (const std::string& n : preset_names()) std::cout << n << "\n";
        return 0;
      }
      if (pre_show->parsed()) {
        Sweep s = preset(show_name);
        std::cout << s.base.to_kv().emit();
        std::cout << "\n# cells:\n";
        for (const SweepCell& c : s.cells) {
          std::cout << "#   " << c.name;
          for (const std::string& o : c.overrides) std::cout << " " << o;
          std::cout << "\n";
        }
        return 0;
      }
    }
    if (gen->parsed()) return cmd_gen_data(config_path, sets, task_name, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
