#include <sstream>

#include "declab/errors.hpp"
#include "declab/experiment.hpp"

namespace declab {

namespace {

TaskRunConfig make_task(const std::string& name, TaskKind kind, int size, std::uint64_t seed) {
  TaskRunConfig t;
  t.synth.name = name;
  t.synth.kind = kind;
  t.synth.size = size;
  t.synth.seed = seed;
  return t;
}

// Shared starting point: four tasks (one per category) on the standard grid.
ExperimentConfig standard_base() {
  ExperimentConfig cfg;
  cfg.decoder.depth = 2;
  cfg.decoder.model_dim = 32;
  cfg.decoder.heads = 4;
  cfg.decoder.mlp_dim = 128;
  cfg.decoder.max_len = 24;
  cfg.train.epochs = 16;
  cfg.train.batch_size = 32;
  cfg.tasks = {
      make_task("cls", TaskKind::kClassifyDominantGlyph, 512, 101),
      make_task("cap", TaskKind::kCaptionLayout, 512, 202),
      make_task("ocr", TaskKind::kOcrReadSequence, 512, 303),
      make_task("qa", TaskKind::kQaCountAttribute, 512, 404),
  };
  return cfg;
}

// Mark every task except `keep` as registered-but-not-mixed. The registry
// (and so the model init) stays identical across cells.
std::vector<std::string> single_task_overrides(const ExperimentConfig& base,
                                               const std::string& keep) {
  std::vector<std::string> overrides;
  for (const TaskRunConfig& t : base.tasks) {
    if (t.synth.name != keep)
      overrides.push_back("task." + t.synth.name + ".in_mixture=false");
  }
  return overrides;
}

Sweep preset_table1() {
  Sweep sweep;
  sweep.name = "table1_conditioning";
  ExperimentConfig cfg = standard_base();
  // cls and cap draw from the same image distribution, so an unconditioned
  // decoder cannot tell which output format is wanted; cap dominates the mix.
  cfg.tasks = {
      make_task("amb_cls", TaskKind::kClassifyDominantGlyph, 384, 11),
      make_task("amb_cap", TaskKind::kCaptionLayout, 1152, 11),
      make_task("ocr", TaskKind::kOcrReadSequence, 512, 303),
      make_task("qa", TaskKind::kQaCountAttribute, 512, 404),
  };
  sweep.base = cfg;
  sweep.cells.push_back({"mt_task_prompt", {"experiment.conditioning=task_prompt"}});
  sweep.cells.push_back({"mt_category", {"experiment.conditioning=category_prompt"}});
  sweep.cells.push_back({"mt_unconditioned", {"experiment.conditioning=unconditioned"}});
  for (const TaskRunConfig& t : cfg.tasks) {
    SweepCell cell;
    cell.name = "st_" + t.synth.name;
    cell.overrides = single_task_overrides(cfg, t.synth.name);
    sweep.cells.push_back(cell);
  }
  return sweep;
}

Sweep preset_fig2() {
  Sweep sweep;
  sweep.name = "fig2_depth_grid";
  ExperimentConfig cfg = standard_base();
  // Task-count prefixes add tasks to the right of the traced OCR task.
  cfg.tasks = {
      make_task("ocr", TaskKind::kOcrReadSequence, 512, 303),
      make_task("cls", TaskKind::kClassifyDominantGlyph, 512, 101),
      make_task("cap", TaskKind::kCaptionLayout, 512, 202),
      make_task("qa", TaskKind::kQaCountAttribute, 512, 404),
  };
  sweep.base = cfg;
  const int depths[] = {1, 2, 4};
  for (int depth : depths) {
    for (size_t ntasks = 1; ntasks <= cfg.tasks.size(); ++ntasks) {
      SweepCell cell;
      cell.name = "d" + std::to_string(depth) + "_t" + std::to_string(ntasks);
      cell.overrides.push_back("decoder.depth=" + std::to_string(depth));
      for (size_t i = ntasks; i < cfg.tasks.size(); ++i)
        cell.overrides.push_back("task." + cfg.tasks[i].synth.name + ".in_mixture=false");
      sweep.cells.push_back(cell);
    }
  }
  return sweep;
}

Sweep preset_fig3() {
  Sweep sweep;
  sweep.name = "fig3_mixing";
  ExperimentConfig cfg = standard_base();
  // cap and qa share an image pool (dedup group 1); ocr has several
  // annotation pairs per image.
  cfg.tasks[1].dedup_group = 1;
  cfg.tasks[3].dedup_group = 1;
  cfg.tasks[2].pairs_per_image = 4.8;
  sweep.base = cfg;
  sweep.cells.push_back({"concat_images", {"mixture.strategy=concat_images"}});
  sweep.cells.push_back({"equal", {"mixture.strategy=equal"}});
  sweep.cells.push_back({"concat_pairs", {"mixture.strategy=concat_pairs"}});
  sweep.cells.push_back({"concat_unique", {"mixture.strategy=concat_unique_images"}});
  sweep.cells.push_back({"homogeneous", {"mixture.composition=homogeneous"}});
  return sweep;
}

Sweep preset_table2() {
  Sweep sweep;
  sweep.name = "table2_aux_ocr";
  ExperimentConfig cfg = standard_base();
  cfg.tasks = {
      make_task("ocr_main", TaskKind::kOcrReadSequence, 192, 31),
      make_task("aux_concat", TaskKind::kAuxOcrConcat, 1024, 32),
      make_task("aux_random", TaskKind::kAuxOcrRandom, 1024, 33),
      make_task("aux_alt", TaskKind::kAuxAltText, 1024, 34),
  };
  cfg.train.epochs = 24;
  sweep.base = cfg;
  auto only = [&cfg](std::initializer_list<std::string> keep) {
    std::vector<std::string> overrides;
    for (const TaskRunConfig& t : cfg.tasks) {
      bool kept = false;
      for (const std::string& k : keep) kept = kept || k == t.synth.name;
      if (!kept) overrides.push_back("task." + t.synth.name + ".in_mixture=false");
    }
    return overrides;
  };
  sweep.cells.push_back({"ocr_only", only({"ocr_main"})});
  sweep.cells.push_back({"with_ocr_concat", only({"ocr_main", "aux_concat"})});
  sweep.cells.push_back({"with_ocr_random", only({"ocr_main", "aux_random"})});
  sweep.cells.push_back({"with_alt_text", only({"ocr_main", "aux_alt"})});
  return sweep;
}

Sweep preset_fig6() {
  Sweep sweep;
  sweep.name = "fig6_class_tokens";
  ExperimentConfig cfg = standard_base();
  sweep.base = cfg;
  sweep.cells.push_back({"class_strings", {"experiment.class_remap=false"}});
  sweep.cells.push_back({"class_tokens", {"experiment.class_remap=true"}});
  return sweep;
}

Sweep preset_fig5() {
  Sweep sweep;
  sweep.name = "fig5_languages";
  ExperimentConfig cfg = standard_base();
  cfg.tasks = {
      make_task("cap_en", TaskKind::kCaptionLayout, 192, 51),
      make_task("cap_de", TaskKind::kCaptionLayout, 192, 52),
      make_task("cap_fr", TaskKind::kCaptionLayout, 192, 53),
      make_task("cap_zz", TaskKind::kCaptionLayout, 192, 54),
  };
  cfg.tasks[1].synth.language = "de";
  cfg.tasks[1].synth.vocab_overlap = 0.5;
  cfg.tasks[2].synth.language = "fr";
  cfg.tasks[2].synth.vocab_overlap = 0.5;
  // A "non-Latin-script" stand-in: no shared surface forms at all.
  cfg.tasks[3].synth.language = "zz";
  cfg.tasks[3].synth.vocab_overlap = 0.0;
  cfg.train.epochs = 40;
  sweep.base = cfg;
  auto drop_from = [&cfg](size_t first_dropped) {
    std::vector<std::string> overrides;
    for (size_t i = first_dropped; i < cfg.tasks.size(); ++i)
      overrides.push_back("task." + cfg.tasks[i].synth.name + ".in_mixture=false");
    return overrides;
  };
  sweep.cells.push_back({"lang1", drop_from(1)});
  sweep.cells.push_back({"lang2", drop_from(2)});
  sweep.cells.push_back({"lang4", drop_from(4)});
  return sweep;
}

Sweep preset_fig4() {
  Sweep sweep;
  sweep.name = "fig4_regularization";
  ExperimentConfig cfg = standard_base();
  // A deliberately overfit-prone captioning task, trained far past what it
  // needs, with three support tasks for the multi-task arm.
  cfg.tasks = {
      make_task("cap_small", TaskKind::kCaptionLayout, 128, 41),
      make_task("cls", TaskKind::kClassifyDominantGlyph, 256, 101),
      make_task("ocr", TaskKind::kOcrReadSequence, 256, 303),
      make_task("qa", TaskKind::kQaCountAttribute, 256, 404),
  };
  cfg.train.epochs = 40;
  sweep.base = cfg;
  const char* wds[] = {"0", "0.0001", "0.01"};
  const char* dos[] = {"0", "0.1", "0.5"};
  for (const char* arm : {"single", "multi"}) {
    for (const char* wd : wds) {
      for (const char* dr : dos) {
        SweepCell cell;
        cell.name = std::string(arm) + "_wd" + wd + "_do" + dr;
        cell.overrides.push_back(std::string("train.weight_decay=") + wd);
        cell.overrides.push_back(std::string("train.dropout=") + dr);
        if (std::string(arm) == "single")
          for (size_t i = 1; i < cfg.tasks.size(); ++i)
            cell.overrides.push_back("task." + cfg.tasks[i].synth.name + ".in_mixture=false");
        sweep.cells.push_back(cell);
      }
    }
  }
  return sweep;
}

Sweep preset_fig7() {
  Sweep sweep;
  sweep.name = "fig7_prompt_confusion";
  ExperimentConfig cfg = standard_base();
  cfg.analysis = "prompt_confusion";
  sweep.base = cfg;
  sweep.cells.push_back({"mt_task_prompt", {}});
  return sweep;
}

Sweep preset_fig8() {
  Sweep sweep;
  sweep.name = "fig8_decoding";
  ExperimentConfig cfg = standard_base();
  cfg.analysis = "decode_frontier";
  sweep.base = cfg;
  sweep.cells.push_back({"frontier", {}});
  return sweep;
}

Sweep preset_fig9() {
  Sweep sweep;
  sweep.name = "fig9_compression";
  ExperimentConfig cfg = standard_base();
  cfg.tasks = {
      make_task("ocr", TaskKind::kOcrReadSequence, 512, 303),
      make_task("cls", TaskKind::kClassifyDominantGlyph, 512, 101),
  };
  cfg.train.epochs = 24;
  sweep.base = cfg;
  sweep.cells.push_back({"none", {"compression.mode=none"}});
  sweep.cells.push_back({"bottleneck8", {"compression.mode=bottleneck", "compression.reduction=8"}});
  sweep.cells.push_back(
      {"bottleneck16", {"compression.mode=bottleneck", "compression.reduction=16"}});
  sweep.cells.push_back(
      {"bottleneck32", {"compression.mode=bottleneck", "compression.reduction=32"}});
  sweep.cells.push_back({"map_pool", {"compression.mode=map_pool"}});
  return sweep;
}

Sweep preset_frozen_vs_finetune() {
  Sweep sweep;
  sweep.name = "frozen_vs_finetune";
  ExperimentConfig cfg = standard_base();
  sweep.base = cfg;
  sweep.cells.push_back({"frozen", {"encoder.mode=frozen"}});
  sweep.cells.push_back(
      {"finetune", {"encoder.mode=finetune", "train.encoder_lr_multiplier=0.1"}});
  sweep.cells.push_back(
      {"from_scratch", {"encoder.mode=from_scratch", "train.encoder_lr_multiplier=1"}});
  return sweep;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"table1_conditioning", "fig2_depth_grid",  "fig3_mixing",
          "table2_aux_ocr",      "fig6_class_tokens", "fig5_languages",
          "fig4_regularization", "fig7_prompt_confusion", "fig8_decoding",
          "fig9_compression",    "frozen_vs_finetune"};
}

Sweep preset(const std::string& name) {
  if (name == "table1_conditioning") return preset_table1();
  if (name == "fig2_depth_grid") return preset_fig2();
  if (name == "fig3_mixing") return preset_fig3();
  if (name == "table2_aux_ocr") return preset_table2();
  if (name == "fig6_class_tokens") return preset_fig6();
  if (name == "fig5_languages") return preset_fig5();
  if (name == "fig4_regularization") return preset_fig4();
  if (name == "fig7_prompt_confusion") return preset_fig7();
  if (name == "fig8_decoding") return preset_fig8();
  if (name == "fig9_compression") return preset_fig9();
  if (name == "frozen_vs_finetune") return preset_frozen_vs_finetune();
  std::ostringstream msg;
  msg << "unknown preset '" << name << "'; valid presets:";
  for (const std::string& n : preset_names()) msg << " " << n;
  throw ConfigError(msg.str());
}

}  // namespace declab
