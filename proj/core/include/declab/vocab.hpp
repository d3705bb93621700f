#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "declab/synth.hpp"
#include "declab/tokens.hpp"

namespace declab {

enum class TaskCategory { kCls, kCap, kOcr, kQa };

const char* category_name(TaskCategory c);
TaskCategory category_of(TaskKind kind);

enum class ConditioningMode {
  kTaskPrompt,
  kCategoryPrompt,
  kUnconditioned,
  kTaskPositionEmbeddings,
};

const char* conditioning_mode_name(ConditioningMode m);
ConditioningMode conditioning_mode_from_name(const std::string& name);

// Bijective token <-> id mapping. Plain words are tokenizable; special
// tokens (reserved, prompt, category, class) are never produced by
// tokenizing plain text.
class Vocabulary {
 public:
  Vocabulary();

  // Plain word; returns the existing id if already present.
  int add_word(const std::string& word);
  // Prompt/category token. Surface must be unique.
  int add_special(const std::string& surface);
  // Class token: unique internal surface, detokenizes to `display`.
  int add_class_token(const std::string& surface, const std::string& display);

  // Whitespace-delimited word-level tokenization; unknown words map to UNK.
  std::vector<int> tokenize(const std::string& text) const;
  // Space-joined display forms; UNK renders as its surface form.
  std::string detokenize(const std::vector<int>& ids) const;

  int id_of(const std::string& surface) const;  // -1 when absent
  int size() const { return static_cast<int>(surfaces_.size()); }
  const std::string& surface(int id) const;
  const std::string& display(int id) const;
  bool is_special(int id) const;

 private:
  int add_entry(const std::string& surface, const std::string& display, bool special,
                bool tokenizable);
  std::vector<std::string> surfaces_;
  std::vector<std::string> display_;
  std::vector<bool> special_;
  std::unordered_map<std::string, int> word_ids_;  // plain words only
  std::unordered_map<std::string, int> all_ids_;   // bijection over surfaces
};

// A registered task: dataset handle plus its conditioning hooks.
struct TaskSpec {
  std::string name;
  TaskCategory category = TaskCategory::kCls;
  int prompt_token = -1;
  SynthTaskConfig dataset;
  std::int64_t size = 0;
  std::string metric = "exact_match";  // or "cider"
  bool class_remap = false;
  std::map<std::string, int> class_token_of;  // label -> token id, remap only
  int pos_table = 0;  // positional table used under per-task conditioning
};

// Builds the vocabulary and task list for an experiment. Word vocabulary
// comes from the generators' closed vocabularies.
class TaskRegistry {
 public:
  TaskSpec& add_task(const SynthTaskConfig& config, const std::string& metric);
  TaskSpec& task(const std::string& name);
  const TaskSpec& task(const std::string& name) const;
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  std::vector<TaskSpec>& tasks() { return tasks_; }
  Vocabulary& vocab() { return vocab_; }
  const Vocabulary& vocab() const { return vocab_; }

  // Assigns one positional table per task (for per-task position
  // conditioning); returns the table count.
  int assign_pos_tables();

 private:
  Vocabulary vocab_;
  std::vector<TaskSpec> tasks_;
  std::map<TaskCategory, int> category_tokens_;
  friend int category_token(TaskRegistry&, TaskCategory);
};

int category_token(TaskRegistry& registry, TaskCategory category);

// Replaces a classification task's labels with one fresh token per class.
// Grows the vocabulary by exactly the class count; decoding maps each token
// back to its class string.
void class_token_remap(TaskSpec& task, Vocabulary& vocab);

struct BuiltSequence {
  std::vector<int> ids;  // prefix followed by target, BOS-led
  int prefix_len = 0;    // prefix positions are loss-excluded
  bool truncated = false;
};

// Conditioned sequence construction:
//   TaskPrompt      -> [BOS, <task>, SEP] (+ question + SEP)
//   CategoryPrompt  -> [BOS, <category>, SEP] (+ question + SEP)
//   Unconditioned / TaskPositionEmbeddings -> [BOS] (+ question + SEP)
// Target is the tokenized label plus EOS. Truncation keeps the prefix
// intact and trims the target tail.
BuiltSequence build_sequence(const Example& example, const TaskSpec& task, ConditioningMode mode,
                             TaskRegistry& registry, int max_len);

// Dataset files: JSON-lines, one example per line with fields
// {"id", "image", "prefix_text", "target_text", "task"}. The image field is
// either an inline glyph spec ("g=...") or an embedding-store id.
void write_dataset_jsonl(const std::vector<Example>& examples, const std::string& path);
std::vector<Example> read_dataset_jsonl(const std::string& path);

}  // namespace declab
