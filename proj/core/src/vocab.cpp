#include "declab/vocab.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "declab/errors.hpp"

namespace declab {

const char* category_name(TaskCategory c) {
  switch (c) {
    case TaskCategory::kCls: return "cls";
    case TaskCategory::kCap: return "cap";
    case TaskCategory::kOcr: return "ocr";
    case TaskCategory::kQa: return "qa";
  }
  return "?";
}

TaskCategory category_of(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassifyDominantGlyph: return TaskCategory::kCls;
    case TaskKind::kCaptionLayout:
    case TaskKind::kAuxAltText: return TaskCategory::kCap;
    case TaskKind::kOcrReadSequence:
    case TaskKind::kAuxOcrConcat:
    case TaskKind::kAuxOcrRandom: return TaskCategory::kOcr;
    case TaskKind::kQaCountAttribute: return TaskCategory::kQa;
  }
  return TaskCategory::kCls;
}

const char* conditioning_mode_name(ConditioningMode m) {
  switch (m) {
    case ConditioningMode::kTaskPrompt: return "task_prompt";
    case ConditioningMode::kCategoryPrompt: return "category_prompt";
    case ConditioningMode::kUnconditioned: return "unconditioned";
    case ConditioningMode::kTaskPositionEmbeddings: return "task_position_embeddings";
  }
  return "?";
}

ConditioningMode conditioning_mode_from_name(const std::string& name) {
  for (ConditioningMode m :
       {ConditioningMode::kTaskPrompt, ConditioningMode::kCategoryPrompt,
        ConditioningMode::kUnconditioned, ConditioningMode::kTaskPositionEmbeddings}) {
    if (name == conditioning_mode_name(m)) return m;
  }
  throw ConfigError("unknown conditioning mode '" + name + "'");
}

Vocabulary::Vocabulary() {
  add_entry("<bos>", "<bos>", true, false);
  add_entry("<eos>", "<eos>", true, false);
  add_entry("<pad>", "<pad>", true, false);
  add_entry("<sep>", "<sep>", true, false);
  add_entry("<unk>", "<unk>", true, false);
}

int Vocabulary::add_entry(const std::string& surface, const std::string& display, bool special,
                          bool tokenizable) {
  if (all_ids_.count(surface))
    throw ConfigError("vocabulary surface '" + surface + "' already present");
  int id = static_cast<int>(surfaces_.size());
  surfaces_.push_back(surface);
  display_.push_back(display);
  special_.push_back(special);
  all_ids_.emplace(surface, id);
  if (tokenizable) word_ids_.emplace(surface, id);
  return id;
}

int Vocabulary::add_word(const std::string& word) {
  auto it = word_ids_.find(word);
  if (it != word_ids_.end()) return it->second;
  if (word.empty() || word.find_first_of(" \t\n<>") != std::string::npos)
    throw ConfigError("invalid plain word '" + word + "'");
  return add_entry(word, word, false, true);
}

int Vocabulary::add_special(const std::string& surface) {
  return add_entry(surface, surface, true, false);
}

int Vocabulary::add_class_token(const std::string& surface, const std::string& display) {
  return add_entry(surface, display, true, false);
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    auto it = word_ids_.find(word);
    ids.push_back(it == word_ids_.end() ? kUnkId : it->second);
  }
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size()) throw ContractError("detokenize: id out of range");
    if (!out.empty()) out += " ";
    out += display_[static_cast<size_t>(id)];
  }
  return out;
}

int Vocabulary::id_of(const std::string& surface) const {
  auto it = all_ids_.find(surface);
  return it == all_ids_.end() ? -1 : it->second;
}

const std::string& Vocabulary::surface(int id) const {
  if (id < 0 || id >= size()) throw ContractError("surface: id out of range");
  return surfaces_[static_cast<size_t>(id)];
}

const std::string& Vocabulary::display(int id) const {
  if (id < 0 || id >= size()) throw ContractError("display: id out of range");
  return display_[static_cast<size_t>(id)];
}

bool Vocabulary::is_special(int id) const {
  if (id < 0 || id >= size()) throw ContractError("is_special: id out of range");
  return special_[static_cast<size_t>(id)];
}

TaskSpec& TaskRegistry::add_task(const SynthTaskConfig& config, const std::string& metric) {
  if (config.name.empty()) throw ConfigError("task needs a name");
  for (const TaskSpec& t : tasks_)
    if (t.name == config.name) throw ConfigError("duplicate task name '" + config.name + "'");
  TaskSpec spec;
  spec.name = config.name;
  spec.category = category_of(config.kind);
  spec.dataset = config;
  spec.size = config.size;
  spec.metric = metric;
  spec.prompt_token = vocab_.add_special("<task:" + config.name + ">");
  for (const std::string& w : task_word_vocabulary(config)) vocab_.add_word(w);
  tasks_.push_back(std::move(spec));
  return tasks_.back();
}

TaskSpec& TaskRegistry::task(const std::string& name) {
  for (TaskSpec& t : tasks_)
    if (t.name == name) return t;
  throw ConfigError("unknown task '" + name + "'");
}

const TaskSpec& TaskRegistry::task(const std::string& name) const {
  for (const TaskSpec& t : tasks_)
    if (t.name == name) return t;
  throw ConfigError("unknown task '" + name + "'");
}

int TaskRegistry::assign_pos_tables() {
  for (size_t i = 0; i < tasks_.size(); ++i) tasks_[i].pos_table = static_cast<int>(i);
  return static_cast<int>(tasks_.size());
}

int category_token(TaskRegistry& registry, TaskCategory category) {
  auto it = registry.category_tokens_.find(category);
  if (it != registry.category_tokens_.end()) return it->second;
  int id = registry.vocab_.add_special(std::string("<cat:") + category_name(category) + ">");
  registry.category_tokens_.emplace(category, id);
  return id;
}

void class_token_remap(TaskSpec& task, Vocabulary& vocab) {
  if (task.category != TaskCategory::kCls)
    throw ConfigError("class_token_remap: task '" + task.name + "' is not a classification task");
  std::vector<std::string> labels = class_labels(task.dataset);
  std::set<std::string> seen;
  for (const std::string& label : labels) {
    if (!seen.insert(label).second)
      throw ConfigError("class_token_remap: duplicate class '" + label + "'");
  }
  task.class_token_of.clear();
  for (const std::string& label : labels) {
    int id = vocab.add_class_token("<cls:" + task.name + ":" + label + ">", label);
    task.class_token_of.emplace(label, id);
  }
  task.class_remap = true;
}

BuiltSequence build_sequence(const Example& example, const TaskSpec& task, ConditioningMode mode,
                             TaskRegistry& registry, int max_len) {
  Vocabulary& vocab = registry.vocab();
  BuiltSequence out;
  out.ids.push_back(kBosId);
  switch (mode) {
    case ConditioningMode::kTaskPrompt:
      out.ids.push_back(task.prompt_token);
      out.ids.push_back(kSepId);
      break;
    case ConditioningMode::kCategoryPrompt:
      out.ids.push_back(category_token(registry, task.category));
      out.ids.push_back(kSepId);
      break;
    case ConditioningMode::kUnconditioned:
    case ConditioningMode::kTaskPositionEmbeddings:
      break;
  }
  // Questions ride in the prefix under every mode; only task identity is
  // hidden by the unconditioned variants.
  if (!example.prefix_text.empty()) {
    for (int id : vocab.tokenize(example.prefix_text)) out.ids.push_back(id);
    out.ids.push_back(kSepId);
  }
  out.prefix_len = static_cast<int>(out.ids.size());
  if (out.prefix_len + 1 > max_len)
    throw ContractError("build_sequence: prefix alone exceeds max_len for '" + example.id + "'");

  std::vector<int> target;
  if (task.class_remap) {
    auto it = task.class_token_of.find(example.target_text);
    if (it == task.class_token_of.end())
      throw ContractError("build_sequence: label '" + example.target_text +
                          "' missing from class token map");
    target.push_back(it->second);
  } else {
    target = vocab.tokenize(example.target_text);
  }
  int budget = max_len - out.prefix_len - 1;  // room for EOS
  if (static_cast<int>(target.size()) > budget) {
    target.resize(static_cast<size_t>(budget));
    out.truncated = true;
  }
  for (int id : target) out.ids.push_back(id);
  out.ids.push_back(kEosId);
  return out;
}

void write_dataset_jsonl(const std::vector<Example>& examples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  for (const Example& ex : examples) {
    nlohmann::json j;
    j["id"] = ex.id;
    j["image"] = ex.image_ref.empty() ? glyph_image_to_text(ex.image) : ex.image_ref;
    j["prefix_text"] = ex.prefix_text;
    j["target_text"] = ex.target_text;
    j["task"] = ex.task;
    out << j.dump() << "\n";
  }
}

std::vector<Example> read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<Example> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError(path + ": malformed JSON at line " + std::to_string(line_no));
    Example ex;
    ex.id = j.at("id").get<std::string>();
    std::string image = j.at("image").get<std::string>();
    if (image.rfind("g=", 0) == 0)
      ex.image = glyph_image_from_text(image);
    else
      ex.image_ref = image;
    ex.prefix_text = j.at("prefix_text").get<std::string>();
    ex.target_text = j.at("target_text").get<std::string>();
    ex.task = j.at("task").get<std::string>();
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace declab
