#include "declab/synth.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "declab/rng.hpp"

namespace declab {

namespace {

std::uint64_t fnv64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string glyph_image_to_text(const GlyphImageSpec& spec) {
  std::ostringstream out;
  out << "g=" << spec.grid << ";s=" << spec.seed << ";c=";
  for (size_t i = 0; i < spec.cells.size(); ++i) {
    if (i) out << ",";
    const GlyphCell& c = spec.cells[i];
    out << c.glyph << "." << c.color << ".";
    if (c.digit < 0)
      out << "-";
    else
      out << c.digit;
  }
  return out.str();
}

GlyphImageSpec glyph_image_from_text(const std::string& text) {
  GlyphImageSpec spec;
  spec.cells.clear();
  size_t gpos = text.find("g=");
  size_t spos = text.find(";s=");
  size_t cpos = text.find(";c=");
  if (gpos != 0 || spos == std::string::npos || cpos == std::string::npos)
    throw FormatError("glyph image spec: expected g=..;s=..;c=..");
  spec.grid = std::stoi(text.substr(2, spos - 2));
  spec.seed = std::stoull(text.substr(spos + 3, cpos - spos - 3));
  std::string cells = text.substr(cpos + 3);
  std::istringstream in(cells);
  std::string item;
  while (std::getline(in, item, ',')) {
    size_t d1 = item.find('.');
    size_t d2 = item.find('.', d1 + 1);
    if (d1 == std::string::npos || d2 == std::string::npos)
      throw FormatError("glyph image spec: bad cell '" + item + "'");
    GlyphCell cell;
    cell.glyph = std::stoi(item.substr(0, d1));
    cell.color = std::stoi(item.substr(d1 + 1, d2 - d1 - 1));
    std::string dg = item.substr(d2 + 1);
    cell.digit = dg == "-" ? -1 : std::stoi(dg);
    spec.cells.push_back(cell);
  }
  if (static_cast<int>(spec.cells.size()) != spec.grid * spec.grid)
    throw FormatError("glyph image spec: cell count does not match grid");
  return spec;
}

FeatureGrid render(const GlyphImageSpec& spec) {
  int n = spec.grid * spec.grid;
  if (static_cast<int>(spec.cells.size()) != n)
    throw ContractError("render: cell count does not match grid");
  FeatureGrid grid;
  grid.n = n;
  grid.f = kPatchFeatureDim;
  grid.values.assign(static_cast<size_t>(n) * kPatchFeatureDim, 0.0f);
  for (int i = 0; i < n; ++i) {
    const GlyphCell& c = spec.cells[static_cast<size_t>(i)];
    float* row = grid.values.data() + static_cast<size_t>(i) * kPatchFeatureDim;
    row[c.glyph] = 1.0f;
    row[kNumGlyphs + c.color] = 1.0f;
    row[kNumGlyphs + kNumColors + (c.digit < 0 ? 0 : 1 + c.digit)] = 1.0f;
  }
  return grid;
}

const std::vector<std::string>& glyph_names() {
  static const std::vector<std::string> names = {
      "arch", "bolt", "crab", "drum", "fern", "gate", "harp",  "iris", "knot", "lamp",
      "moth", "nest", "opal", "pine", "quill", "reef", "star", "tusk", "urn",  "vane"};
  return names;
}

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {"red", "blue", "green", "gold", "gray", "pink"};
  return names;
}

const std::vector<std::string>& digit_words() {
  static const std::vector<std::string> names = {"0", "1", "2", "3", "4",
                                                 "5", "6", "7", "8", "9"};
  return names;
}

const std::vector<std::string>& count_words() {
  static const std::vector<std::string> names = {
      "zero", "one",  "two",    "three",    "four",     "five",    "six",     "seven", "eight",
      "nine", "ten",  "eleven", "twelve",   "thirteen", "fourteen", "fifteen", "sixteen"};
  return names;
}

const std::vector<std::string>& row_words() {
  static const std::vector<std::string> names = {"top", "second", "third", "bottom"};
  return names;
}

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassifyDominantGlyph: return "classify_dominant_glyph";
    case TaskKind::kCaptionLayout: return "caption_layout";
    case TaskKind::kOcrReadSequence: return "ocr_read_sequence";
    case TaskKind::kQaCountAttribute: return "qa_count_attribute";
    case TaskKind::kAuxOcrConcat: return "aux_ocr_concat";
    case TaskKind::kAuxOcrRandom: return "aux_ocr_random";
    case TaskKind::kAuxAltText: return "aux_alt_text";
  }
  return "?";
}

TaskKind task_kind_from_name(const std::string& name) {
  for (TaskKind k : {TaskKind::kClassifyDominantGlyph, TaskKind::kCaptionLayout,
                     TaskKind::kOcrReadSequence, TaskKind::kQaCountAttribute,
                     TaskKind::kAuxOcrConcat, TaskKind::kAuxOcrRandom, TaskKind::kAuxAltText}) {
    if (name == task_kind_name(k)) return k;
  }
  throw ConfigError("unknown task kind '" + name + "'");
}

int dominant_glyph(const GlyphImageSpec& spec) {
  std::array<int, kNumGlyphs> counts{};
  for (const GlyphCell& c : spec.cells) counts[static_cast<size_t>(c.glyph)]++;
  int best = 0;
  for (int g = 1; g < kNumGlyphs; ++g)
    if (counts[static_cast<size_t>(g)] > counts[static_cast<size_t>(best)]) best = g;
  return best;  // ties resolve to the lowest glyph id by scan order
}

std::string caption_for(const GlyphImageSpec& spec) {
  int g = dominant_glyph(spec);
  std::array<int, kNumColors> color_counts{};
  std::vector<int> row_counts(static_cast<size_t>(spec.grid), 0);
  int total = 0;
  for (int i = 0; i < static_cast<int>(spec.cells.size()); ++i) {
    const GlyphCell& c = spec.cells[static_cast<size_t>(i)];
    if (c.glyph != g) continue;
    total++;
    color_counts[static_cast<size_t>(c.color)]++;
    row_counts[static_cast<size_t>(i / spec.grid)]++;
  }
  int color = 0;
  for (int c = 1; c < kNumColors; ++c)
    if (color_counts[static_cast<size_t>(c)] > color_counts[static_cast<size_t>(color)]) color = c;
  int row = 0;
  for (int r = 1; r < spec.grid; ++r)
    if (row_counts[static_cast<size_t>(r)] > row_counts[static_cast<size_t>(row)]) row = r;
  return count_words()[static_cast<size_t>(total)] + " " + color_names()[static_cast<size_t>(color)] +
         " " + glyph_names()[static_cast<size_t>(g)] + " at " + row_words()[static_cast<size_t>(row)];
}

std::string ocr_target(const GlyphImageSpec& spec) {
  std::string out;
  for (const GlyphCell& c : spec.cells) {
    if (c.digit < 0) continue;
    if (!out.empty()) out += " ";
    out += digit_words()[static_cast<size_t>(c.digit)];
  }
  return out;
}

std::uint64_t language_remap_seed(const std::string& language) { return fnv64(language); }

std::string remap_word(const std::string& word, const std::string& language, double overlap,
                       std::uint64_t seed) {
  if (language == "en") return word;
  Rng r(Rng::derive(seed ^ fnv64(word), "lang_remap"));
  if (r.uniform() < overlap) return word;
  return word + "_" + language;
}

namespace {

GlyphImageSpec sample_image(Rng& rng, int grid, bool with_digits, int digit_cells,
                            std::uint64_t image_seed) {
  GlyphImageSpec spec;
  spec.grid = grid;
  spec.seed = image_seed;
  int n = grid * grid;
  spec.cells.resize(static_cast<size_t>(n));
  // One glyph gets a visible majority so dominance is stable.
  int dominant = rng.uniform_int(kNumGlyphs);
  int majority = 4 + rng.uniform_int(4);  // 4..7 of 16 cells
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
  for (int i = 0; i < n; ++i) {
    GlyphCell& c = spec.cells[static_cast<size_t>(order[static_cast<size_t>(i)])];
    c.glyph = i < majority ? dominant : rng.uniform_int(kNumGlyphs);
    c.color = rng.uniform_int(kNumColors);
    c.digit = -1;
  }
  if (with_digits) {
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    int k = std::min(digit_cells, n);
    for (int i = 0; i < k; ++i)
      spec.cells[static_cast<size_t>(order[static_cast<size_t>(i)])].digit = rng.uniform_int(10);
  }
  return spec;
}

std::string remap_caption(const std::string& caption, const SynthTaskConfig& cfg) {
  if (cfg.language == "en") return caption;
  std::uint64_t lang_seed = language_remap_seed(cfg.language);
  std::istringstream in(caption);
  std::string word, out;
  while (in >> word) {
    if (!out.empty()) out += " ";
    out += remap_word(word, cfg.language, cfg.vocab_overlap, lang_seed);
  }
  return out;
}

}  // namespace

std::vector<Example> generate(const SynthTaskConfig& config) {
  if (config.size < 1) throw ConfigError("synth task size must be >= 1");
  if (config.grid < 1 || config.grid > static_cast<int>(row_words().size()))
    throw ConfigError("synth grid must be in [1, 4]");
  bool with_digits = config.kind == TaskKind::kOcrReadSequence ||
                     config.kind == TaskKind::kAuxOcrConcat ||
                     config.kind == TaskKind::kAuxOcrRandom;
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(config.size));
  for (int i = 0; i < config.size; ++i) {
    std::uint64_t ex_seed = Rng::derive(config.seed, config.name + "/" + std::to_string(i));
    Rng rng(ex_seed);
    Example ex;
    ex.task = config.name;
    ex.id = config.name + "/" + std::to_string(i);
    ex.image = sample_image(rng, config.grid, with_digits, config.digit_cells, ex_seed);
    switch (config.kind) {
      case TaskKind::kClassifyDominantGlyph:
        ex.target_text = glyph_names()[static_cast<size_t>(dominant_glyph(ex.image))];
        break;
      case TaskKind::kCaptionLayout:
        ex.target_text = remap_caption(caption_for(ex.image), config);
        break;
      case TaskKind::kOcrReadSequence:
      case TaskKind::kAuxOcrConcat:
        ex.target_text = ocr_target(ex.image);
        break;
      case TaskKind::kAuxOcrRandom: {
        // One row's digit string, picked at random among rows with digits.
        std::vector<int> rows_with;
        for (int r = 0; r < ex.image.grid; ++r) {
          for (int c = 0; c < ex.image.grid; ++c) {
            if (ex.image.cells[static_cast<size_t>(r * ex.image.grid + c)].digit >= 0) {
              rows_with.push_back(r);
              break;
            }
          }
        }
        int row = rows_with[static_cast<size_t>(rng.uniform_int(static_cast<int>(rows_with.size())))];
        std::string target;
        for (int c = 0; c < ex.image.grid; ++c) {
          int d = ex.image.cells[static_cast<size_t>(row * ex.image.grid + c)].digit;
          if (d < 0) continue;
          if (!target.empty()) target += " ";
          target += digit_words()[static_cast<size_t>(d)];
        }
        ex.target_text = target;
        break;
      }
      case TaskKind::kAuxAltText:
        ex.target_text = caption_for(ex.image);
        break;
      case TaskKind::kQaCountAttribute: {
        bool ask_color = rng.uniform() < 0.5;
        int count = 0;
        std::string attr;
        if (ask_color) {
          int color = rng.uniform_int(kNumColors);
          attr = color_names()[static_cast<size_t>(color)];
          for (const GlyphCell& c : ex.image.cells) count += c.color == color ? 1 : 0;
        } else {
          int glyph = rng.uniform_int(kNumGlyphs);
          attr = glyph_names()[static_cast<size_t>(glyph)];
          for (const GlyphCell& c : ex.image.cells) count += c.glyph == glyph ? 1 : 0;
        }
        ex.prefix_text = "count " + attr;
        ex.target_text = count_words()[static_cast<size_t>(count)];
        break;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::string> task_word_vocabulary(const SynthTaskConfig& config) {
  std::vector<std::string> words;
  auto append = [&words](const std::vector<std::string>& more) {
    words.insert(words.end(), more.begin(), more.end());
  };
  switch (config.kind) {
    case TaskKind::kClassifyDominantGlyph:
      append(glyph_names());
      break;
    case TaskKind::kCaptionLayout: {
      std::uint64_t lang_seed = language_remap_seed(config.language);
      std::vector<std::string> base;
      base.insert(base.end(), count_words().begin(), count_words().end());
      base.insert(base.end(), color_names().begin(), color_names().end());
      base.insert(base.end(), glyph_names().begin(), glyph_names().end());
      base.push_back("at");
      base.insert(base.end(), row_words().begin(), row_words().end());
      for (const std::string& w : base)
        words.push_back(remap_word(w, config.language, config.vocab_overlap, lang_seed));
      break;
    }
    case TaskKind::kOcrReadSequence:
    case TaskKind::kAuxOcrConcat:
    case TaskKind::kAuxOcrRandom:
      append(digit_words());
      break;
    case TaskKind::kAuxAltText:
      append(count_words());
      append(color_names());
      append(glyph_names());
      words.push_back("at");
      append(row_words());
      break;
    case TaskKind::kQaCountAttribute:
      words.push_back("count");
      append(color_names());
      append(glyph_names());
      append(count_words());
      break;
  }
  return words;
}

std::vector<std::string> class_labels(const SynthTaskConfig& config) {
  if (config.kind == TaskKind::kClassifyDominantGlyph) return glyph_names();
  if (config.kind == TaskKind::kQaCountAttribute) return count_words();
  return {};
}

}  // namespace declab
