#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "declab/errors.hpp"

namespace declab {

// One cell of a glyph-grid image. digit == -1 means no digit present.
struct GlyphCell {
  int glyph = 0;
  int color = 0;
  int digit = -1;
};

// A G x G grid of glyph cells; the synthetic stand-in for an image.
struct GlyphImageSpec {
  int grid = 4;
  std::uint64_t seed = 0;
  std::vector<GlyphCell> cells;  // row-major, grid*grid entries

  bool operator==(const GlyphImageSpec&) const = default;
};

// Compact text form used inline in dataset files: "g=4;s=17;c=7.2.5,3.0.-,..."
std::string glyph_image_to_text(const GlyphImageSpec& spec);
GlyphImageSpec glyph_image_from_text(const std::string& text);

// Per-patch one-hot features: glyph (20) + color (6) + digit (none + 0..9).
inline constexpr int kNumGlyphs = 20;
inline constexpr int kNumColors = 6;
inline constexpr int kPatchFeatureDim = kNumGlyphs + kNumColors + 11;

struct FeatureGrid {
  int n = 0;  // patches
  int f = 0;  // features per patch
  std::vector<float> values;
};

// Deterministic rendering of a spec to patch features. Distinct specs give
// distinct grids; changing one cell changes exactly that patch.
FeatureGrid render(const GlyphImageSpec& spec);

// Word lists (closed vocabularies) used by the generators.
const std::vector<std::string>& glyph_names();
const std::vector<std::string>& color_names();
const std::vector<std::string>& digit_words();  // "0".."9"
const std::vector<std::string>& count_words();  // "zero".."sixteen"
const std::vector<std::string>& row_words();    // one per grid row (grid <= 4)

enum class TaskKind {
  kClassifyDominantGlyph,
  kCaptionLayout,
  kOcrReadSequence,
  kQaCountAttribute,
  kAuxOcrConcat,
  kAuxOcrRandom,
  kAuxAltText,
};

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct SynthTaskConfig {
  std::string name;  // dataset handle; also prefixes example ids
  TaskKind kind = TaskKind::kClassifyDominantGlyph;
  int size = 256;
  std::uint64_t seed = 0;
  std::string language = "en";  // caption variants only
  double vocab_overlap = 1.0;   // fraction of caption words shared with "en"
  int grid = 4;
  int digit_cells = 5;  // cells carrying digits in OCR-style images
};

struct Example {
  std::string id;
  GlyphImageSpec image;
  std::string image_ref;    // embedding-store id when the spec is not inline
  std::string prefix_text;  // question text for QA tasks, empty otherwise
  std::string target_text;
  std::string task;
};

// Deterministic dataset generation; same config gives an identical dataset.
std::vector<Example> generate(const SynthTaskConfig& config);

// Ground-truth recomputation helpers (used by generators and tests).
int dominant_glyph(const GlyphImageSpec& spec);
std::string caption_for(const GlyphImageSpec& spec);
std::string ocr_target(const GlyphImageSpec& spec);

// The full closed word vocabulary a task's prefix/target texts draw from.
std::vector<std::string> task_word_vocabulary(const SynthTaskConfig& config);

// Class label set for classification-style tasks.
std::vector<std::string> class_labels(const SynthTaskConfig& config);

// Per-language word remap used by caption tasks: a seeded bijection over the
// caption vocabulary where an `overlap` fraction of words keeps its surface.
std::string remap_word(const std::string& word, const std::string& language, double overlap,
                       std::uint64_t seed);

// The seed that fixes a language's remap bijection (derived from the
// language code only, so train and eval splits agree).
std::uint64_t language_remap_seed(const std::string& language);

}  // namespace declab
