#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "declab/rng.hpp"

namespace declab {

enum class MixStrategy { kConcatImages, kEqual, kConcatPairs, kConcatUniqueImages };
enum class BatchComposition { kMixed, kHomogeneous };

const char* mix_strategy_name(MixStrategy s);
MixStrategy mix_strategy_from_name(const std::string& name);
const char* batch_composition_name(BatchComposition c);
BatchComposition batch_composition_from_name(const std::string& name);

struct MixtureTask {
  std::string name;
  std::int64_t size = 0;         // example (image) count
  double pairs_per_image = 1.0;  // annotation pairs per image
  int dedup_group = -1;          // tasks sharing images carry the same id; -1 = own images
};

struct MixtureSpec {
  MixStrategy strategy = MixStrategy::kConcatImages;
  std::vector<MixtureTask> tasks;
  int batch_size = 32;
  BatchComposition composition = BatchComposition::kMixed;
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-task sampling probabilities (nonnegative, summing to 1):
//   ConcatImages        weight ~ size
//   Equal               weight = 1/|tasks|
//   ConcatPairs         weight ~ size * pairs_per_image
//   ConcatUniqueImages  weight ~ the dedup group's shared image count,
//                       attributed once and split evenly within the group
std::vector<double> sampling_weights(const MixtureSpec& spec);

// Unnormalized effective example counts per strategy (what a "multi-task
// epoch" has to visit). Equal matches ConcatImages' total training time.
std::vector<double> effective_sizes(const MixtureSpec& spec);

// ceil(sum of effective sizes / batch_size).
std::int64_t epoch_length(const MixtureSpec& spec);

// Deterministic batch stream over (task, example index) pairs. Per-task
// example order is a seeded shuffle, reshuffled each local epoch.
class MixtureSampler {
 public:
  explicit MixtureSampler(MixtureSpec spec);

  struct Draw {
    int task = 0;
    std::int64_t example = 0;
  };

  std::vector<Draw> next_batch();
  const MixtureSpec& spec() const { return spec_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::int64_t next_example(int task);

  MixtureSpec spec_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
  Rng rng_;
  std::vector<std::vector<std::int64_t>> order_;
  std::vector<std::int64_t> cursor_;
  std::vector<std::int64_t> epoch_;
};

}  // namespace declab
