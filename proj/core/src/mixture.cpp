#include "declab/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "declab/errors.hpp"

namespace declab {

const char* mix_strategy_name(MixStrategy s) {
  switch (s) {
    case MixStrategy::kConcatImages: return "concat_images";
    case MixStrategy::kEqual: return "equal";
    case MixStrategy::kConcatPairs: return "concat_pairs";
    case MixStrategy::kConcatUniqueImages: return "concat_unique_images";
  }
  return "?";
}

MixStrategy mix_strategy_from_name(const std::string& name) {
  for (MixStrategy s : {MixStrategy::kConcatImages, MixStrategy::kEqual, MixStrategy::kConcatPairs,
                        MixStrategy::kConcatUniqueImages}) {
    if (name == mix_strategy_name(s)) return s;
  }
  throw ConfigError("unknown mixing strategy '" + name + "'");
}

const char* batch_composition_name(BatchComposition c) {
  return c == BatchComposition::kMixed ? "mixed" : "homogeneous";
}

BatchComposition batch_composition_from_name(const std::string& name) {
  if (name == "mixed") return BatchComposition::kMixed;
  if (name == "homogeneous") return BatchComposition::kHomogeneous;
  throw ConfigError("unknown batch composition '" + name + "'");
}

void MixtureSpec::validate() const {
  if (tasks.empty()) throw ConfigError("mixture needs at least one task");
  if (batch_size < 1) throw ConfigError("mixture batch_size must be >= 1");
  for (const MixtureTask& t : tasks) {
    if (t.size <= 0) throw ConfigError("mixture task '" + t.name + "' needs size > 0");
    if (t.pairs_per_image < 1.0)
      throw ConfigError("mixture task '" + t.name + "' needs pairs_per_image >= 1");
  }
}

namespace {

// Shared image count of a dedup group: the largest member, since the other
// tasks reuse the same image pool.
std::vector<double> unique_image_mass(const MixtureSpec& spec) {
  std::map<int, double> group_max;
  std::map<int, int> group_size;
  for (size_t i = 0; i < spec.tasks.size(); ++i) {
    const MixtureTask& t = spec.tasks[i];
    if (t.dedup_group < 0) continue;
    group_max[t.dedup_group] = std::max(group_max[t.dedup_group], static_cast<double>(t.size));
    group_size[t.dedup_group] += 1;
  }
  std::vector<double> mass(spec.tasks.size());
  for (size_t i = 0; i < spec.tasks.size(); ++i) {
    const MixtureTask& t = spec.tasks[i];
    if (t.dedup_group < 0)
      mass[i] = static_cast<double>(t.size);
    else
      mass[i] = group_max[t.dedup_group] / group_size[t.dedup_group];
  }
  return mass;
}

}  // namespace

std::vector<double> effective_sizes(const MixtureSpec& spec) {
  spec.validate();
  std::vector<double> eff(spec.tasks.size());
  switch (spec.strategy) {
    case MixStrategy::kConcatImages:
    case MixStrategy::kEqual:
      for (size_t i = 0; i < spec.tasks.size(); ++i)
        eff[i] = static_cast<double>(spec.tasks[i].size);
      break;
    case MixStrategy::kConcatPairs:
      for (size_t i = 0; i < spec.tasks.size(); ++i)
        eff[i] = static_cast<double>(spec.tasks[i].size) * spec.tasks[i].pairs_per_image;
      break;
    case MixStrategy::kConcatUniqueImages:
      eff = unique_image_mass(spec);
      break;
  }
  return eff;
}

std::vector<double> sampling_weights(const MixtureSpec& spec) {
  spec.validate();
  std::vector<double> w(spec.tasks.size());
  if (spec.strategy == MixStrategy::kEqual) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(spec.tasks.size()));
    return w;
  }
  w = effective_sizes(spec);
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

std::int64_t epoch_length(const MixtureSpec& spec) {
  std::vector<double> eff = effective_sizes(spec);
  double total = 0.0;
  for (double v : eff) total += v;
  return static_cast<std::int64_t>(std::ceil(total / static_cast<double>(spec.batch_size)));
}

MixtureSampler::MixtureSampler(MixtureSpec spec)
    : spec_(std::move(spec)),
      weights_(sampling_weights(spec_)),
      rng_(Rng::derive(spec_.seed, "mixture_sampler")) {
  cumulative_.resize(weights_.size());
  double acc = 0.0;
  for (size_t i = 0; i < weights_.size(); ++i) {
    acc += weights_[i];
    cumulative_[i] = acc;
  }
  cumulative_.back() = 1.0;
  order_.resize(spec_.tasks.size());
  cursor_.assign(spec_.tasks.size(), 0);
  epoch_.assign(spec_.tasks.size(), -1);
}

std::int64_t MixtureSampler::next_example(int task) {
  auto& order = order_[static_cast<size_t>(task)];
  std::int64_t n = spec_.tasks[static_cast<size_t>(task)].size;
  if (cursor_[static_cast<size_t>(task)] >= static_cast<std::int64_t>(order.size())) {
    epoch_[static_cast<size_t>(task)] += 1;
    order.resize(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(Rng::derive(spec_.seed, spec_.tasks[static_cast<size_t>(task)].name +
                                                "/epoch/" +
                                                std::to_string(epoch_[static_cast<size_t>(task)])));
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::int64_t j = shuffle_rng.uniform_int(static_cast<int>(i + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    cursor_[static_cast<size_t>(task)] = 0;
  }
  return order[static_cast<size_t>(cursor_[static_cast<size_t>(task)]++)];
}

std::vector<MixtureSampler::Draw> MixtureSampler::next_batch() {
  std::vector<Draw> batch(static_cast<size_t>(spec_.batch_size));
  auto draw_task = [this]() {
    double u = rng_.uniform();
    auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<int>(std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1));
  };
  if (spec_.composition == BatchComposition::kHomogeneous) {
    int task = draw_task();
    for (auto& d : batch) d = {task, next_example(task)};
  } else {
    for (auto& d : batch) {
      int task = draw_task();
      d = {task, next_example(task)};
    }
  }
  return batch;
}

}  // namespace declab
