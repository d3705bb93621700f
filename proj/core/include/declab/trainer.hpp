#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "declab/decoder.hpp"
#include "declab/encoder.hpp"
#include "declab/mixture.hpp"
#include "declab/synth.hpp"
#include "declab/vocab.hpp"

namespace declab {

enum class Schedule { kConstant, kCosineWarmup };

const char* schedule_name(Schedule s);
Schedule schedule_from_name(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;  // decoupled
  double dropout = 0.1;
  double label_smoothing = 0.1;
  double grad_clip_norm = 1.0;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::kCosineWarmup;
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every_epochs = 0;           // 0 = evaluate only at the end
  double encoder_lr_multiplier = 1.0;  // lr scale for encoder parameter groups

  void validate() const;
};

double learning_rate_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);

struct ParamGroup {
  std::string name;
  Tensor tensor;
  double lr_scale = 1.0;
};

// AdamW first/second moment accumulators, indexed like the parameter list.
struct AdamWState {
  std::vector<std::vector<float>> m, v;
  std::int64_t step = 0;
};

// Scales all gradients by max_norm / ||g|| when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_global_norm(std::vector<ParamGroup>& params, double max_norm);

// Bias-corrected AdamW update followed by decoupled decay
// p <- p * (1 - lr*wd). Aborts with diagnostics on non-finite gradients.
void optimizer_step(std::vector<ParamGroup>& params, AdamWState& state, const TrainConfig& cfg,
                    double lr);

// Source of encoder tokens for one example. Implementations decide whether
// gradient flows back into encoder-side parameters.
class EncodedProvider {
 public:
  virtual ~EncodedProvider() = default;
  virtual Tensor get(const Example& example, Tape* tape, bool train) = 0;
  virtual void append_params(std::vector<ParamGroup>& out) { (void)out; }
};

// Frozen embeddings looked up from a store. Tensors are cached and shared;
// they carry no gradient.
class StoreProvider : public EncodedProvider {
 public:
  explicit StoreProvider(const EmbeddingStore& store) : store_(store) {}
  Tensor get(const Example& example, Tape* tape, bool train) override;

 private:
  const EmbeddingStore& store_;
  std::map<std::string, Tensor> cache_;
};

// Frozen store tokens routed through trainable compression (bottleneck or
// MAP pooling) on the tape.
class CompressionProvider : public EncodedProvider {
 public:
  CompressionProvider(const EmbeddingStore& store, CompressionParamsT<float>& params, int heads)
      : inner_(store), params_(params), heads_(heads) {}
  Tensor get(const Example& example, Tape* tape, bool train) override;
  void append_params(std::vector<ParamGroup>& out) override;

 private:
  StoreProvider inner_;
  CompressionParamsT<float>& params_;
  int heads_;
};

// Runs the toy encoder per example; trainable or frozen.
class ToyEncoderProvider : public EncodedProvider {
 public:
  ToyEncoderProvider(ToyEncoderParamsT<float>& params, bool trainable)
      : params_(params), trainable_(trainable) {}
  Tensor get(const Example& example, Tape* tape, bool train) override;
  void append_params(std::vector<ParamGroup>& out) override;
  bool trainable() const { return trainable_; }

 private:
  ToyEncoderParamsT<float>& params_;
  bool trainable_;
  std::map<std::string, Tensor> feat_cache_;
};

struct MetricRecord {
  std::int64_t step = 0;
  std::string task;
  std::string metric;
  double value = 0.0;
};

struct TrainResult {
  std::vector<MetricRecord> records;
  bool aborted = false;
  std::int64_t steps = 0;
  double final_train_loss = 0.0;
};

// Called at eval points with the current step; appends metric records.
using EvalCallback = std::function<void(std::int64_t step, std::vector<MetricRecord>& out)>;

// Owns the optimization loop: sampling, conditioning, forward/backward,
// clipping, AdamW, schedule, eval hooks and checkpointing. Deterministic
// given the seed.
class Trainer {
 public:
  Trainer(Decoder& model, EncodedProvider& provider, TaskRegistry& registry,
          ConditioningMode mode, TrainConfig cfg);

  // datasets: per mixture task, in mixture order.
  TrainResult train(const MixtureSpec& mixture,
                    const std::vector<const std::vector<Example>*>& datasets,
                    const EvalCallback& eval = nullptr, const std::string& checkpoint_path = "");

  std::vector<ParamGroup>& params() { return params_; }

 private:
  ArrayMap snapshot() const;
  void save(const ArrayMap& arrays, const std::string& path) const;

  Decoder& model_;
  EncodedProvider& provider_;
  TaskRegistry& registry_;
  ConditioningMode mode_;
  TrainConfig cfg_;
  std::vector<ParamGroup> params_;
};

}  // namespace declab
