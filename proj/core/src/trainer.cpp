#include "declab/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "declab/errors.hpp"

namespace declab {

const char* schedule_name(Schedule s) {
  return s == Schedule::kConstant ? "constant" : "cosine_warmup";
}

Schedule schedule_from_name(const std::string& name) {
  if (name == "constant") return Schedule::kConstant;
  if (name == "cosine_warmup") return Schedule::kCosineWarmup;
  throw ConfigError("unknown schedule '" + name + "'");
}

void TrainConfig::validate() const {
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ConfigError("label_smoothing must be in [0,1)");
  if (grad_clip_norm <= 0.0) throw ConfigError("grad_clip_norm must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (cfg.schedule == Schedule::kConstant) return cfg.learning_rate;
  std::int64_t warmup = static_cast<std::int64_t>(
      std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (warmup > 0 && step < warmup)
    return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  std::int64_t rest = total_steps - warmup;
  if (rest <= 1) return cfg.learning_rate;
  double progress = static_cast<double>(step - warmup) / static_cast<double>(rest);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double clip_global_norm(std::vector<ParamGroup>& params, double max_norm) {
  double sq = 0.0;
  for (ParamGroup& p : params) {
    const float* g = p.tensor.grad();
    for (std::int64_t i = 0; i < p.tensor.size(); ++i)
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    float scale = static_cast<float>(max_norm / norm);
    for (ParamGroup& p : params) {
      float* g = p.tensor.grad();
      for (std::int64_t i = 0; i < p.tensor.size(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

void optimizer_step(std::vector<ParamGroup>& params, AdamWState& state, const TrainConfig& cfg,
                    double lr) {
  if (state.m.size() != params.size()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].tensor.size()), 0.0f);
      state.v[i].assign(static_cast<size_t>(params[i].tensor.size()), 0.0f);
    }
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    ParamGroup& p = params[i];
    float* w = p.tensor.data();
    const float* g = p.tensor.grad();
    for (std::int64_t j = 0; j < p.tensor.size(); ++j) {
      if (!std::isfinite(g[j]))
        throw NumericError("optimizer_step: non-finite gradient in '" + p.name + "'");
    }
    double lr_g = lr * p.lr_scale;
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (std::int64_t j = 0; j < p.tensor.size(); ++j) {
      double gj = static_cast<double>(g[j]);
      double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      double update = lr_g * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps);
      double wj = static_cast<double>(w[j]) - update;
      wj *= 1.0 - lr_g * cfg.weight_decay;
      w[j] = static_cast<float>(wj);
    }
  }
}

Tensor StoreProvider::get(const Example& example, Tape* tape, bool train) {
  (void)tape;
  (void)train;
  const std::string& key = example.image_ref.empty() ? example.id : example.image_ref;
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto sit = store_.find(key);
  if (sit == store_.end()) throw ContractError("store has no embedding for '" + key + "'");
  Tensor t = to_tensor<float>(sit->second);
  cache_.emplace(key, t);
  return t;
}

Tensor CompressionProvider::get(const Example& example, Tape* tape, bool train) {
  Tensor tokens = inner_.get(example, tape, train);
  return params_.apply(tape, tokens, heads_);
}

void CompressionProvider::append_params(std::vector<ParamGroup>& out) {
  params_.for_each_named(
      [&out](const std::string& name, Tensor& t) { out.push_back({name, t, 1.0}); });
}

Tensor ToyEncoderProvider::get(const Example& example, Tape* tape, bool train) {
  (void)train;
  auto it = feat_cache_.find(example.id);
  Tensor feats;
  if (it != feat_cache_.end()) {
    feats = it->second;
  } else {
    FeatureGrid grid = render(example.image);
    feats = Tensor::from({grid.n, grid.f}, std::move(grid.values));
    feat_cache_.emplace(example.id, feats);
  }
  return toy_encode(tape, feats, params_, trainable_);
}

void ToyEncoderProvider::append_params(std::vector<ParamGroup>& out) {
  if (!trainable_) return;
  params_.for_each_named(
      [&out](const std::string& name, Tensor& t) { out.push_back({name, t, 1.0}); });
}

Trainer::Trainer(Decoder& model, EncodedProvider& provider, TaskRegistry& registry,
                 ConditioningMode mode, TrainConfig cfg)
    : model_(model), provider_(provider), registry_(registry), mode_(mode), cfg_(std::move(cfg)) {
  cfg_.validate();
  model_.params().for_each_named(
      [this](const std::string& name, Tensor& t) { params_.push_back({name, t, 1.0}); });
  std::vector<ParamGroup> extra;
  provider_.append_params(extra);
  for (ParamGroup& p : extra) {
    p.lr_scale = cfg_.encoder_lr_multiplier;
    params_.push_back(p);
  }
}

ArrayMap Trainer::snapshot() const {
  ArrayMap arrays;
  for (const ParamGroup& p : params_) {
    NamedArray arr;
    arr.shape = p.tensor.shape();
    arr.data = p.tensor.values();
    arrays.emplace(p.name, std::move(arr));
  }
  return arrays;
}

void Trainer::save(const ArrayMap& arrays, const std::string& path) const {
  if (!path.empty()) save_checkpoint(arrays, path);
}

TrainResult Trainer::train(const MixtureSpec& mixture,
                           const std::vector<const std::vector<Example>*>& datasets,
                           const EvalCallback& eval, const std::string& checkpoint_path) {
  mixture.validate();
  if (datasets.size() != mixture.tasks.size())
    throw ConfigError("train: one dataset per mixture task required");
  std::vector<const TaskSpec*> specs;
  specs.reserve(mixture.tasks.size());
  for (const MixtureTask& t : mixture.tasks) specs.push_back(&registry_.task(t.name));

  TrainResult result;
  std::int64_t steps_per_epoch = epoch_length(mixture);
  std::int64_t total_steps = steps_per_epoch * cfg_.epochs;
  MixtureSampler sampler(mixture);
  AdamWState opt_state;
  Rng dropout_rng(Rng::derive(cfg_.seed, "dropout"));
  ArrayMap last_good = snapshot();

  double loss_acc = 0.0;
  std::int64_t loss_count = 0;
  std::int64_t eval_interval =
      cfg_.eval_every_epochs > 0 ? steps_per_epoch * cfg_.eval_every_epochs : 0;

  for (std::int64_t step = 0; step < total_steps; ++step) {
    auto batch = sampler.next_batch();
    std::vector<BuiltSequence> seqs(batch.size());
    std::vector<Decoder::Item> items(batch.size());
    Tape tape;
    try {
      for (size_t b = 0; b < batch.size(); ++b) {
        const auto& draw = batch[b];
        const std::vector<Example>& data = *datasets[static_cast<size_t>(draw.task)];
        const Example& ex = data[static_cast<size_t>(draw.example % static_cast<std::int64_t>(data.size()))];
        const TaskSpec& spec = *specs[static_cast<size_t>(draw.task)];
        seqs[b] = build_sequence(ex, spec, mode_, registry_, model_.config().max_len);
        items[b].encoded = provider_.get(ex, &tape, true);
        items[b].ids = &seqs[b].ids;
        items[b].prefix_len = seqs[b].prefix_len;
        items[b].pos_table =
            mode_ == ConditioningMode::kTaskPositionEmbeddings ? spec.pos_table : 0;
      }
      Decoder::Forward f = model_.forward_teacher_forced(items, &tape, true, &dropout_rng);
      Tensor loss = smoothed_cross_entropy(&tape, f.logits, f.targets, f.loss_mask,
                                           cfg_.label_smoothing);
      double loss_value = static_cast<double>(loss.item());
      for (ParamGroup& p : params_) p.tensor.zero_grad();
      tape.backward(loss);
      clip_global_norm(params_, cfg_.grad_clip_norm);
      optimizer_step(params_, opt_state, cfg_, learning_rate_at(cfg_, step, total_steps));
      loss_acc += loss_value;
      loss_count += 1;
      result.final_train_loss = loss_value;
    } catch (const NumericError&) {
      // Non-finite loss or gradients: keep the last good snapshot.
      save(last_good, checkpoint_path);
      result.aborted = true;
      result.steps = step;
      return result;
    }
    bool at_eval = eval_interval > 0 && (step + 1) % eval_interval == 0;
    bool at_end = step + 1 == total_steps;
    if (at_eval || at_end) {
      result.records.push_back(
          {step + 1, "_train", "loss", loss_count ? loss_acc / static_cast<double>(loss_count) : 0.0});
      loss_acc = 0.0;
      loss_count = 0;
      if (eval) eval(step + 1, result.records);
      last_good = snapshot();
    }
  }
  result.steps = total_steps;
  save(snapshot(), checkpoint_path);
  return result;
}

}  // namespace declab
