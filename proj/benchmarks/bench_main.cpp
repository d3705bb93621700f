#include <benchmark/benchmark.h>

#include "declab/decoder.hpp"
#include "declab/decoding.hpp"
#include "declab/metrics.hpp"
#include "declab/tensor.hpp"

using namespace declab;

static void BM_Matmul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::randn({n, n}, 1.0f, rng);
  Tensor b = Tensor::randn({n, n}, 1.0f, rng);
  for (auto _ : state) {
    Tensor c = matmul<float>(nullptr, a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

namespace {

Decoder make_model(int depth) {
  DecoderConfig cfg;
  cfg.depth = depth;
  cfg.model_dim = 32;
  cfg.heads = 4;
  cfg.mlp_dim = 128;
  cfg.vocab_size = 96;
  cfg.max_len = 24;
  cfg.dropout_rate = 0.1;
  cfg.enc_dim = 64;
  return Decoder(cfg, 7);
}

}  // namespace

static void BM_TeacherForcedStep(benchmark::State& state) {
  Decoder model = make_model(static_cast<int>(state.range(0)));
  Rng rng(3);
  const int batch = 32;
  std::vector<Tensor> encs;
  std::vector<std::vector<int>> ids(batch);
  for (int b = 0; b < batch; ++b) {
    encs.push_back(Tensor::randn({16, 64}, 1.0f, rng));
    ids[static_cast<size_t>(b)] = {kBosId, 10, 11, 12, 13, 14, 15, 16, kEosId};
  }
  Rng drop(5);
  for (auto _ : state) {
    Tape tape;
    std::vector<Decoder::Item> items;
    for (int b = 0; b < batch; ++b)
      items.push_back({encs[static_cast<size_t>(b)], &ids[static_cast<size_t>(b)], 1, 0});
    auto f = model.forward_teacher_forced(items, &tape, true, &drop);
    Tensor loss = smoothed_cross_entropy(&tape, f.logits, f.targets, f.loss_mask, 0.1);
    model.params().for_each_named([](const std::string&, Tensor& t) { t.zero_grad(); });
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TeacherForcedStep)->Arg(1)->Arg(2)->Arg(4);

static void BM_GreedyDecode(benchmark::State& state) {
  Decoder model = make_model(2);
  Rng rng(3);
  Tensor enc = Tensor::randn({16, 64}, 1.0f, rng);
  std::vector<int> prefix = {kBosId, 5, kSepId};
  for (auto _ : state) {
    DecodeResult res = greedy(model, enc, prefix, 16);
    benchmark::DoNotOptimize(res.ids.data());
  }
}
BENCHMARK(BM_GreedyDecode);

static void BM_BeamSearch(benchmark::State& state) {
  Decoder model = make_model(2);
  Rng rng(3);
  Tensor enc = Tensor::randn({16, 64}, 1.0f, rng);
  std::vector<int> prefix = {kBosId, 5, kSepId};
  int k = static_cast<int>(state.range(0));
  for (auto _ : state) {
    DecodeResult res = beam_search(model, enc, prefix, k, 0.0, 0.1, 16);
    benchmark::DoNotOptimize(res.ids.data());
  }
}
BENCHMARK(BM_BeamSearch)->Arg(4)->Arg(16);

static void BM_Cider(benchmark::State& state) {
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  Rng rng(11);
  for (int i = 0; i < 64; ++i) {
    std::string s;
    for (int w = 0; w < 6; ++w) s += (w ? " w" : "w") + std::to_string(rng.uniform_int(30));
    cands.push_back(s);
    refs.push_back({s + " tail"});
  }
  for (auto _ : state) {
    double v = cider(cands, refs);
    benchmark::DoNotOptimize(v);
  }
}
BENCHMARK(BM_Cider);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
