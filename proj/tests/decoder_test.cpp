#include "declab/decoder.hpp"

#include <gtest/gtest.h>

#include <cstdio>

#include "declab/gradcheck.hpp"

using namespace declab;

namespace {

DecoderConfig tiny_config(int vocab = 50, int max_len = 8) {
  DecoderConfig cfg;
  cfg.depth = 2;
  cfg.model_dim = 32;
  cfg.heads = 4;
  cfg.mlp_dim = 64;
  cfg.vocab_size = vocab;
  cfg.max_len = max_len;
  cfg.dropout_rate = 0.0;
  cfg.enc_dim = 16;
  return cfg;
}

template <typename S>
TensorT<S> random_encoded(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  return TensorT<S>::randn({n, d}, S(0.8), rng);
}

}  // namespace

TEST(TeacherForced, BatchShapes) {
  Decoder model(tiny_config(50, 8), 1);
  Tensor enc = random_encoded<float>(4, 16, 2);
  std::vector<int> a = {kBosId, 7, 9, 11, 5, 6, 7, kEosId};
  std::vector<int> b = {kBosId, 7, 9, 11, 5, 6, 7, kEosId};
  std::vector<Decoder::Item> items{{enc, &a, 1, 0}, {enc, &b, 1, 0}};
  auto f = model.forward_teacher_forced(items, nullptr, false, nullptr);
  ASSERT_EQ(f.segments.size(), 2u);
  EXPECT_EQ(f.logits.dim(0), 16);
  EXPECT_EQ(f.logits.dim(1), 50);
  EXPECT_EQ(f.targets.size(), 16u);
  EXPECT_EQ(f.loss_mask.size(), 16u);
}

TEST(TeacherForced, RejectsOverlongSequence) {
  Decoder model(tiny_config(50, 8), 1);
  Tensor enc = random_encoded<float>(4, 16, 2);
  std::vector<int> ids(9, 5);
  ids[0] = kBosId;
  EXPECT_THROW(model.forward_teacher_forced(enc, ids, 1), ContractError);
}

TEST(TeacherForced, CausalMaskBitExact) {
  Decoder model(tiny_config(), 3);
  Tensor enc = random_encoded<float>(4, 16, 4);
  std::vector<int> ids = {kBosId, 10, 11, 12, 13, 14, 15, kEosId};
  auto base = model.forward_teacher_forced(enc, ids, 1);
  for (int j = 1; j < 8; ++j) {
    std::vector<int> perturbed = ids;
    perturbed[static_cast<size_t>(j)] = (ids[static_cast<size_t>(j)] + 17) % 50;
    auto f = model.forward_teacher_forced(enc, perturbed, 1);
    for (int t = 0; t < j; ++t)
      for (int v = 0; v < 50; ++v)
        ASSERT_EQ(base.logits.data()[t * 50 + v], f.logits.data()[t * 50 + v])
            << "position " << t << " changed after perturbing " << j;
  }
}

TEST(TeacherForced, LossMaskMarksPrefixAndLastRow) {
  Decoder model(tiny_config(), 3);
  Tensor enc = random_encoded<float>(4, 16, 4);
  std::vector<int> ids = {kBosId, 10, 11, 12, 13, kEosId};
  auto f = model.forward_teacher_forced(enc, ids, 3);
  // rows predict the NEXT token: rows 0,1 predict prefix tokens -> excluded;
  // rows 2..4 predict content/EOS -> included; final row has no target.
  std::vector<std::uint8_t> want = {0, 0, 1, 1, 1, 0};
  EXPECT_EQ(f.loss_mask, want);
  EXPECT_EQ(f.targets[2], 12);
  EXPECT_EQ(f.targets[4], kEosId);
}

TEST(Incremental, MatchesTeacherForcedLogits) {
  Decoder model(tiny_config(), 5);
  Tensor enc = random_encoded<float>(4, 16, 6);
  std::vector<int> ids = {kBosId, 20, 21, 22, 23, 24, 25, kEosId};
  auto f = model.forward_teacher_forced(enc, ids, 1);
  DecodeState st = model.init_state(enc, 0);
  for (int t = 0; t < 8; ++t) {
    std::vector<float> logits = model.next_token_logits(st, ids[static_cast<size_t>(t)]);
    EXPECT_EQ(st.len, t + 1);
    for (int v = 0; v < 50; ++v)
      ASSERT_NEAR(logits[static_cast<size_t>(v)], f.logits.data()[t * 50 + v], 1e-5);
  }
}

TEST(Incremental, FirstCallAfterBosEqualsColumnZero) {
  Decoder model(tiny_config(), 7);
  Tensor enc = random_encoded<float>(4, 16, 8);
  std::vector<int> ids = {kBosId, 20, kEosId};
  auto f = model.forward_teacher_forced(enc, ids, 1);
  DecodeState st = model.init_state(enc, 0);
  std::vector<float> logits = model.next_token_logits(st, kBosId);
  for (int v = 0; v < 50; ++v) ASSERT_NEAR(logits[static_cast<size_t>(v)], f.logits.data()[v], 1e-6);
}

TEST(Incremental, ReplayIsBitDeterministic) {
  Decoder model(tiny_config(), 9);
  Tensor enc = random_encoded<float>(4, 16, 10);
  auto run = [&] {
    DecodeState st = model.init_state(enc, 0);
    std::vector<float> out;
    for (int tok : {kBosId, 30, 31, 32}) {
      std::vector<float> l = model.next_token_logits(st, tok);
      out.insert(out.end(), l.begin(), l.end());
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Incremental, FullStateThrows) {
  Decoder model(tiny_config(50, 4), 9);
  Tensor enc = random_encoded<float>(4, 16, 10);
  DecodeState st = model.init_state(enc, 0);
  for (int t = 0; t < 4; ++t) model.next_token_logits(st, 5);
  EXPECT_THROW(model.next_token_logits(st, 5), ContractError);
}

TEST(SequenceLogProb, MatchesStepwiseSum) {
  Decoder model(tiny_config(), 11);
  Tensor enc = random_encoded<float>(4, 16, 12);
  std::vector<int> prefix = {kBosId, 40, kSepId};
  std::vector<int> target = {10, 11, 12, kEosId};
  double one_pass = model.sequence_log_prob(enc, prefix, target);

  DecodeState st = model.init_state(enc, 0);
  std::vector<float> logits;
  for (int tok : prefix) logits = model.next_token_logits(st, tok);
  double stepwise = 0.0;
  for (int tok : target) {
    double mx = logits[0];
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
    stepwise += static_cast<double>(logits[static_cast<size_t>(tok)]) - mx - std::log(sum);
    logits = model.next_token_logits(st, tok);
  }
  EXPECT_NEAR(one_pass, stepwise, 1e-6);
}

TEST(SequenceLogProb, SingleTokenIsOneSoftmaxEntry) {
  Decoder model(tiny_config(), 13);
  Tensor enc = random_encoded<float>(4, 16, 14);
  std::vector<int> prefix = {kBosId};
  double lp = model.sequence_log_prob(enc, prefix, {7});
  DecodeState st = model.init_state(enc, 0);
  std::vector<float> logits = model.next_token_logits(st, kBosId);
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  EXPECT_NEAR(lp, static_cast<double>(logits[7]) - mx - std::log(sum), 1e-6);
}

TEST(SequenceLogProb, AppendingTokensNeverRaisesLogProb) {
  Decoder model(tiny_config(), 15);
  Tensor enc = random_encoded<float>(4, 16, 16);
  std::vector<int> prefix = {kBosId};
  std::vector<int> target;
  double prev = 0.0;
  for (int t = 0; t < 6; ++t) {
    target.push_back(10 + t);
    double lp = model.sequence_log_prob(enc, prefix, target);
    EXPECT_LE(lp, prev + 1e-9);
    prev = lp;
  }
}

TEST(SequenceLogProb, EmptyTargetThrows) {
  Decoder model(tiny_config(), 15);
  Tensor enc = random_encoded<float>(4, 16, 16);
  EXPECT_THROW(model.sequence_log_prob(enc, {kBosId}, {}), ContractError);
}

TEST(PositionTables, IdenticalInitGivesBitEqualForward) {
  DecoderConfig cfg = tiny_config();
  cfg.num_pos_tables = 3;
  Decoder model(cfg, 17);
  Tensor enc = random_encoded<float>(4, 16, 18);
  std::vector<int> ids = {kBosId, 10, 11, kEosId};
  auto f0 = model.forward_teacher_forced(enc, ids, 1, 0);
  auto f2 = model.forward_teacher_forced(enc, ids, 1, 2);
  EXPECT_EQ(f0.logits.values(), f2.logits.values());
}

TEST(TiedEmbeddings, ForwardRunsAndDiffersFromUntied) {
  DecoderConfig cfg = tiny_config();
  Decoder untied(cfg, 19);
  cfg.tie_embeddings = true;
  Decoder tied(cfg, 19);
  Tensor enc = random_encoded<float>(4, 16, 20);
  std::vector<int> ids = {kBosId, 10, 11, kEosId};
  auto fu = untied.forward_teacher_forced(enc, ids, 1);
  auto ft = tied.forward_teacher_forced(enc, ids, 1);
  EXPECT_EQ(ft.logits.shape(), fu.logits.shape());
  EXPECT_NE(ft.logits.values(), fu.logits.values());

  // Incremental path agrees with the tied teacher-forced pass too.
  DecodeState st = tied.init_state(enc, 0);
  std::vector<float> logits = tied.next_token_logits(st, kBosId);
  for (int v = 0; v < 50; ++v)
    ASSERT_NEAR(logits[static_cast<size_t>(v)], ft.logits.data()[v], 1e-5);
}

// Gradients of a small full decoder (both attention paths, embeddings,
// layer norms, output head) against central differences.
TEST(Gradients, SmallFullModelMatchesFiniteDifferences) {
  DecoderConfig cfg;
  cfg.depth = 1;
  cfg.model_dim = 8;
  cfg.heads = 2;
  cfg.mlp_dim = 12;
  cfg.vocab_size = 11;
  cfg.max_len = 6;
  cfg.dropout_rate = 0.0;
  cfg.enc_dim = 8;
  DecoderT<double> model(cfg, 21);
  TensorT<double> enc = random_encoded<double>(3, 8, 22);
  std::vector<int> ids = {kBosId, 6, 7, 8, kEosId};

  std::vector<double> theta;
  model.params().for_each_named([&theta](const std::string&, TensorT<double>& t) {
    theta.insert(theta.end(), t.values().begin(), t.values().end());
  });
  auto set_theta = [&](const std::vector<double>& flat) {
    size_t off = 0;
    model.params().for_each_named([&flat, &off](const std::string&, TensorT<double>& t) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data());
      off += static_cast<size_t>(t.size());
    });
  };
  auto loss_value = [&](const std::vector<double>& flat) {
    set_theta(flat);
    auto f = model.forward_teacher_forced(enc, ids, 1);
    return smoothed_cross_entropy<double>(nullptr, f.logits, f.targets, f.loss_mask, 0.1).item();
  };

  std::vector<double> fd = finite_difference_gradient(loss_value, theta, 1e-5);

  set_theta(theta);
  TapeT<double> tape;
  std::vector<DecoderT<double>::Item> items{{enc, &ids, 1, 0}};
  auto f = model.forward_teacher_forced(items, &tape, false, nullptr);
  TensorT<double> loss = smoothed_cross_entropy(&tape, f.logits, f.targets, f.loss_mask, 0.1);
  tape.backward(loss);
  std::vector<double> analytic;
  model.params().for_each_named([&analytic](const std::string&, TensorT<double>& t) {
    analytic.insert(analytic.end(), t.grad_values().begin(), t.grad_values().end());
  });
  ASSERT_EQ(analytic.size(), fd.size());
  EXPECT_LT(max_relative_error(analytic, fd), 1e-3);
}

TEST(Checkpoint, RoundTripsBitExact) {
  DecoderConfig cfg = tiny_config();
  Decoder a(cfg, 23);
  std::string path = std::string(::testing::TempDir()) + "decoder_ckpt.litd";
  save_checkpoint(a.to_arrays(), path);

  Decoder b(cfg, 99);  // different init, then restored
  b.from_arrays(load_checkpoint(path));
  ArrayMap aa = a.to_arrays(), bb = b.to_arrays();
  ASSERT_EQ(aa.size(), bb.size());
  for (const auto& [name, arr] : aa) {
    ASSERT_EQ(arr.shape, bb.at(name).shape);
    ASSERT_EQ(arr.data, bb.at(name).data) << name;
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, BadMagicReportsOffset) {
  std::string path = std::string(::testing::TempDir()) + "bad_magic.litd";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("NOPE", 1, 4, f);
    std::fclose(f);
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 0"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Checkpoint, TruncationReportsOffset) {
  DecoderConfig cfg = tiny_config();
  Decoder a(cfg, 29);
  std::string path = std::string(::testing::TempDir()) + "trunc.litd";
  save_checkpoint(a.to_arrays(), path);
  // chop the file
  {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fclose(f);
    ASSERT_GT(size, 100);
    std::filesystem::resize_file(path, static_cast<std::uintmax_t>(size / 2));
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated at byte"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(ConfigManifest, RoundTrips) {
  DecoderConfig cfg = tiny_config();
  cfg.tie_embeddings = true;
  cfg.num_pos_tables = 4;
  DecoderConfig back = decoder_config_from_kv(decoder_config_to_kv(cfg));
  EXPECT_EQ(back.depth, cfg.depth);
  EXPECT_EQ(back.model_dim, cfg.model_dim);
  EXPECT_EQ(back.vocab_size, cfg.vocab_size);
  EXPECT_EQ(back.num_pos_tables, 4);
  EXPECT_TRUE(back.tie_embeddings);
}

TEST(DecoderConfig, ValidationCatchesBadFields) {
  DecoderConfig cfg = tiny_config();
  cfg.model_dim = 30;  // not divisible by heads=4
  EXPECT_THROW(Decoder(cfg, 1), ConfigError);
  cfg = tiny_config();
  cfg.max_len = 1;
  EXPECT_THROW(Decoder(cfg, 1), ConfigError);
  cfg = tiny_config();
  cfg.vocab_size = 3;
  EXPECT_THROW(Decoder(cfg, 1), ConfigError);
}
