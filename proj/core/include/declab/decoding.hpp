#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "declab/decoder.hpp"

namespace declab {

struct DecodeParams {
  enum class Strategy { kGreedy, kTemperature, kTopK, kBeam, kScoreClasses };
  Strategy strategy = Strategy::kGreedy;
  double temperature = 1.0;      // T >= 0; T = 0 reduces to greedy
  int k = 4;                     // samples for top-k, beams for beam search
  double gumbel_scale = 0.0;     // stochastic beam perturbation; 0 = off
  double length_norm_alpha = 0.1;
  int max_len = 16;              // generated content tokens, EOS excluded
  std::uint64_t seed = 0;

  static const char* strategy_name(Strategy s);
  static Strategy strategy_from_name(const std::string& name);
};

// lp(len) = ((5 + len) / 6)^alpha; len counts generated tokens including EOS.
double length_penalty(int len, double alpha);

struct Hypothesis {
  std::vector<int> ids;  // content tokens, EOS excluded
  double log_prob = 0.0; // includes the final EOS term
  bool finished = false;
  double normalized_score = 0.0;  // log_prob / lp(|ids| + 1)
};

struct DecodeResult {
  std::vector<int> ids;
  double log_prob = 0.0;
  double normalized_score = 0.0;
  std::vector<Hypothesis> finals;  // beam search: every finished hypothesis
};

// Argmax decoding with lowest-id tie break. A hypothesis that reaches
// max_len content tokens is finished by accounting the EOS term, the same
// convention beam search and the exhaustive oracle use.
DecodeResult greedy(const Decoder& model, const Tensor& encoded, const std::vector<int>& prefix,
                    int max_len, int pos_table = 0);

// Every token drawn from softmax(logits / T); T = 0 falls back to greedy.
DecodeResult temperature_sample(const Decoder& model, const Tensor& encoded,
                                const std::vector<int>& prefix, double temperature, int max_len,
                                std::uint64_t seed, int pos_table = 0);

// Renormalized sampling over the k highest-logit tokens per step.
DecodeResult top_k_sample(const Decoder& model, const Tensor& encoded,
                          const std::vector<int>& prefix, int k, double temperature, int max_len,
                          std::uint64_t seed, int pos_table = 0);

// Keeps the top k candidate expansions per step, ranked by cumulative
// log-prob plus gumbel_scale * Gumbel(0,1) selection noise. Finished
// hypotheses compete on normalized score only.
DecodeResult beam_search(const Decoder& model, const Tensor& encoded,
                         const std::vector<int>& prefix, int k, double gumbel_scale, double alpha,
                         int max_len, std::uint64_t seed = 0, int pos_table = 0);

struct ScoreClassesResult {
  int best_index = -1;
  std::vector<double> scores;  // raw (unnormalized) sequence log-probs
};

// Scores every candidate token sequence and returns the argmax.
ScoreClassesResult score_classes(const Decoder& model, const Tensor& encoded,
                                 const std::vector<int>& prefix,
                                 const std::vector<std::vector<int>>& candidates,
                                 int pos_table = 0);

// Enumerates every EOS-terminated sequence up to max_len content tokens and
// returns the normalized-score argmax. Refuses when V^max_len exceeds the
// cap. Test oracle for beam search.
DecodeResult brute_force_oracle(const Decoder& model, const Tensor& encoded,
                                const std::vector<int>& prefix, int max_len, double alpha,
                                std::int64_t cap = 1000000, int pos_table = 0);

// Strategy dispatcher. Candidates are only consulted by kScoreClasses.
DecodeResult decode(const Decoder& model, const Tensor& encoded, const std::vector<int>& prefix,
                    const DecodeParams& params,
                    const std::vector<std::vector<int>>* candidates = nullptr, int pos_table = 0);

}  // namespace declab
