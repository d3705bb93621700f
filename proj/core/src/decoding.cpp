#include "declab/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "declab/errors.hpp"

namespace declab {

const char* DecodeParams::strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kTemperature: return "temperature";
    case Strategy::kTopK: return "top_k";
    case Strategy::kBeam: return "beam";
    case Strategy::kScoreClasses: return "score_classes";
  }
  return "?";
}

DecodeParams::Strategy DecodeParams::strategy_from_name(const std::string& name) {
  for (Strategy s : {Strategy::kGreedy, Strategy::kTemperature, Strategy::kTopK, Strategy::kBeam,
                     Strategy::kScoreClasses}) {
    if (name == strategy_name(s)) return s;
  }
  throw ConfigError("unknown decode strategy '" + name + "'");
}

double length_penalty(int len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace {

// Feeds the prefix through a fresh state; returns the log-softmax of the
// next-token distribution after the last prefix token.
std::vector<double> advance_prefix(const Decoder& model, const Tensor& encoded,
                                   const std::vector<int>& prefix, int pos_table,
                                   DecodeState& state) {
  if (prefix.empty()) throw ContractError("decode: prefix must start with BOS");
  state = model.init_state(encoded, pos_table);
  std::vector<float> logits;
  for (int id : prefix) logits = model.next_token_logits(state, id);
  std::vector<double> lsm(logits.size());
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  double lse = mx + std::log(sum);
  for (size_t i = 0; i < logits.size(); ++i) lsm[i] = static_cast<double>(logits[i]) - lse;
  return lsm;
}

std::vector<double> step_log_softmax(const Decoder& model, DecodeState& state, int token) {
  std::vector<float> logits = model.next_token_logits(state, token);
  std::vector<double> lsm(logits.size());
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - mx);
  double lse = mx + std::log(sum);
  for (size_t i = 0; i < logits.size(); ++i) lsm[i] = static_cast<double>(logits[i]) - lse;
  return lsm;
}

int clamp_max_len(const Decoder& model, const std::vector<int>& prefix, int max_len) {
  int room = model.config().max_len - static_cast<int>(prefix.size());
  return std::max(0, std::min(max_len, room));
}

DecodeResult finish(std::vector<int> ids, double log_prob, double alpha) {
  DecodeResult res;
  res.normalized_score =
      log_prob / length_penalty(static_cast<int>(ids.size()) + 1, alpha);
  res.ids = std::move(ids);
  res.log_prob = log_prob;
  return res;
}

// Draws an index from normalized probabilities via inverse CDF.
int draw_index(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

DecodeResult greedy(const Decoder& model, const Tensor& encoded, const std::vector<int>& prefix,
                    int max_len, int pos_table) {
  DecodeState state;
  std::vector<double> lsm = advance_prefix(model, encoded, prefix, pos_table, state);
  int limit = clamp_max_len(model, prefix, max_len);
  std::vector<int> ids;
  double log_prob = 0.0;
  for (int step = 0; step < limit; ++step) {
    int best = 0;
    for (size_t i = 1; i < lsm.size(); ++i)
      if (lsm[i] > lsm[static_cast<size_t>(best)]) best = static_cast<int>(i);
    log_prob += lsm[static_cast<size_t>(best)];
    if (best == kEosId) return finish(std::move(ids), log_prob, 0.0);
    ids.push_back(best);
    lsm = step_log_softmax(model, state, best);
  }
  log_prob += lsm[kEosId];  // forced finish at max length
  return finish(std::move(ids), log_prob, 0.0);
}

DecodeResult temperature_sample(const Decoder& model, const Tensor& encoded,
                                const std::vector<int>& prefix, double temperature, int max_len,
                                std::uint64_t seed, int pos_table) {
  if (temperature < 0.0) throw ContractError("temperature must be >= 0");
  if (temperature == 0.0) return greedy(model, encoded, prefix, max_len, pos_table);
  DecodeState state;
  std::vector<double> lsm = advance_prefix(model, encoded, prefix, pos_table, state);
  int limit = clamp_max_len(model, prefix, max_len);
  Rng rng(Rng::derive(seed, "temperature_sample"));
  std::vector<int> ids;
  double log_prob = 0.0;
  std::vector<double> probs(lsm.size());
  for (int step = 0; step < limit; ++step) {
    double mx = *std::max_element(lsm.begin(), lsm.end());
    double sum = 0.0;
    for (size_t i = 0; i < lsm.size(); ++i) {
      probs[i] = std::exp((lsm[i] - mx) / temperature);
      sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    int tok = draw_index(probs, rng);
    log_prob += lsm[static_cast<size_t>(tok)];
    if (tok == kEosId) return finish(std::move(ids), log_prob, 0.0);
    ids.push_back(tok);
    lsm = step_log_softmax(model, state, tok);
  }
  log_prob += lsm[kEosId];
  return finish(std::move(ids), log_prob, 0.0);
}

DecodeResult top_k_sample(const Decoder& model, const Tensor& encoded,
                          const std::vector<int>& prefix, int k, double temperature, int max_len,
                          std::uint64_t seed, int pos_table) {
  int vocab = model.config().vocab_size;
  if (k < 1 || k > vocab) throw ContractError("top_k: k must be in [1, vocab_size]");
  if (temperature < 0.0) throw ContractError("temperature must be >= 0");
  if (k == 1 || temperature == 0.0) return greedy(model, encoded, prefix, max_len, pos_table);
  DecodeState state;
  std::vector<double> lsm = advance_prefix(model, encoded, prefix, pos_table, state);
  int limit = clamp_max_len(model, prefix, max_len);
  Rng rng(Rng::derive(seed, "top_k_sample"));
  std::vector<int> ids;
  double log_prob = 0.0;
  std::vector<int> order(static_cast<size_t>(vocab));
  for (int step = 0; step < limit; ++step) {
    for (int i = 0; i < vocab; ++i) order[static_cast<size_t>(i)] = i;
    // highest score first, lowest id on ties
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      if (lsm[static_cast<size_t>(a)] != lsm[static_cast<size_t>(b)])
        return lsm[static_cast<size_t>(a)] > lsm[static_cast<size_t>(b)];
      return a < b;
    });
    std::vector<double> probs(static_cast<size_t>(k));
    double mx = lsm[static_cast<size_t>(order[0])];
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      probs[static_cast<size_t>(i)] =
          std::exp((lsm[static_cast<size_t>(order[static_cast<size_t>(i)])] - mx) / temperature);
      sum += probs[static_cast<size_t>(i)];
    }
    for (double& p : probs) p /= sum;
    int tok = order[static_cast<size_t>(draw_index(probs, rng))];
    log_prob += lsm[static_cast<size_t>(tok)];
    if (tok == kEosId) return finish(std::move(ids), log_prob, 0.0);
    ids.push_back(tok);
    lsm = step_log_softmax(model, state, tok);
  }
  log_prob += lsm[kEosId];
  return finish(std::move(ids), log_prob, 0.0);
}

namespace {

struct BeamHyp {
  std::vector<int> ids;
  double log_prob = 0.0;
  DecodeState state;        // advanced past prefix + ids
  std::vector<double> lsm;  // next-token log-softmax from that state
};

Hypothesis make_finished(const std::vector<int>& ids, double log_prob, double alpha) {
  Hypothesis h;
  h.ids = ids;
  h.log_prob = log_prob;
  h.finished = true;
  h.normalized_score = log_prob / length_penalty(static_cast<int>(ids.size()) + 1, alpha);
  return h;
}

bool better_final(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized_score != b.normalized_score) return a.normalized_score > b.normalized_score;
  return a.ids < b.ids;
}

}  // namespace

DecodeResult beam_search(const Decoder& model, const Tensor& encoded,
                         const std::vector<int>& prefix, int k, double gumbel_scale, double alpha,
                         int max_len, std::uint64_t seed, int pos_table) {
  if (k < 1) throw ContractError("beam_search: k must be >= 1");
  int limit = clamp_max_len(model, prefix, max_len);
  int vocab = model.config().vocab_size;
  Rng rng(Rng::derive(seed, "beam_gumbel"));

  std::vector<BeamHyp> live(1);
  live[0].lsm = advance_prefix(model, encoded, prefix, pos_table, live[0].state);
  std::vector<Hypothesis> finished;

  struct Candidate {
    double selection;  // log_prob + selection noise
    double log_prob;
    int hyp;
    int token;
  };

  for (int step = 0; step < limit && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<size_t>(vocab));
    for (size_t h = 0; h < live.size(); ++h) {
      for (int t = 0; t < vocab; ++t) {
        double lp = live[h].log_prob + live[h].lsm[static_cast<size_t>(t)];
        double sel = lp;
        if (gumbel_scale > 0.0) sel += gumbel_scale * rng.gumbel();
        cands.push_back({sel, lp, static_cast<int>(h), t});
      }
    }
    size_t keep = std::min<size_t>(static_cast<size_t>(k), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.selection != b.selection) return a.selection > b.selection;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<BeamHyp> next;
    next.reserve(keep);
    for (size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      const BeamHyp& src = live[static_cast<size_t>(cand.hyp)];
      if (cand.token == kEosId) {
        finished.push_back(make_finished(src.ids, cand.log_prob, alpha));
        continue;
      }
      BeamHyp h;
      h.ids = src.ids;
      h.ids.push_back(cand.token);
      h.log_prob = cand.log_prob;
      h.state = src.state;
      h.lsm = step_log_softmax(model, h.state, cand.token);
      next.push_back(std::move(h));
    }
    live = std::move(next);

    // Deterministic early stop: an unfinished hypothesis can only lose
    // log-prob, and the penalty divisor only grows, so its best reachable
    // normalized score is log_prob / lp(limit + 1).
    if (gumbel_scale == 0.0 && !finished.empty() && !live.empty()) {
      double best_finished =
          std::max_element(finished.begin(), finished.end(), [](const auto& a, const auto& b) {
            return a.normalized_score < b.normalized_score;
          })->normalized_score;
      double bound = -std::numeric_limits<double>::infinity();
      double lp_max = length_penalty(limit + 1, alpha);
      for (const BeamHyp& h : live) bound = std::max(bound, h.log_prob / lp_max);
      if (best_finished >= bound) live.clear();
    }
  }
  // Hypotheses alive at the length limit finish by accounting the EOS term.
  for (BeamHyp& h : live)
    finished.push_back(make_finished(h.ids, h.log_prob + h.lsm[kEosId], alpha));

  if (finished.empty()) throw ContractError("beam_search: no finished hypothesis");
  const Hypothesis* best = &finished[0];
  for (const Hypothesis& h : finished)
    if (better_final(h, *best)) best = &h;
  DecodeResult res;
  res.ids = best->ids;
  res.log_prob = best->log_prob;
  res.normalized_score = best->normalized_score;
  res.finals = finished;
  return res;
}

ScoreClassesResult score_classes(const Decoder& model, const Tensor& encoded,
                                 const std::vector<int>& prefix,
                                 const std::vector<std::vector<int>>& candidates, int pos_table) {
  if (candidates.empty()) throw ContractError("score_classes: empty candidate list");
  ScoreClassesResult res;
  res.scores.reserve(candidates.size());
  for (const auto& cand : candidates)
    res.scores.push_back(model.sequence_log_prob(encoded, prefix, cand, pos_table));
  res.best_index = 0;
  for (size_t i = 1; i < candidates.size(); ++i)
    if (res.scores[i] > res.scores[static_cast<size_t>(res.best_index)])
      res.best_index = static_cast<int>(i);
  return res;
}

namespace {

void oracle_dfs(const Decoder& model, const DecodeState& state, const std::vector<double>& lsm,
                std::vector<int>& ids, double log_prob, int depth_left, double alpha,
                Hypothesis& best) {
  Hypothesis h = make_finished(ids, log_prob + lsm[kEosId], alpha);
  if (better_final(h, best)) best = h;
  if (depth_left == 0) return;
  int vocab = static_cast<int>(lsm.size());
  for (int t = 0; t < vocab; ++t) {
    if (t == kEosId) continue;
    DecodeState child = state;
    std::vector<double> child_lsm = step_log_softmax(model, child, t);
    ids.push_back(t);
    oracle_dfs(model, child, child_lsm, ids, log_prob + lsm[static_cast<size_t>(t)],
               depth_left - 1, alpha, best);
    ids.pop_back();
  }
}

}  // namespace

DecodeResult brute_force_oracle(const Decoder& model, const Tensor& encoded,
                                const std::vector<int>& prefix, int max_len, double alpha,
                                std::int64_t cap, int pos_table) {
  int vocab = model.config().vocab_size;
  double space = std::pow(static_cast<double>(vocab), static_cast<double>(max_len));
  if (space > static_cast<double>(cap))
    throw ContractError("brute_force_oracle: V^max_len exceeds the cap");
  int limit = clamp_max_len(model, prefix, max_len);
  DecodeState state;
  std::vector<double> lsm = advance_prefix(model, encoded, prefix, pos_table, state);
  Hypothesis best;
  best.normalized_score = -std::numeric_limits<double>::infinity();
  std::vector<int> ids;
  oracle_dfs(model, state, lsm, ids, 0.0, limit, alpha, best);
  DecodeResult res;
  res.ids = best.ids;
  res.log_prob = best.log_prob;
  res.normalized_score = best.normalized_score;
  return res;
}

DecodeResult decode(const Decoder& model, const Tensor& encoded, const std::vector<int>& prefix,
                    const DecodeParams& params, const std::vector<std::vector<int>>* candidates,
                    int pos_table) {
  switch (params.strategy) {
    case DecodeParams::Strategy::kGreedy:
      return greedy(model, encoded, prefix, params.max_len, pos_table);
    case DecodeParams::Strategy::kTemperature:
      return temperature_sample(model, encoded, prefix, params.temperature, params.max_len,
                                params.seed, pos_table);
    case DecodeParams::Strategy::kTopK:
      return top_k_sample(model, encoded, prefix, params.k, params.temperature, params.max_len,
                          params.seed, pos_table);
    case DecodeParams::Strategy::kBeam:
      return beam_search(model, encoded, prefix, params.k, params.gumbel_scale,
                         params.length_norm_alpha, params.max_len, params.seed, pos_table);
    case DecodeParams::Strategy::kScoreClasses: {
      if (!candidates) throw ContractError("decode: score_classes needs candidates");
      ScoreClassesResult sc = score_classes(model, encoded, prefix, *candidates, pos_table);
      DecodeResult res;
      res.ids = (*candidates)[static_cast<size_t>(sc.best_index)];
      res.log_prob = sc.scores[static_cast<size_t>(sc.best_index)];
      res.normalized_score = res.log_prob;
      return res;
    }
  }
  throw ConfigError("decode: unknown strategy");
}

}  // namespace declab
