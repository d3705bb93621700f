#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "declab/checkpoint.hpp"
#include "declab/tensor.hpp"
#include "declab/tokens.hpp"

namespace declab {

struct DecoderConfig {
  int depth = 2;
  int model_dim = 32;
  int heads = 4;
  int mlp_dim = 128;
  int vocab_size = 0;
  int max_len = 32;
  double dropout_rate = 0.1;
  int enc_dim = 64;        // width of the encoder tokens cross-attended to
  int num_pos_tables = 1;  // >1 when position embeddings are per task
  bool tie_embeddings = false;

  void validate() const {
    if (depth < 1) throw ConfigError("decoder depth must be >= 1");
    if (model_dim < 1 || heads < 1 || model_dim % heads != 0)
      throw ConfigError("decoder model_dim must be divisible by heads");
    if (max_len < 2) throw ConfigError("decoder max_len must be >= 2");
    if (vocab_size < kNumReservedTokens)
      throw ConfigError("decoder vocab_size must cover the reserved tokens");
    if (num_pos_tables < 1) throw ConfigError("decoder needs at least one position table");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("decoder dropout_rate must be in [0,1)");
  }
};

template <typename S>
struct DecoderLayerParamsT {
  TensorT<S> ln1_g, ln1_b;
  TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorT<S> lnc_g, lnc_b;
  TensorT<S> cwq, cbq, cwk, cbk, cwv, cbv, cwo, cbo;
  TensorT<S> ln2_g, ln2_b;
  TensorT<S> w1, b1, w2, b2;
};

template <typename S>
struct DecoderParamsT {
  TensorT<S> tok_emb;  // [V x D]
  TensorT<S> pos_emb;  // [num_pos_tables * L x D]; per-task tables stacked
  std::vector<DecoderLayerParamsT<S>> layers;
  TensorT<S> lnf_g, lnf_b;
  TensorT<S> w_out;  // [D x V]; unused when embeddings are tied
  TensorT<S> b_out;  // [V]

  void init(const DecoderConfig& cfg, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "decoder_init"));
    int d = cfg.model_dim, v = cfg.vocab_size;
    S s = S(0.02);
    tok_emb = TensorT<S>::randn({v, d}, s, rng, true);
    // All per-task tables start from one shared table so the per-task
    // conditioning variant is exactly equivalent at initialization.
    TensorT<S> shared = TensorT<S>::randn({cfg.max_len, d}, s, rng);
    pos_emb = TensorT<S>::zeros({cfg.num_pos_tables * cfg.max_len, d}, true);
    for (int t = 0; t < cfg.num_pos_tables; ++t)
      std::copy_n(shared.data(), shared.size(),
                  pos_emb.data() + static_cast<std::int64_t>(t) * shared.size());
    layers.resize(static_cast<size_t>(cfg.depth));
    for (auto& l : layers) {
      l.ln1_g = TensorT<S>::full({d}, S(1), true);
      l.ln1_b = TensorT<S>::zeros({d}, true);
      l.wq = TensorT<S>::randn({d, d}, s, rng, true);
      l.bq = TensorT<S>::zeros({d}, true);
      l.wk = TensorT<S>::randn({d, d}, s, rng, true);
      l.bk = TensorT<S>::zeros({d}, true);
      l.wv = TensorT<S>::randn({d, d}, s, rng, true);
      l.bv = TensorT<S>::zeros({d}, true);
      l.wo = TensorT<S>::randn({d, d}, s, rng, true);
      l.bo = TensorT<S>::zeros({d}, true);
      l.lnc_g = TensorT<S>::full({d}, S(1), true);
      l.lnc_b = TensorT<S>::zeros({d}, true);
      l.cwq = TensorT<S>::randn({d, d}, s, rng, true);
      l.cbq = TensorT<S>::zeros({d}, true);
      l.cwk = TensorT<S>::randn({cfg.enc_dim, d}, s, rng, true);
      l.cbk = TensorT<S>::zeros({d}, true);
      l.cwv = TensorT<S>::randn({cfg.enc_dim, d}, s, rng, true);
      l.cbv = TensorT<S>::zeros({d}, true);
      l.cwo = TensorT<S>::randn({d, d}, s, rng, true);
      l.cbo = TensorT<S>::zeros({d}, true);
      l.ln2_g = TensorT<S>::full({d}, S(1), true);
      l.ln2_b = TensorT<S>::zeros({d}, true);
      l.w1 = TensorT<S>::randn({d, cfg.mlp_dim}, s, rng, true);
      l.b1 = TensorT<S>::zeros({cfg.mlp_dim}, true);
      l.w2 = TensorT<S>::randn({cfg.mlp_dim, d}, s, rng, true);
      l.b2 = TensorT<S>::zeros({d}, true);
    }
    lnf_g = TensorT<S>::full({d}, S(1), true);
    lnf_b = TensorT<S>::zeros({d}, true);
    if (!cfg.tie_embeddings) {
      w_out = TensorT<S>::randn({d, v}, s, rng, true);
    }
    b_out = TensorT<S>::zeros({v}, true);
  }

  template <typename Fn>
  void for_each_named(Fn&& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      std::string p = "layers/" + std::to_string(i) + "/";
      fn(p + "ln1_g", l.ln1_g);
      fn(p + "ln1_b", l.ln1_b);
      fn(p + "wq", l.wq);
      fn(p + "bq", l.bq);
      fn(p + "wk", l.wk);
      fn(p + "bk", l.bk);
      fn(p + "wv", l.wv);
      fn(p + "bv", l.bv);
      fn(p + "wo", l.wo);
      fn(p + "bo", l.bo);
      fn(p + "lnc_g", l.lnc_g);
      fn(p + "lnc_b", l.lnc_b);
      fn(p + "cwq", l.cwq);
      fn(p + "cbq", l.cbq);
      fn(p + "cwk", l.cwk);
      fn(p + "cbk", l.cbk);
      fn(p + "cwv", l.cwv);
      fn(p + "cbv", l.cbv);
      fn(p + "cwo", l.cwo);
      fn(p + "cbo", l.cbo);
      fn(p + "ln2_g", l.ln2_g);
      fn(p + "ln2_b", l.ln2_b);
      fn(p + "w1", l.w1);
      fn(p + "b1", l.b1);
      fn(p + "w2", l.w2);
      fn(p + "b2", l.b2);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    if (w_out.defined()) fn("w_out", w_out);
    fn("b_out", b_out);
  }
};

// Incremental decoding state: per-layer key/value caches for the consumed
// positions plus the fixed cross-attention projections of the encoded image.
// Appending via next_token_logits is the only mutation.
template <typename S>
struct DecodeStateT {
  int len = 0;
  int pos_table = 0;
  int enc_n = 0;
  std::vector<std::vector<S>> self_k, self_v;    // per layer, len rows of D
  std::vector<std::vector<S>> cross_k, cross_v;  // per layer, enc_n rows of D
};

using DecodeState = DecodeStateT<float>;

// Autoregressive Transformer decoder: causal self-attention over the output
// sequence, cross-attention into encoder tokens, pre-layer-norm blocks.
template <typename S>
class DecoderT {
 public:
  DecoderT(const DecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    params_.init(cfg_, seed);
  }

  const DecoderConfig& config() const { return cfg_; }
  DecoderParamsT<S>& params() { return params_; }
  const DecoderParamsT<S>& params() const { return params_; }

  struct Item {
    TensorT<S> encoded;           // [N x enc_dim]
    const std::vector<int>* ids;  // BOS-led token sequence, length <= max_len
    int prefix_len = 1;           // tokens excluded from the loss
    int pos_table = 0;
  };

  struct Forward {
    TensorT<S> logits;                   // [R x V], packed rows
    std::vector<int> targets;            // next-token target per row
    std::vector<std::uint8_t> loss_mask; // 1 where the row contributes loss
    Segments segments;                   // per-example row ranges
  };

  // One parallel teacher-forced pass over a packed batch. logits[t] depends
  // only on tokens[0..t] of its own example plus the encoded image.
  Forward forward_teacher_forced(const std::vector<Item>& items, TapeT<S>* tape, bool train,
                                 Rng* rng) const {
    if (items.empty()) throw ContractError("forward_teacher_forced: empty batch");
    int d = cfg_.model_dim;
    std::vector<int> tok_ids, pos_ids;
    Forward out;
    int row = 0;
    for (const auto& item : items) {
      const std::vector<int>& ids = *item.ids;
      int t_len = static_cast<int>(ids.size());
      if (t_len < 2) throw ContractError("forward_teacher_forced: sequence needs >= 2 tokens");
      if (t_len > cfg_.max_len)
        throw ContractError("forward_teacher_forced: sequence longer than max_len");
      if (item.prefix_len < 1 || item.prefix_len > t_len)
        throw ContractError("forward_teacher_forced: prefix_len out of range");
      if (item.pos_table < 0 || item.pos_table >= cfg_.num_pos_tables)
        throw ContractError("forward_teacher_forced: pos_table out of range");
      if (item.encoded.rank() != 2 || item.encoded.dim(1) != cfg_.enc_dim)
        throw ShapeError("forward_teacher_forced: encoded image must be [N x enc_dim]");
      for (int t = 0; t < t_len; ++t) {
        int id = ids[static_cast<size_t>(t)];
        if (id < 0 || id >= cfg_.vocab_size)
          throw ContractError("forward_teacher_forced: token id out of vocab");
        tok_ids.push_back(id);
        pos_ids.push_back(item.pos_table * cfg_.max_len + t);
        bool has_next = t + 1 < t_len;
        out.targets.push_back(has_next ? ids[static_cast<size_t>(t + 1)] : kPadId);
        out.loss_mask.push_back(has_next && (t + 1 >= item.prefix_len) ? 1 : 0);
      }
      out.segments.emplace_back(row, row + t_len);
      row += t_len;
    }

    auto& p = const_cast<DecoderParamsT<S>&>(params_);
    double rate = train ? cfg_.dropout_rate : 0.0;
    Rng dummy(1);
    Rng& r = rng ? *rng : dummy;

    // One packed matrix of encoder tokens for the whole batch.
    std::vector<TensorT<S>> enc_parts;
    Segments kv_segments;
    int enc_row = 0;
    enc_parts.reserve(items.size());
    for (const auto& item : items) {
      enc_parts.push_back(item.encoded);
      kv_segments.emplace_back(enc_row, enc_row + item.encoded.dim(0));
      enc_row += item.encoded.dim(0);
    }
    TensorT<S> enc_packed = concat_rows(tape, enc_parts);

    TensorT<S> x = add(tape, embedding_rows(tape, p.tok_emb, tok_ids),
                       embedding_rows(tape, p.pos_emb, pos_ids));
    x = dropout(tape, x, rate, r);
    for (auto& l : p.layers) {
      TensorT<S> h = layer_norm(tape, x, l.ln1_g, l.ln1_b);
      TensorT<S> q = add_bias(tape, matmul(tape, h, l.wq), l.bq);
      TensorT<S> k = add_bias(tape, matmul(tape, h, l.wk), l.bk);
      TensorT<S> v = add_bias(tape, matmul(tape, h, l.wv), l.bv);
      TensorT<S> attn = causal_self_attention(tape, q, k, v, out.segments, cfg_.heads);
      x = add(tape, x, dropout(tape, add_bias(tape, matmul(tape, attn, l.wo), l.bo), rate, r));

      h = layer_norm(tape, x, l.lnc_g, l.lnc_b);
      TensorT<S> q2 = add_bias(tape, matmul(tape, h, l.cwq), l.cbq);
      TensorT<S> enc_k = add_bias(tape, matmul(tape, enc_packed, l.cwk), l.cbk);
      TensorT<S> enc_v = add_bias(tape, matmul(tape, enc_packed, l.cwv), l.cbv);
      TensorT<S> cross =
          cross_attention(tape, q2, enc_k, enc_v, out.segments, kv_segments, cfg_.heads);
      x = add(tape, x, dropout(tape, add_bias(tape, matmul(tape, cross, l.cwo), l.cbo), rate, r));

      h = layer_norm(tape, x, l.ln2_g, l.ln2_b);
      TensorT<S> m = gelu(tape, add_bias(tape, matmul(tape, h, l.w1), l.b1));
      x = add(tape, x, dropout(tape, add_bias(tape, matmul(tape, m, l.w2), l.b2), rate, r));
    }
    TensorT<S> h = layer_norm(tape, x, p.lnf_g, p.lnf_b);
    if (cfg_.tie_embeddings) {
      out.logits = add_bias(tape, matmul(tape, h, transpose(tape, p.tok_emb)), p.b_out);
    } else {
      out.logits = add_bias(tape, matmul(tape, h, p.w_out), p.b_out);
    }
    return out;
  }

  // Convenience single-example form.
  Forward forward_teacher_forced(const TensorT<S>& encoded, const std::vector<int>& ids,
                                 int prefix_len, int pos_table = 0) const {
    std::vector<Item> items{{encoded, &ids, prefix_len, pos_table}};
    return forward_teacher_forced(items, nullptr, false, nullptr);
  }

  // ---- incremental decoding -------------------------------------------

  DecodeStateT<S> init_state(const TensorT<S>& encoded, int pos_table = 0) const {
    if (encoded.rank() != 2 || encoded.dim(1) != cfg_.enc_dim)
      throw ShapeError("init_state: encoded image must be [N x enc_dim]");
    if (pos_table < 0 || pos_table >= cfg_.num_pos_tables)
      throw ContractError("init_state: pos_table out of range");
    DecodeStateT<S> st;
    st.pos_table = pos_table;
    st.enc_n = encoded.dim(0);
    int d = cfg_.model_dim;
    st.self_k.resize(params_.layers.size());
    st.self_v.resize(params_.layers.size());
    st.cross_k.resize(params_.layers.size());
    st.cross_v.resize(params_.layers.size());
    for (size_t li = 0; li < params_.layers.size(); ++li) {
      const auto& l = params_.layers[li];
      st.cross_k[li].assign(static_cast<size_t>(st.enc_n) * d, S(0));
      st.cross_v[li].assign(static_cast<size_t>(st.enc_n) * d, S(0));
      project_rows(encoded.data(), st.enc_n, cfg_.enc_dim, l.cwk.data(), l.cbk.data(), d,
                   st.cross_k[li].data());
      project_rows(encoded.data(), st.enc_n, cfg_.enc_dim, l.cwv.data(), l.cbv.data(), d,
                   st.cross_v[li].data());
    }
    return st;
  }

  // Feeds one token, returns the next-token logits. Identical distribution
  // to the teacher-forced pass at the same position.
  std::vector<S> next_token_logits(DecodeStateT<S>& st, int token) const {
    if (st.len >= cfg_.max_len) throw ContractError("next_token_logits: state is full");
    if (token < 0 || token >= cfg_.vocab_size)
      throw ContractError("next_token_logits: token id out of vocab");
    int d = cfg_.model_dim, heads = cfg_.heads, dh = d / heads;
    S inv_sqrt = S(1) / std::sqrt(S(dh));
    std::vector<S> x(static_cast<size_t>(d));
    {
      const S* te = params_.tok_emb.data() + static_cast<std::int64_t>(token) * d;
      const S* pe = params_.pos_emb.data() +
                    (static_cast<std::int64_t>(st.pos_table) * cfg_.max_len + st.len) * d;
      for (int c = 0; c < d; ++c) x[static_cast<size_t>(c)] = te[c] + pe[c];
    }
    std::vector<S> h(static_cast<size_t>(d)), q(static_cast<size_t>(d)), k(static_cast<size_t>(d)),
        v(static_cast<size_t>(d)), attn(static_cast<size_t>(d));
    std::vector<S> scores, probs;
    for (size_t li = 0; li < params_.layers.size(); ++li) {
      const auto& l = params_.layers[li];
      layer_norm_row(x.data(), l.ln1_g.data(), l.ln1_b.data(), d, h.data());
      project_rows(h.data(), 1, d, l.wq.data(), l.bq.data(), d, q.data());
      project_rows(h.data(), 1, d, l.wk.data(), l.bk.data(), d, k.data());
      project_rows(h.data(), 1, d, l.wv.data(), l.bv.data(), d, v.data());
      st.self_k[li].insert(st.self_k[li].end(), k.begin(), k.end());
      st.self_v[li].insert(st.self_v[li].end(), v.begin(), v.end());
      int n_keys = st.len + 1;
      attend(q.data(), st.self_k[li].data(), st.self_v[li].data(), n_keys, d, heads, dh, inv_sqrt,
             scores, probs, attn.data());
      add_projected(attn.data(), l.wo.data(), l.bo.data(), d, d, x.data());

      layer_norm_row(x.data(), l.lnc_g.data(), l.lnc_b.data(), d, h.data());
      project_rows(h.data(), 1, d, l.cwq.data(), l.cbq.data(), d, q.data());
      attend(q.data(), st.cross_k[li].data(), st.cross_v[li].data(), st.enc_n, d, heads, dh,
             inv_sqrt, scores, probs, attn.data());
      add_projected(attn.data(), l.cwo.data(), l.cbo.data(), d, d, x.data());

      layer_norm_row(x.data(), l.ln2_g.data(), l.ln2_b.data(), d, h.data());
      std::vector<S> m(static_cast<size_t>(cfg_.mlp_dim));
      project_rows(h.data(), 1, d, l.w1.data(), l.b1.data(), cfg_.mlp_dim, m.data());
      for (S& mv : m) mv = detail::gelu_scalar(mv);
      add_projected(m.data(), l.w2.data(), l.b2.data(), cfg_.mlp_dim, d, x.data());
    }
    layer_norm_row(x.data(), params_.lnf_g.data(), params_.lnf_b.data(), d, h.data());
    std::vector<S> logits(static_cast<size_t>(cfg_.vocab_size));
    if (cfg_.tie_embeddings) {
      // logits[v] = h . tok_emb[v] + b_out[v]
      for (int vv = 0; vv < cfg_.vocab_size; ++vv) {
        const S* row = params_.tok_emb.data() + static_cast<std::int64_t>(vv) * d;
        S acc = params_.b_out.data()[vv];
        for (int c = 0; c < d; ++c) acc += h[static_cast<size_t>(c)] * row[c];
        logits[static_cast<size_t>(vv)] = acc;
      }
    } else {
      project_rows(h.data(), 1, d, params_.w_out.data(), params_.b_out.data(), cfg_.vocab_size,
                   logits.data());
    }
    st.len += 1;
    return logits;
  }

  // Sum over target tokens of log p(target_t | prefix, target_<t, encoded),
  // computed with the one-pass teacher-forced route. Prefix tokens
  // contribute no terms.
  double sequence_log_prob(const TensorT<S>& encoded, const std::vector<int>& prefix,
                           const std::vector<int>& target, int pos_table = 0) const {
    if (target.empty()) throw ContractError("sequence_log_prob: empty target");
    std::vector<int> ids = prefix;
    ids.insert(ids.end(), target.begin(), target.end());
    Forward f = forward_teacher_forced(encoded, ids, static_cast<int>(prefix.size()), pos_table);
    int vsize = cfg_.vocab_size;
    double total = 0.0;
    for (size_t row = 0; row < ids.size(); ++row) {
      if (!f.loss_mask[row]) continue;
      const S* in = f.logits.data() + static_cast<std::int64_t>(row) * vsize;
      double mx = static_cast<double>(in[0]);
      for (int i = 1; i < vsize; ++i) mx = std::max(mx, static_cast<double>(in[i]));
      double sum = 0.0;
      for (int i = 0; i < vsize; ++i) sum += std::exp(static_cast<double>(in[i]) - mx);
      total += static_cast<double>(in[f.targets[row]]) - mx - std::log(sum);
    }
    return total;
  }

  ArrayMap to_arrays() const {
    ArrayMap arrays;
    auto& p = const_cast<DecoderParamsT<S>&>(params_);
    p.for_each_named([&arrays](const std::string& name, TensorT<S>& t) {
      NamedArray arr;
      arr.shape = t.shape();
      arr.data.assign(t.values().begin(), t.values().end());
      arrays.emplace(name, std::move(arr));
    });
    return arrays;
  }

  void from_arrays(const ArrayMap& arrays) {
    params_.for_each_named([&arrays](const std::string& name, TensorT<S>& t) {
      auto it = arrays.find(name);
      if (it == arrays.end()) throw FormatError("checkpoint missing array '" + name + "'");
      if (it->second.shape != t.shape())
        throw FormatError("checkpoint array '" + name + "' has wrong shape");
      std::copy(it->second.data.begin(), it->second.data.end(), t.data());
    });
  }

 private:
  // out[j] = bias[j] + sum_t in_row[t] * w[t, j]; same accumulation order as
  // the packed matmul so incremental and teacher-forced paths agree bit for
  // bit.
  static void project_rows(const S* in, int rows, int in_dim, const S* w, const S* bias,
                           int out_dim, S* out) {
    for (int r = 0; r < rows; ++r) {
      const S* irow = in + static_cast<std::int64_t>(r) * in_dim;
      S* orow = out + static_cast<std::int64_t>(r) * out_dim;
      for (int j = 0; j < out_dim; ++j) orow[j] = S(0);
      for (int t = 0; t < in_dim; ++t) {
        S av = irow[t];
        if (av == S(0)) continue;
        const S* wrow = w + static_cast<std::int64_t>(t) * out_dim;
        for (int j = 0; j < out_dim; ++j) orow[j] += av * wrow[j];
      }
      for (int j = 0; j < out_dim; ++j) orow[j] += bias[j];
    }
  }

  // x += in . w + bias (single row).
  static void add_projected(const S* in, const S* w, const S* bias, int in_dim, int out_dim,
                            S* x) {
    std::vector<S> tmp(static_cast<size_t>(out_dim));
    project_rows(in, 1, in_dim, w, bias, out_dim, tmp.data());
    for (int j = 0; j < out_dim; ++j) x[j] += tmp[static_cast<size_t>(j)];
  }

  static void layer_norm_row(const S* in, const S* gain, const S* bias, int d, S* out) {
    S mean = S(0);
    for (int c = 0; c < d; ++c) mean += in[c];
    mean /= S(d);
    S var = S(0);
    for (int c = 0; c < d; ++c) {
      S dv = in[c] - mean;
      var += dv * dv;
    }
    var /= S(d);
    S istd = S(1) / std::sqrt(var + S(1e-5));
    for (int c = 0; c < d; ++c) out[c] = (in[c] - mean) * istd * gain[c] + bias[c];
  }

  static void attend(const S* q, const S* keys, const S* vals, int n_keys, int d, int heads,
                     int dh, S inv_sqrt, std::vector<S>& scores, std::vector<S>& probs,
                     S* out) {
    if (static_cast<int>(scores.size()) < n_keys) {
      scores.resize(static_cast<size_t>(n_keys));
      probs.resize(static_cast<size_t>(n_keys));
    }
    for (int h = 0; h < heads; ++h) {
      int hc = h * dh;
      for (int j = 0; j < n_keys; ++j) {
        const S* krow = keys + static_cast<std::int64_t>(j) * d + hc;
        S acc = S(0);
        for (int c = 0; c < dh; ++c) acc += q[hc + c] * krow[c];
        scores[static_cast<size_t>(j)] = acc * inv_sqrt;
      }
      detail::softmax_lane(scores.data(), probs.data(), n_keys);
      for (int c = 0; c < dh; ++c) out[hc + c] = S(0);
      for (int j = 0; j < n_keys; ++j) {
        const S* vrow = vals + static_cast<std::int64_t>(j) * d + hc;
        S pj = probs[static_cast<size_t>(j)];
        for (int c = 0; c < dh; ++c) out[hc + c] += pj * vrow[c];
      }
    }
  }

  DecoderConfig cfg_;
  DecoderParamsT<S> params_;
};

using Decoder = DecoderT<float>;

// Flat key-value manifest describing a checkpoint's architecture.
std::map<std::string, std::string> decoder_config_to_kv(const DecoderConfig& cfg);
DecoderConfig decoder_config_from_kv(const std::map<std::string, std::string>& kv);

}  // namespace declab
