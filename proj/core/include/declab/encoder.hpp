#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "declab/tensor.hpp"

namespace declab {

// Frozen encoder output for one image: a grid of n feature tokens of
// dimension d, row-major.
struct EncodedImage {
  int n = 0;
  int d = 0;
  std::vector<float> tokens;
};

// id -> encoded image. Ordered so writes are deterministic.
using EmbeddingStore = std::map<std::string, EncodedImage>;

// Embedding store file: magic "LITE", u32 LE version, u64 LE image count;
// per image: u16 LE id length + UTF-8 id, u32 LE N, u32 LE D, payload
// IEEE-754 32-bit LE row-major.
void save_store(const EmbeddingStore& store, const std::string& path);
EmbeddingStore load_store(const std::string& path);

inline constexpr std::uint32_t kStoreVersion = 1;

// Token payload bytes (4*N*D summed over images), excluding headers.
std::uint64_t store_payload_bytes(const EmbeddingStore& store);

template <typename S>
TensorT<S> to_tensor(const EncodedImage& img) {
  std::vector<S> vals(img.tokens.begin(), img.tokens.end());
  return TensorT<S>::from({img.n, img.d}, std::move(vals));
}

inline EncodedImage from_tensor(const TensorT<float>& t) {
  EncodedImage img;
  img.n = t.dim(0);
  img.d = t.dim(1);
  img.tokens = t.values();
  return img;
}

// ---------------------------------------------------------------------------
// Compression of encoder tokens before storage
// ---------------------------------------------------------------------------

struct CompressionSpec {
  enum class Mode { kNone, kMapPool, kBottleneck };
  Mode mode = Mode::kNone;
  int reduction = 8;  // bottleneck factor r; must divide the token dim

  static const char* mode_name(Mode m) {
    switch (m) {
      case Mode::kNone: return "none";
      case Mode::kMapPool: return "map_pool";
      case Mode::kBottleneck: return "bottleneck";
    }
    return "?";
  }
};

// Multi-head attention pooling: a single learned probe query attends over
// the token set and summarizes it into one token.
template <typename S>
struct MapPoolParamsT {
  TensorT<S> probe;       // [1 x D]
  TensorT<S> wk, wv, wo;  // [D x D]
  TensorT<S> bk, bv, bo;  // [D]

  void init(int d, Rng& rng, bool requires_grad = true) {
    S s = S(0.02);
    probe = TensorT<S>::randn({1, d}, s, rng, requires_grad);
    wk = TensorT<S>::randn({d, d}, s, rng, requires_grad);
    wv = TensorT<S>::randn({d, d}, s, rng, requires_grad);
    wo = TensorT<S>::randn({d, d}, s, rng, requires_grad);
    bk = TensorT<S>::zeros({d}, requires_grad);
    bv = TensorT<S>::zeros({d}, requires_grad);
    bo = TensorT<S>::zeros({d}, requires_grad);
  }

  template <typename Fn>
  void for_each_named(const std::string& prefix, Fn&& fn) {
    fn(prefix + "probe", probe);
    fn(prefix + "wk", wk);
    fn(prefix + "bk", bk);
    fn(prefix + "wv", wv);
    fn(prefix + "bv", bv);
    fn(prefix + "wo", wo);
    fn(prefix + "bo", bo);
  }
};

// Pools [N x D] tokens into a single [1 x D] token. Permutation invariant in
// the input rows.
template <typename S>
TensorT<S> map_pool(TapeT<S>* tape, const TensorT<S>& tokens, MapPoolParamsT<S>& p, int heads) {
  if (tokens.rank() != 2 || tokens.dim(1) != p.probe.dim(1))
    throw ShapeError("map_pool: tokens must be [N x D] matching head params");
  TensorT<S> k = add_bias(tape, matmul(tape, tokens, p.wk), p.bk);
  TensorT<S> v = add_bias(tape, matmul(tape, tokens, p.wv), p.bv);
  Segments q_segs{{0, 1}};
  Segments kv_segs{{0, tokens.dim(0)}};
  TensorT<S> pooled = cross_attention<S>(tape, p.probe, k, v, q_segs, kv_segs, heads);
  return add_bias(tape, matmul(tape, pooled, p.wo), p.bo);
}

template <typename S>
struct BottleneckParamsT {
  TensorT<S> down;  // [D x D/r]
  TensorT<S> up;    // [D/r x D]

  void init(int d, int reduction, Rng& rng, bool requires_grad = true) {
    if (reduction <= 0 || d % reduction != 0)
      throw ConfigError("bottleneck: reduction factor must divide the token dim");
    int w = d / reduction;
    down = TensorT<S>::randn({d, w}, S(0.05), rng, requires_grad);
    up = TensorT<S>::randn({w, d}, S(0.05), rng, requires_grad);
  }

  template <typename Fn>
  void for_each_named(const std::string& prefix, Fn&& fn) {
    fn(prefix + "down", down);
    fn(prefix + "up", up);
  }
};

// Returns {stored [N x D/r], reconstructed [N x D]}. The down projection is
// what gets persisted; the up projection runs at read time. Both matrices
// train jointly with the decoder loss.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> bottleneck_pair(TapeT<S>* tape, const TensorT<S>& tokens,
                                                  BottleneckParamsT<S>& p) {
  TensorT<S> stored = matmul(tape, tokens, p.down);
  TensorT<S> recon = matmul(tape, stored, p.up);
  return {stored, recon};
}

// Compression parameters for one experiment; which half is live depends on
// the spec mode.
template <typename S>
struct CompressionParamsT {
  CompressionSpec spec;
  MapPoolParamsT<S> pool;
  BottleneckParamsT<S> bottleneck;

  void init(const CompressionSpec& s, int d, Rng& rng, bool requires_grad = true) {
    spec = s;
    if (spec.mode == CompressionSpec::Mode::kMapPool) pool.init(d, rng, requires_grad);
    if (spec.mode == CompressionSpec::Mode::kBottleneck)
      bottleneck.init(d, spec.reduction, rng, requires_grad);
  }

  // Training-time path: raw frozen tokens in, tokens the decoder
  // cross-attends to out.
  TensorT<S> apply(TapeT<S>* tape, const TensorT<S>& tokens, int heads) {
    switch (spec.mode) {
      case CompressionSpec::Mode::kNone: return tokens;
      case CompressionSpec::Mode::kMapPool: return map_pool(tape, tokens, pool, heads);
      case CompressionSpec::Mode::kBottleneck: return bottleneck_pair(tape, tokens, bottleneck).second;
    }
    throw ConfigError("compression: unknown mode");
  }

  template <typename Fn>
  void for_each_named(Fn&& fn) {
    if (spec.mode == CompressionSpec::Mode::kMapPool) pool.for_each_named("compress/pool/", fn);
    if (spec.mode == CompressionSpec::Mode::kBottleneck)
      bottleneck.for_each_named("compress/bottleneck/", fn);
  }
};

// Applies storage-time compression to a full store (down-projection or MAP
// pooling); the result is what save_store persists.
EmbeddingStore compress_store(const EmbeddingStore& store, CompressionParamsT<float>& params,
                              int heads);

// Read-time up-projection for bottleneck stores; identity otherwise.
EncodedImage decompress_image(const EncodedImage& img, CompressionParamsT<float>& params);

// ---------------------------------------------------------------------------
// Toy trainable encoder
// ---------------------------------------------------------------------------

struct ToyEncoderConfig {
  int feat_dim = 0;   // per-patch feature width from the renderer
  int n_patches = 0;  // tokens per image
  int enc_dim = 64;
  int heads = 4;
};

// Per-patch linear projection + learned position embedding + one
// self-attention layer + layer norm. Small enough to train on the side,
// spatial enough that OCR-style tasks are representable.
template <typename S>
struct ToyEncoderParamsT {
  ToyEncoderConfig cfg;
  TensorT<S> w_in, b_in;          // [F x D], [D]
  TensorT<S> pos;                 // [N x D]
  TensorT<S> wq, wk, wv, wo;      // [D x D]
  TensorT<S> bq, bk, bv, bo;      // [D]
  TensorT<S> ln_g, ln_b;          // [D]

  void init(const ToyEncoderConfig& c, std::uint64_t seed, bool requires_grad) {
    cfg = c;
    Rng rng(Rng::derive(seed, "toy_encoder"));
    S s = S(0.05);
    w_in = TensorT<S>::randn({c.feat_dim, c.enc_dim}, s, rng, requires_grad);
    b_in = TensorT<S>::zeros({c.enc_dim}, requires_grad);
    pos = TensorT<S>::randn({c.n_patches, c.enc_dim}, S(0.5), rng, requires_grad);
    wq = TensorT<S>::randn({c.enc_dim, c.enc_dim}, s, rng, requires_grad);
    wk = TensorT<S>::randn({c.enc_dim, c.enc_dim}, s, rng, requires_grad);
    wv = TensorT<S>::randn({c.enc_dim, c.enc_dim}, s, rng, requires_grad);
    wo = TensorT<S>::randn({c.enc_dim, c.enc_dim}, s, rng, requires_grad);
    bq = TensorT<S>::zeros({c.enc_dim}, requires_grad);
    bk = TensorT<S>::zeros({c.enc_dim}, requires_grad);
    bv = TensorT<S>::zeros({c.enc_dim}, requires_grad);
    bo = TensorT<S>::zeros({c.enc_dim}, requires_grad);
    ln_g = TensorT<S>::full({c.enc_dim}, S(1), requires_grad);
    ln_b = TensorT<S>::zeros({c.enc_dim}, requires_grad);
  }

  template <typename Fn>
  void for_each_named(Fn&& fn) {
    fn("encoder/w_in", w_in);
    fn("encoder/b_in", b_in);
    fn("encoder/pos", pos);
    fn("encoder/wq", wq);
    fn("encoder/bq", bq);
    fn("encoder/wk", wk);
    fn("encoder/bk", bk);
    fn("encoder/wv", wv);
    fn("encoder/bv", bv);
    fn("encoder/wo", wo);
    fn("encoder/bo", bo);
    fn("encoder/ln_g", ln_g);
    fn("encoder/ln_b", ln_b);
  }
};

// Encodes per-patch features [N x F] into tokens [N x D]. With
// trainable=false the subgraph is computed off-tape, so encoder parameters
// receive exactly zero gradient.
template <typename S>
TensorT<S> toy_encode(TapeT<S>* tape, const TensorT<S>& feats, ToyEncoderParamsT<S>& p,
                      bool trainable) {
  if (feats.rank() != 2 || feats.dim(0) != p.cfg.n_patches || feats.dim(1) != p.cfg.feat_dim)
    throw ShapeError("toy_encode: feature grid does not match encoder config");
  TapeT<S>* t = trainable ? tape : nullptr;
  TensorT<S> x = add(t, add_bias(t, matmul(t, feats, p.w_in), p.b_in), p.pos);
  TensorT<S> q = add_bias(t, matmul(t, x, p.wq), p.bq);
  TensorT<S> k = add_bias(t, matmul(t, x, p.wk), p.bk);
  TensorT<S> v = add_bias(t, matmul(t, x, p.wv), p.bv);
  Segments segs{{0, p.cfg.n_patches}};
  TensorT<S> attn = cross_attention<S>(t, q, k, v, segs, segs, p.cfg.heads);
  x = add(t, x, add_bias(t, matmul(t, attn, p.wo), p.bo));
  return layer_norm(t, x, p.ln_g, p.ln_b);
}

}  // namespace declab
