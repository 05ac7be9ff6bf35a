#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nmt/data.hpp"
#include "nmt/tensor.hpp"

namespace nmt {

enum class Variant { Baseline, ModelOne, ModelTwo };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  std::int64_t d_model = 64;
  std::int64_t d_ffn = 128;
  int n_heads = 2;
  int n_layers = 2;
  std::int64_t src_vocab = 0;
  std::int64_t tgt_vocab = 0;
  double dropout = 0.1;
  std::int64_t max_len = kMaxSeqLen;
  bool use_positions = true;
  bool tie_output = false;
  Variant variant = Variant::Baseline;
  // structural options of the future-cost cell
  bool future_cell_bias = false;
  bool separate_future_embedding = false;

  bool has_future() const { return variant != Variant::Baseline; }
  void validate() const;  // ConfigError on violation
};

inline constexpr double kLayerNormEps = 1e-6;

struct EncoderLayerParams {
  Tensor wq, wk, wv, wo;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct DecoderLayerParams {
  Tensor wq, wk, wv, wo;      // masked self-attention
  Tensor cq, ck, cv, co;      // cross-attention over the encoder output
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
};

// Every learned matrix of a model variant. Initialization draws each
// parameter from its own named stream, so parameters common to two variants
// initialize identically for the same seed regardless of what else exists.
struct ModelParams {
  ModelConfig cfg;

  Tensor src_embed;  // [V_src, d]
  Tensor tgt_embed;  // [V_tgt, d]
  Tensor w_w;        // [d, d], output head inner map
  Tensor w_o;        // [d, V_tgt]; undefined when cfg.tie_output

  std::vector<EncoderLayerParams> enc;
  std::vector<DecoderLayerParams> dec;

  // future-cost cell (gates R and Z, candidate S) and its own softmax head
  Tensor f_wr, f_ur, f_wz, f_uz, f_w, f_u;  // [d, d] each
  Tensor f_br, f_bz, f_bs;                  // [d], only with cfg.future_cell_bias
  Tensor fh_w, fh_o;                        // future head analogues of w_w / w_o
  Tensor f_embed;                           // [V_tgt, d], only when separate
  Tensor gate_w;                            // [2d, 1], fusion gate

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  // Fixed enumeration order: embeddings, head, encoder layers, decoder
  // layers, then future-cost parameters when present.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  std::int64_t param_count() const;
  void zero_grads();
};

// Attention weights captured during a forward pass, one entry per layer,
// each [B*h, q_len, k_len], taken after softmax and before dropout.
struct AttnTrace {
  std::vector<Tensor> enc_self;
  std::vector<Tensor> dec_self;
  std::vector<Tensor> dec_cross;
};

Tensor sinusoidal_positions(std::int64_t len, std::int64_t d_model);

std::vector<std::uint8_t> causal_mask(std::int64_t len);

// Encoder stack: embed + positions, then per layer LN(SelfAtt(H)+H) and
// LN(FFN(C)+C). Padded source positions are blocked as attention keys.
Tensor encode(const ModelParams& params, const std::vector<int>& src_ids,
              const std::vector<std::uint8_t>& src_pad, std::int64_t batch, std::int64_t src_len,
              bool training, Rng& rng, AttnTrace* trace = nullptr);

// Decoder stack: causally masked self-attention, cross-attention over
// enc_out, FFN, each with residual + LN.
Tensor decode(const ModelParams& params, const std::vector<int>& tgt_in_ids,
              const std::vector<std::uint8_t>& causal, const Tensor& enc_out,
              const std::vector<std::uint8_t>& src_pad, std::int64_t batch, std::int64_t tgt_len,
              bool training, Rng& rng, AttnTrace* trace = nullptr);

// Translation head: logits = tanh(H W_w) W_o, bias-free. With tie_output the
// target embedding transposed stands in for W_o.
Tensor output_logits(const ModelParams& params, const Tensor& h);

}  // namespace nmt
