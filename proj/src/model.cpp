#include "nmt/model.hpp"

#include <cmath>

namespace nmt {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::ModelOne: return "model1";
    case Variant::ModelTwo: return "model2";
  }
  throw ContractError("unreachable variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "baseline") return Variant::Baseline;
  if (name == "model1") return Variant::ModelOne;
  if (name == "model2") return Variant::ModelTwo;
  throw ConfigError("unknown model variant \"" + name + "\" (baseline, model1, model2)");
}

void ModelConfig::validate() const {
  if (d_model < 1 || d_ffn < 1 || n_heads < 1 || n_layers < 1) {
    throw ConfigError("model dimensions and layer counts must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (src_vocab < 4 || tgt_vocab < 4) {
    throw ConfigError("vocabulary must contain at least the 4 reserved tokens");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (max_len < 1 || max_len > kMaxSeqLen) {
    throw ConfigError("max_len must lie in [1, " + std::to_string(kMaxSeqLen) + "]");
  }
  if (separate_future_embedding && !has_future()) {
    throw ConfigError("separate_future_embedding requires model1 or model2");
  }
}

namespace {

Tensor xavier(const Shape& shape, std::uint64_t seed, const std::string& name) {
  Rng rng(seed_for(seed, name));
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = static_cast<double>(shape[1]);
  const double r = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.next_uniform(-r, r);
  return Tensor::from_data(shape, std::move(v), true);
}

Tensor embed_init(const Shape& shape, std::uint64_t seed, const std::string& name) {
  Rng rng(seed_for(seed, name));
  const double sd = 1.0 / std::sqrt(static_cast<double>(shape[1]));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.next_normal(0.0, sd);
  return Tensor::from_data(shape, std::move(v), true);
}

Tensor const_param(const Shape& shape, double value) {
  return Tensor::full(shape, value, true);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  const std::int64_t d = cfg.d_model, f = cfg.d_ffn;

  p.src_embed = embed_init({cfg.src_vocab, d}, seed, "src_embed");
  p.tgt_embed = embed_init({cfg.tgt_vocab, d}, seed, "tgt_embed");
  p.w_w = xavier({d, d}, seed, "head.w_w");
  if (!cfg.tie_output) p.w_o = xavier({d, cfg.tgt_vocab}, seed, "head.w_o");

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string base = "enc." + std::to_string(l) + ".";
    EncoderLayerParams e;
    e.wq = xavier({d, d}, seed, base + "attn.wq");
    e.wk = xavier({d, d}, seed, base + "attn.wk");
    e.wv = xavier({d, d}, seed, base + "attn.wv");
    e.wo = xavier({d, d}, seed, base + "attn.wo");
    e.ffn_w1 = xavier({d, f}, seed, base + "ffn.w1");
    e.ffn_b1 = const_param({f}, 0.0);
    e.ffn_w2 = xavier({f, d}, seed, base + "ffn.w2");
    e.ffn_b2 = const_param({d}, 0.0);
    e.ln1_g = const_param({d}, 1.0);
    e.ln1_b = const_param({d}, 0.0);
    e.ln2_g = const_param({d}, 1.0);
    e.ln2_b = const_param({d}, 0.0);
    p.enc.push_back(std::move(e));
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string base = "dec." + std::to_string(l) + ".";
    DecoderLayerParams dec;
    dec.wq = xavier({d, d}, seed, base + "self.wq");
    dec.wk = xavier({d, d}, seed, base + "self.wk");
    dec.wv = xavier({d, d}, seed, base + "self.wv");
    dec.wo = xavier({d, d}, seed, base + "self.wo");
    dec.cq = xavier({d, d}, seed, base + "cross.wq");
    dec.ck = xavier({d, d}, seed, base + "cross.wk");
    dec.cv = xavier({d, d}, seed, base + "cross.wv");
    dec.co = xavier({d, d}, seed, base + "cross.wo");
    dec.ffn_w1 = xavier({d, f}, seed, base + "ffn.w1");
    dec.ffn_b1 = const_param({f}, 0.0);
    dec.ffn_w2 = xavier({f, d}, seed, base + "ffn.w2");
    dec.ffn_b2 = const_param({d}, 0.0);
    dec.ln1_g = const_param({d}, 1.0);
    dec.ln1_b = const_param({d}, 0.0);
    dec.ln2_g = const_param({d}, 1.0);
    dec.ln2_b = const_param({d}, 0.0);
    dec.ln3_g = const_param({d}, 1.0);
    dec.ln3_b = const_param({d}, 0.0);
    p.dec.push_back(std::move(dec));
  }

  if (cfg.has_future()) {
    p.f_wr = xavier({d, d}, seed, "future.cell.wr");
    p.f_ur = xavier({d, d}, seed, "future.cell.ur");
    p.f_wz = xavier({d, d}, seed, "future.cell.wz");
    p.f_uz = xavier({d, d}, seed, "future.cell.uz");
    p.f_w = xavier({d, d}, seed, "future.cell.w");
    p.f_u = xavier({d, d}, seed, "future.cell.u");
    if (cfg.future_cell_bias) {
      p.f_br = const_param({d}, 0.0);
      p.f_bz = const_param({d}, 0.0);
      p.f_bs = const_param({d}, 0.0);
    }
    p.fh_w = xavier({d, d}, seed, "future.head.w_w");
    p.fh_o = xavier({d, cfg.tgt_vocab}, seed, "future.head.w_o");
    if (cfg.separate_future_embedding) {
      p.f_embed = embed_init({cfg.tgt_vocab, d}, seed, "future.embed");
    }
    if (cfg.variant == Variant::ModelTwo) {
      p.gate_w = xavier({2 * d, 1}, seed, "future.gate.w");
    }
  }
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_impl(Params& p, Fn&& fn) {
  fn("src_embed", p.src_embed);
  fn("tgt_embed", p.tgt_embed);
  fn("head.w_w", p.w_w);
  if (p.w_o.defined()) fn("head.w_o", p.w_o);
  for (std::size_t l = 0; l < p.enc.size(); ++l) {
    const std::string base = "enc." + std::to_string(l) + ".";
    auto& e = p.enc[l];
    fn(base + "attn.wq", e.wq);
    fn(base + "attn.wk", e.wk);
    fn(base + "attn.wv", e.wv);
    fn(base + "attn.wo", e.wo);
    fn(base + "ffn.w1", e.ffn_w1);
    fn(base + "ffn.b1", e.ffn_b1);
    fn(base + "ffn.w2", e.ffn_w2);
    fn(base + "ffn.b2", e.ffn_b2);
    fn(base + "ln1.gain", e.ln1_g);
    fn(base + "ln1.bias", e.ln1_b);
    fn(base + "ln2.gain", e.ln2_g);
    fn(base + "ln2.bias", e.ln2_b);
  }
  for (std::size_t l = 0; l < p.dec.size(); ++l) {
    const std::string base = "dec." + std::to_string(l) + ".";
    auto& dl = p.dec[l];
    fn(base + "self.wq", dl.wq);
    fn(base + "self.wk", dl.wk);
    fn(base + "self.wv", dl.wv);
    fn(base + "self.wo", dl.wo);
    fn(base + "cross.wq", dl.cq);
    fn(base + "cross.wk", dl.ck);
    fn(base + "cross.wv", dl.cv);
    fn(base + "cross.wo", dl.co);
    fn(base + "ffn.w1", dl.ffn_w1);
    fn(base + "ffn.b1", dl.ffn_b1);
    fn(base + "ffn.w2", dl.ffn_w2);
    fn(base + "ffn.b2", dl.ffn_b2);
    fn(base + "ln1.gain", dl.ln1_g);
    fn(base + "ln1.bias", dl.ln1_b);
    fn(base + "ln2.gain", dl.ln2_g);
    fn(base + "ln2.bias", dl.ln2_b);
    fn(base + "ln3.gain", dl.ln3_g);
    fn(base + "ln3.bias", dl.ln3_b);
  }
  if (p.f_wr.defined()) {
    fn("future.cell.wr", p.f_wr);
    fn("future.cell.ur", p.f_ur);
    fn("future.cell.wz", p.f_wz);
    fn("future.cell.uz", p.f_uz);
    fn("future.cell.w", p.f_w);
    fn("future.cell.u", p.f_u);
    if (p.f_br.defined()) {
      fn("future.cell.br", p.f_br);
      fn("future.cell.bz", p.f_bz);
      fn("future.cell.bs", p.f_bs);
    }
    fn("future.head.w_w", p.fh_w);
    fn("future.head.w_o", p.fh_o);
    if (p.f_embed.defined()) fn("future.embed", p.f_embed);
    if (p.gate_w.defined()) fn("future.gate.w", p.gate_w);
  }
}

}  // namespace

void ModelParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_impl(*this, fn);
}

void ModelParams::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_impl(*this, fn);
}

std::int64_t ModelParams::param_count() const {
  std::int64_t n = 0;
  visit([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

void ModelParams::zero_grads() {
  visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

Tensor sinusoidal_positions(std::int64_t len, std::int64_t d_model) {
  std::vector<double> v(static_cast<std::size_t>(len * d_model));
  for (std::int64_t pos = 0; pos < len; ++pos) {
    for (std::int64_t i = 0; i < d_model; i += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) * rate;
      v[static_cast<std::size_t>(pos * d_model + i)] = std::sin(angle);
      if (i + 1 < d_model) v[static_cast<std::size_t>(pos * d_model + i + 1)] = std::cos(angle);
    }
  }
  return Tensor::from_data({len, d_model}, std::move(v));
}

std::vector<std::uint8_t> causal_mask(std::int64_t len) {
  if (len < 1) throw ContractError("causal_mask: length must be >= 1");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(len * len), 0);
  for (std::int64_t i = 0; i < len; ++i) {
    for (std::int64_t j = i + 1; j < len; ++j) mask[static_cast<std::size_t>(i * len + j)] = 1;
  }
  return mask;
}

namespace {

constexpr double kMaskPenalty = -1e9;

Tensor linear3(const Tensor& x, const Tensor& w) {
  const std::int64_t b = x.dim(0), l = x.dim(1);
  Tensor flat = reshape(x, {b * l, x.dim(2)});
  return reshape(matmul(flat, w), {b, l, w.dim(1)});
}

// Additive attention mask blocking padded key positions: [B*h, q_len, k_len].
Tensor key_pad_penalty(const std::vector<std::uint8_t>& key_pad, std::int64_t batch, int heads,
                       std::int64_t q_len, std::int64_t k_len) {
  std::vector<double> v(static_cast<std::size_t>(batch * heads * q_len * k_len), 0.0);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t j = 0; j < k_len; ++j) {
      if (!key_pad[static_cast<std::size_t>(b * k_len + j)]) continue;
      for (int h = 0; h < heads; ++h) {
        double* plane = v.data() + ((b * heads + h) * q_len) * k_len;
        for (std::int64_t q = 0; q < q_len; ++q) plane[q * k_len + j] = kMaskPenalty;
      }
    }
  }
  return Tensor::from_data({batch * heads, q_len, k_len}, std::move(v));
}

// Additive causal mask: [q_len, k_len], broadcast across batch*heads.
Tensor causal_penalty(const std::vector<std::uint8_t>& causal, std::int64_t len) {
  std::vector<double> v(static_cast<std::size_t>(len * len), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (causal[i]) v[i] = kMaskPenalty;
  }
  return Tensor::from_data({len, len}, std::move(v));
}

struct AttnProj {
  const Tensor& wq;
  const Tensor& wk;
  const Tensor& wv;
  const Tensor& wo;
};

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys_values, const AttnProj& w,
                            int heads, const Tensor& penalty, double dropout_p, bool training,
                            Rng& rng, std::vector<Tensor>* capture) {
  const std::int64_t d = queries.dim(2);
  const std::int64_t dk = d / heads;
  Tensor q = split_heads(linear3(queries, w.wq), heads);
  Tensor k = split_heads(linear3(keys_values, w.wk), heads);
  Tensor v = split_heads(linear3(keys_values, w.wv), heads);
  Tensor scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk)));
  scores = add(scores, penalty);
  Tensor probs = softmax(scores, -1);
  if (capture) capture->push_back(probs);
  probs = dropout(probs, dropout_p, rng, training);
  Tensor ctx = merge_heads(bmm(probs, v), heads);
  return linear3(ctx, w.wo);
}

Tensor ffn_block(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                 const Tensor& b2) {
  return add(linear3(relu(add(linear3(x, w1), b1)), w2), b2);
}

Tensor embed_sequence(const Tensor& table, const std::vector<int>& ids, std::int64_t batch,
                      std::int64_t len, const ModelConfig& cfg, double dropout_p, bool training,
                      Rng& rng) {
  Tensor x = reshape(embedding(table, ids), {batch, len, cfg.d_model});
  x = scale(x, std::sqrt(static_cast<double>(cfg.d_model)));
  if (cfg.use_positions) x = add(x, sinusoidal_positions(len, cfg.d_model));
  return dropout(x, dropout_p, rng, training);
}

}  // namespace

Tensor encode(const ModelParams& params, const std::vector<int>& src_ids,
              const std::vector<std::uint8_t>& src_pad, std::int64_t batch, std::int64_t src_len,
              bool training, Rng& rng, AttnTrace* trace) {
  const ModelConfig& cfg = params.cfg;
  if (src_len < 1 || batch < 1) throw ContractError("encode: empty batch");
  if (src_len > cfg.max_len) {
    throw InputError("source length " + std::to_string(src_len) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  if (static_cast<std::int64_t>(src_ids.size()) != batch * src_len ||
      static_cast<std::int64_t>(src_pad.size()) != batch * src_len) {
    throw DimError("encode: ids/mask sizes disagree with batch layout");
  }
  const double p = cfg.dropout;
  Tensor h = embed_sequence(params.src_embed, src_ids, batch, src_len, cfg, p, training, rng);
  Tensor penalty = key_pad_penalty(src_pad, batch, cfg.n_heads, src_len, src_len);
  for (const auto& layer : params.enc) {
    AttnProj proj{layer.wq, layer.wk, layer.wv, layer.wo};
    Tensor att = multi_head_attention(h, h, proj, cfg.n_heads, penalty, p, training, rng,
                                      trace ? &trace->enc_self : nullptr);
    att = dropout(att, p, rng, training);
    h = layer_norm(add(att, h), layer.ln1_g, layer.ln1_b, kLayerNormEps);
    Tensor f = dropout(ffn_block(h, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2), p,
                       rng, training);
    h = layer_norm(add(f, h), layer.ln2_g, layer.ln2_b, kLayerNormEps);
  }
  return h;
}

Tensor decode(const ModelParams& params, const std::vector<int>& tgt_in_ids,
              const std::vector<std::uint8_t>& causal, const Tensor& enc_out,
              const std::vector<std::uint8_t>& src_pad, std::int64_t batch, std::int64_t tgt_len,
              bool training, Rng& rng, AttnTrace* trace) {
  const ModelConfig& cfg = params.cfg;
  if (tgt_len < 1 || batch < 1) throw ContractError("decode: empty batch");
  if (tgt_len > cfg.max_len) {
    throw InputError("target length " + std::to_string(tgt_len) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  }
  if (static_cast<std::int64_t>(tgt_in_ids.size()) != batch * tgt_len ||
      static_cast<std::int64_t>(causal.size()) != tgt_len * tgt_len) {
    throw DimError("decode: ids/causal sizes disagree with batch layout");
  }
  if (enc_out.rank() != 3 || enc_out.dim(0) != batch) {
    throw DimError("decode: encoder output shape " + shape_str(enc_out.shape()) +
                   " does not match batch");
  }
  const std::int64_t src_len = enc_out.dim(1);
  const double p = cfg.dropout;
  Tensor h = embed_sequence(params.tgt_embed, tgt_in_ids, batch, tgt_len, cfg, p, training, rng);
  Tensor self_penalty = causal_penalty(causal, tgt_len);
  Tensor cross_penalty = key_pad_penalty(src_pad, batch, cfg.n_heads, tgt_len, src_len);
  for (const auto& layer : params.dec) {
    AttnProj self_proj{layer.wq, layer.wk, layer.wv, layer.wo};
    Tensor att = multi_head_attention(h, h, self_proj, cfg.n_heads, self_penalty, p, training,
                                      rng, trace ? &trace->dec_self : nullptr);
    att = dropout(att, p, rng, training);
    h = layer_norm(add(att, h), layer.ln1_g, layer.ln1_b, kLayerNormEps);

    AttnProj cross_proj{layer.cq, layer.ck, layer.cv, layer.co};
    Tensor cross = multi_head_attention(h, enc_out, cross_proj, cfg.n_heads, cross_penalty, p,
                                        training, rng, trace ? &trace->dec_cross : nullptr);
    cross = dropout(cross, p, rng, training);
    h = layer_norm(add(cross, h), layer.ln2_g, layer.ln2_b, kLayerNormEps);

    Tensor f = dropout(ffn_block(h, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2), p,
                       rng, training);
    h = layer_norm(add(f, h), layer.ln3_g, layer.ln3_b, kLayerNormEps);
  }
  return h;
}

Tensor output_logits(const ModelParams& params, const Tensor& h) {
  const bool flat = h.rank() == 2;
  Tensor x = h;
  std::int64_t b = 0, l = 0;
  if (!flat) {
    b = h.dim(0);
    l = h.dim(1);
    x = reshape(h, {b * l, h.dim(2)});
  }
  Tensor t = tanh(matmul(x, params.w_w));
  Tensor logits = params.cfg.tie_output ? matmul(t, params.tgt_embed, true)
                                        : matmul(t, params.w_o);
  if (flat) return logits;
  return reshape(logits, {b, l, params.cfg.tgt_vocab});
}

}  // namespace nmt
