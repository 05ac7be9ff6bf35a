#include "nmt/future.hpp"

namespace nmt {

namespace {

void require_future(const ModelParams& params, const char* op) {
  if (!params.f_wr.defined()) {
    throw ContractError(std::string(op) + ": this variant has no future-cost parameters");
  }
}

}  // namespace

Tensor future_cell(const ModelParams& params, const std::vector<int>& y_ids, const Tensor& h,
                   double s_dropout, Rng& rng, bool training, FutureCellTrace* trace) {
  require_future(params, "future_cell");
  if (h.rank() != 2 || h.dim(1) != params.cfg.d_model) {
    throw DimError("future_cell expects [rows, d_model], got " + shape_str(h.shape()));
  }
  if (static_cast<std::int64_t>(y_ids.size()) != h.dim(0)) {
    throw DimError("future_cell: one token id per row required");
  }
  const Tensor& table = params.f_embed.defined() ? params.f_embed : params.tgt_embed;
  Tensor e = embedding(table, y_ids);

  Tensor r_pre = add(matmul(e, params.f_wr), matmul(h, params.f_ur));
  if (params.f_br.defined()) r_pre = add(r_pre, params.f_br);
  Tensor r = sigmoid(r_pre);

  Tensor z_pre = add(matmul(e, params.f_wz), matmul(h, params.f_uz));
  if (params.f_bz.defined()) z_pre = add(z_pre, params.f_bz);
  Tensor z = sigmoid(z_pre);

  Tensor s_pre = add(matmul(e, params.f_w), matmul(mul(r, h), params.f_u));
  if (params.f_bs.defined()) s_pre = add(s_pre, params.f_bs);
  Tensor s = relu(s_pre);
  s = dropout(s, s_dropout, rng, training);

  if (trace) {
    trace->r = r;
    trace->z = z;
    trace->s = s;
  }
  return add(h, mul(z, sub(s, h)));
}

FutureState init_future_state(const ModelParams& params, const Tensor& enc_out,
                              const std::vector<std::uint8_t>& src_pad) {
  require_future(params, "init_future_state");
  Tensor mean = masked_mean_rows(enc_out, src_pad);
  const std::vector<int> eos(static_cast<std::size_t>(mean.dim(0)), Vocabulary::kEos);
  Rng unused(0);
  return FutureState{future_cell(params, eos, mean, 0.0, unused, false)};
}

FutureState future_step(const ModelParams& params, const std::vector<int>& y_ids,
                        const Tensor& h) {
  Rng unused(0);
  return FutureState{future_cell(params, y_ids, h, 0.0, unused, false)};
}

Tensor future_logits(const ModelParams& params, const Tensor& f) {
  require_future(params, "future_logits");
  if (f.rank() != 2) {
    throw DimError("future_logits expects [rows, d_model], got " + shape_str(f.shape()));
  }
  return matmul(tanh(matmul(f, params.fh_w)), params.fh_o);
}

std::pair<Tensor, Tensor> fuse_context(const ModelParams& params, const Tensor& h_next,
                                       const Tensor& f_prev) {
  if (!params.gate_w.defined()) {
    throw ContractError("fuse_context: fusion gate exists only for the gated variant");
  }
  if (h_next.rank() != 2 || h_next.shape() != f_prev.shape()) {
    throw DimError("fuse_context: operands must be equal-shape [rows, d_model], got " +
                   shape_str(h_next.shape()) + " and " + shape_str(f_prev.shape()));
  }
  Tensor joined = concat(h_next, f_prev, 1);
  Tensor g = sigmoid(matmul(joined, params.gate_w));
  Tensor fused = add(h_next, mul(g, f_prev));
  return {fused, g};
}

}  // namespace nmt
