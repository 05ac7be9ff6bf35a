#pragma once

#include <utility>
#include <vector>

#include "nmt/model.hpp"

namespace nmt {

// Future context representation F_i for a batch of sequences (or beam
// hypotheses), one row per sequence.
struct FutureState {
  Tensor f;  // [B, d_model]
};

// Intermediate cell activations, exposed for range/interpolation checks.
struct FutureCellTrace {
  Tensor r, z, s;
};

// Gated future-context cell over flattened rows:
//   R = sigmoid(E[y] Wr + H Ur)        Z = sigmoid(E[y] Wz + H Uz)
//   S = relu(E[y] W + (R o H) U)       F = H + Z o (S - H)
// F is written as the interpolation H + Z(S-H), algebraically equal to
// Z o S + (1-Z) o H but entry-wise guaranteed to stay inside [S, H] under
// rounding. y_ids picks rows of the target embedding (or the separate future
// embedding when configured); biases join each pre-activation when enabled.
// s_dropout > 0 with training applies inverted dropout to S.
Tensor future_cell(const ModelParams& params, const std::vector<int>& y_ids, const Tensor& h,
                   double s_dropout, Rng& rng, bool training, FutureCellTrace* trace = nullptr);

// F_0: the cell fed with the source end token's embedding and the mean over
// non-pad source positions of the encoder output.
FutureState init_future_state(const ModelParams& params, const Tensor& enc_out,
                              const std::vector<std::uint8_t>& src_pad);

// F_i from the current decoder top state and the token chosen at step i
// (ground truth under teacher forcing, the generated token when decoding).
FutureState future_step(const ModelParams& params, const std::vector<int>& y_ids,
                        const Tensor& h);

// Future head: logits = tanh(F Ww') Wo' with the head's own parameters.
Tensor future_logits(const ModelParams& params, const Tensor& f);

// Fusion gate: g = sigmoid([H_next : F_prev] Wg) in (0,1), one scalar per
// row; fused = H_next + g o F_prev. Returns (fused, g).
std::pair<Tensor, Tensor> fuse_context(const ModelParams& params, const Tensor& h_next,
                                       const Tensor& f_prev);

}  // namespace nmt
