#include "nmt/decode.hpp"

#include <algorithm>
#include <cmath>

#include "nmt/data.hpp"
#include "nmt/error.hpp"

namespace nmt {

namespace {

// One still-open beam entry during the search.
struct Active {
  std::vector<int> tokens;  // BOS-prefixed
  double score = 0.0;
  FutureState future;
};

Tensor repeat_batch(const Tensor& x, std::int64_t copies) {
  Tensor out = x;
  for (std::int64_t i = 1; i < copies; ++i) out = concat(out, x, 0);
  return out;
}

// Decoder states for all active prefixes (equal length), last position only.
Tensor last_states(const ModelParams& params, const std::vector<Active>& actives,
                   const Tensor& enc, const std::vector<std::uint8_t>& src_pad, Rng& rng) {
  const std::int64_t A = static_cast<std::int64_t>(actives.size());
  const std::int64_t len = static_cast<std::int64_t>(actives[0].tokens.size());
  std::vector<int> tgt_in;
  tgt_in.reserve(static_cast<std::size_t>(A * len));
  for (const Active& a : actives) tgt_in.insert(tgt_in.end(), a.tokens.begin(), a.tokens.end());
  std::vector<std::uint8_t> pad_a;
  pad_a.reserve(src_pad.size() * static_cast<std::size_t>(A));
  for (std::int64_t i = 0; i < A; ++i) pad_a.insert(pad_a.end(), src_pad.begin(), src_pad.end());
  Tensor h = decode(params, tgt_in, causal_mask(len), repeat_batch(enc, A), pad_a, A, len,
                    /*training=*/false, rng);
  return reshape(slice(h, 1, len - 1, 1), {A, params.cfg.d_model});
}

// Next-token log-probabilities [A, V] for the active prefixes; for model2 the
// context is first fused with each hypothesis's own future state.
Tensor step_logprobs(const ModelParams& params, const std::vector<Active>& actives,
                     const Tensor& h_last) {
  Tensor ctx = h_last;
  if (params.cfg.variant == Variant::ModelTwo) {
    Tensor f_prev = actives[0].future.f;
    for (std::size_t i = 1; i < actives.size(); ++i) f_prev = concat(f_prev, actives[i].future.f, 0);
    ctx = fuse_context(params, h_last, f_prev).first;
  }
  return log_softmax(output_logits(params, ctx), -1);
}

bool tokens_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (max_decode_len < 1) throw ConfigError("max_decode_len must be >= 1");
}

double length_penalized(double score, std::int64_t length, double alpha) {
  if (alpha == 0.0) return score;
  return score / std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

GreedyResult greedy_decode(const ModelParams& params, const std::vector<int>& src_ids,
                           const DecodeConfig& cfg) {
  cfg.validate();
  NoGradGuard guard;
  Rng rng(0);
  const std::int64_t J = static_cast<std::int64_t>(src_ids.size());
  const std::vector<std::uint8_t> src_pad(static_cast<std::size_t>(J), 0);
  Tensor enc = encode(params, src_ids, src_pad, 1, J, /*training=*/false, rng);

  const bool model2 = params.cfg.variant == Variant::ModelTwo;
  std::vector<Active> self(1);
  self[0].tokens = {Vocabulary::kBos};
  if (model2) self[0].future = init_future_state(params, enc, src_pad);

  GreedyResult out;
  const std::int64_t max_steps = std::min(cfg.max_decode_len, params.cfg.max_len - 1);
  for (std::int64_t step = 0; step < max_steps; ++step) {
    Tensor h_last = last_states(params, self, enc, src_pad, rng);
    Tensor logp = step_logprobs(params, self, h_last);
    const auto& row = logp.data();
    std::int64_t best = 0;
    for (std::int64_t v = 1; v < logp.dim(1); ++v) {
      if (row[static_cast<std::size_t>(v)] > row[static_cast<std::size_t>(best)]) best = v;
    }
    const int token = static_cast<int>(best);
    out.tokens.push_back(token);
    out.step_logprobs.push_back(row[static_cast<std::size_t>(best)]);
    if (token == Vocabulary::kEos) break;
    self[0].tokens.push_back(token);
    if (model2) self[0].future = future_step(params, {token}, h_last);
  }
  return out;
}

std::vector<BeamHypothesis> beam_search(const ModelParams& params, const std::vector<int>& src_ids,
                                        const DecodeConfig& cfg, BeamTrace* trace) {
  cfg.validate();
  NoGradGuard guard;
  Rng rng(0);
  const std::int64_t J = static_cast<std::int64_t>(src_ids.size());
  const std::vector<std::uint8_t> src_pad(static_cast<std::size_t>(J), 0);
  Tensor enc = encode(params, src_ids, src_pad, 1, J, /*training=*/false, rng);

  const bool model2 = params.cfg.variant == Variant::ModelTwo;
  std::vector<Active> actives(1);
  actives[0].tokens = {Vocabulary::kBos};
  if (model2) actives[0].future = init_future_state(params, enc, src_pad);

  std::vector<BeamHypothesis> finished;
  if (trace) trace->steps.clear();

  const auto generated_len = [](const std::vector<int>& tokens) {
    return static_cast<std::int64_t>(tokens.size()) - 1;
  };

  const std::int64_t max_steps = std::min(cfg.max_decode_len, params.cfg.max_len - 1);
  for (std::int64_t step = 1; step <= max_steps && !actives.empty(); ++step) {
    Tensor h_last = last_states(params, actives, enc, src_pad, rng);
    Tensor logp = step_logprobs(params, actives, h_last);
    const std::int64_t V = logp.dim(1);

    struct Cand {
      std::int64_t parent;
      int token;
      double score;
    };
    std::vector<Cand> cands;
    cands.reserve(actives.size() * static_cast<std::size_t>(V));
    for (std::size_t a = 0; a < actives.size(); ++a) {
      const double* row = logp.data().data() + static_cast<std::int64_t>(a) * V;
      for (std::int64_t v = 0; v < V; ++v) {
        cands.push_back({static_cast<std::int64_t>(a), static_cast<int>(v),
                         actives[a].score + row[v]});
      }
    }
    const auto cand_order = [&](const Cand& x, const Cand& y) {
      if (x.score != y.score) return x.score > y.score;
      const auto& tx = actives[static_cast<std::size_t>(x.parent)].tokens;
      const auto& ty = actives[static_cast<std::size_t>(y.parent)].tokens;
      for (std::size_t i = 0; i < tx.size(); ++i) {
        if (tx[i] != ty[i]) return tx[i] < ty[i];
      }
      return x.token < y.token;
    };
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(cfg.beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      cand_order);
    cands.resize(keep);

    std::vector<Active> next;
    next.reserve(keep);
    for (const Cand& c : cands) {
      const Active& parent = actives[static_cast<std::size_t>(c.parent)];
      std::vector<int> tokens = parent.tokens;
      tokens.push_back(c.token);
      if (c.token == Vocabulary::kEos) {
        finished.push_back({std::move(tokens), c.score, true, FutureState{}});
      } else {
        Active child;
        child.tokens = std::move(tokens);
        child.score = c.score;
        if (model2) {
          child.future = future_step(params, {c.token}, slice(h_last, 0, c.parent, 1));
        }
        next.push_back(std::move(child));
      }
    }
    actives = std::move(next);

    if (trace) {
      BeamStepRecord record;
      record.step = step;
      for (const BeamHypothesis& h : finished) {
        record.entries.push_back({h.tokens, h.score,
                                  length_penalized(h.score, generated_len(h.tokens),
                                                   cfg.length_penalty),
                                  true});
      }
      for (const Active& a : actives) {
        record.entries.push_back({a.tokens, a.score,
                                  length_penalized(a.score, generated_len(a.tokens),
                                                   cfg.length_penalty),
                                  false});
      }
      std::sort(record.entries.begin(), record.entries.end(),
                [&](const TraceEntry& x, const TraceEntry& y) {
                  if (x.penalized != y.penalized) return x.penalized > y.penalized;
                  return tokens_less(x.tokens, y.tokens);
                });
      trace->steps.push_back(std::move(record));
    }
  }

  std::vector<BeamHypothesis> ranked = std::move(finished);
  for (Active& a : actives) {
    BeamHypothesis h;
    h.tokens = std::move(a.tokens);
    h.score = a.score;
    h.finished = false;
    h.future = std::move(a.future);
    ranked.push_back(std::move(h));
  }
  std::sort(ranked.begin(), ranked.end(), [&](const BeamHypothesis& x, const BeamHypothesis& y) {
    const double px = length_penalized(x.score, generated_len(x.tokens), cfg.length_penalty);
    const double py = length_penalized(y.score, generated_len(y.tokens), cfg.length_penalty);
    if (px != py) return px > py;
    return tokens_less(x.tokens, y.tokens);
  });
  return ranked;
}

}  // namespace nmt
