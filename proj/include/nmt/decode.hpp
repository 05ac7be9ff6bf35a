#pragma once

#include <cstdint>
#include <vector>

#include "nmt/future.hpp"
#include "nmt/model.hpp"

namespace nmt {

struct DecodeConfig {
  std::int64_t beam_size = 5;
  std::int64_t max_decode_len = kMaxSeqLen;
  double length_penalty = 0.0;  // alpha; 0 keeps raw cumulative log-probs

  void validate() const;  // ConfigError on violation
};

// score / ((5 + length) / 6)^alpha; length counts generated tokens (no BOS).
double length_penalized(double score, std::int64_t length, double alpha);

struct GreedyResult {
  std::vector<int> tokens;             // emitted ids, terminating EOS included
  std::vector<double> step_logprobs;   // log-prob of each emitted token
};

struct BeamHypothesis {
  std::vector<int> tokens;  // BOS-prefixed; ends with EOS when finished
  double score = 0.0;       // sum of per-step log-probs
  bool finished = false;
  FutureState future;       // model2 only: F of the last generated token
};

// Leaderboard snapshot after one expansion step: every finished hypothesis
// found so far plus the surviving active beams, ranked like the final output.
struct TraceEntry {
  std::vector<int> tokens;
  double score = 0.0;
  double penalized = 0.0;
  bool finished = false;
};

struct BeamStepRecord {
  std::int64_t step = 0;
  std::vector<TraceEntry> entries;
};

struct BeamTrace {
  std::vector<BeamStepRecord> steps;
};

// Argmax decoding; ties pick the lowest token id. model2 fuses the previous
// generated token's future state into each step's context. Stops at EOS or
// after min(max_decode_len, model max_len - 1) tokens.
GreedyResult greedy_decode(const ModelParams& params, const std::vector<int>& src_ids,
                           const DecodeConfig& cfg);

// Beam expansion over the full vocabulary. Each surviving hypothesis carries
// its own FutureState, updated with its own last generated token. Finished
// hypotheses are held aside and compete with still-active ones in the final
// ranking by length-penalized score; all ties break lexicographically on the
// token sequence. Returns every ranked hypothesis, best first.
std::vector<BeamHypothesis> beam_search(const ModelParams& params, const std::vector<int>& src_ids,
                                        const DecodeConfig& cfg, BeamTrace* trace = nullptr);

}  // namespace nmt
