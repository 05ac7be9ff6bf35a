#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmt/data.hpp"
#include "nmt/model.hpp"
#include "nmt/optim.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

struct TrainConfig {
  double lambda = 0.7;            // weight of the future-cost loss term
  double label_smoothing = 0.1;
  bool smooth_future = true;      // apply label smoothing to the future loss too
  bool include_f0_loss = false;   // add the sentence-level F0 -> first-word term
  bool future_stop_grad = false;  // ablation: detach decoder states entering the cell
  double future_cell_dropout = 0.0;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::int64_t warmup_steps = 400;
  std::int64_t max_steps = 3000;
  std::int64_t batch_size = 64;
  std::int64_t validate_every = 200;
  std::uint64_t seed = 1;

  // Stop once dev teacher-forced token accuracy reaches this; < 0 disables.
  double early_stop_tf_acc = -1.0;

  void validate() const;  // ConfigError on violation
};

struct LossBreakdown {
  double ce = 0.0;
  double future = 0.0;
  double joint = 0.0;
  std::int64_t token_count = 0;
};

// Translation loss: label-smoothed cross-entropy over tgt_out, averaged over
// non-pad positions. logits is [B, tgt_len, V].
Tensor ce_loss(const Tensor& logits, const Batch& batch, double eps);

// Future-cost loss over the future head's logits [B, tgt_len, V]. The label
// at position p is the NEXT target token tgt_out[p+1]; the step consuming the
// last real word targets EOS, and the step consuming EOS itself is masked
// out. With f0_included the logits row at p instead came from the future
// state PRECEDING p (F0 first), so the label is tgt_out[p] directly.
Tensor future_loss(const Tensor& fut_logits, const Batch& batch, double eps, bool f0_included);

struct ForwardResult {
  Tensor joint;    // scalar loss graph: ce + lambda * future
  Tensor logits;   // [B, tgt_len, V] translation logits
  LossBreakdown values;
};

// Teacher-forced forward pass for one batch under the configured variant.
// The future branch is built only when it contributes, so at lambda == 0 the
// graph (and every RNG draw) matches the baseline's exactly.
ForwardResult batch_loss(const ModelParams& params, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const Batch& batch, Rng& rng, bool training);

// zero grads -> forward -> backward -> Adam update at lr_schedule(step).
// Throws ContractError on a non-finite loss before touching any parameter.
LossBreakdown train_step(ModelParams& params, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const Batch& batch, AdamOptimizer& opt, std::int64_t step, Rng& rng);

struct TrainPaths {
  std::string metrics;          // TSV log, empty to skip
  std::string best_checkpoint;  // overwritten on each dev improvement
  std::string last_checkpoint;  // overwritten at every validation point
};

struct TrainResult {
  std::int64_t steps_run = 0;
  std::int64_t best_step = 0;
  double best_dev_joint = 0.0;
  double step0_dev_future = 0.0;
  double final_dev_joint = 0.0;
  double final_dev_tf_acc = 0.0;
  bool stopped_early = false;
};

// Owns the full loop: per-epoch batch shuffling, Adam with warmup, periodic
// dev validation, metrics TSV, and best/last checkpoints. Deterministic for
// a fixed config and seed.
class Trainer {
 public:
  Trainer(ModelConfig mcfg, TrainConfig tcfg, Vocabulary vocab,
          std::vector<SentencePair> train_pairs, std::vector<SentencePair> dev_pairs,
          TrainPaths paths);

  TrainResult run();

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const AdamOptimizer& optimizer() const { return opt_; }

 private:
  struct DevEval {
    LossBreakdown loss;
    double tf_acc = 0.0;
  };
  DevEval evaluate_dev();
  void save_checkpoints(std::int64_t step, bool improved);

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  Vocabulary vocab_;
  std::vector<SentencePair> train_pairs_;
  std::vector<SentencePair> dev_pairs_;
  TrainPaths paths_;
  ModelParams params_;
  AdamOptimizer opt_;
  Rng dropout_rng_;
  std::vector<Batch> dev_batches_;
};

}  // namespace nmt
