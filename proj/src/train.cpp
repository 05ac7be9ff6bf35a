#include "nmt/train.hpp"

#include <cmath>
#include <fstream>
#include <utility>

#include "nmt/checkpoint.hpp"
#include "nmt/error.hpp"
#include "nmt/future.hpp"
#include "nmt/textfmt.hpp"

namespace nmt {

namespace {

double scalar(const Tensor& t) { return t.data()[0]; }

std::vector<std::uint8_t> invert_pad(const std::vector<std::uint8_t>& pad) {
  std::vector<std::uint8_t> mask(pad.size());
  for (std::size_t i = 0; i < pad.size(); ++i) mask[i] = pad[i] ? 0 : 1;
  return mask;
}

void check_logit_shape(const Tensor& logits, const Batch& batch, const char* who) {
  if (logits.rank() != 3 || logits.dim(0) != batch.size || logits.dim(1) != batch.tgt_len) {
    throw DimError(std::string(who) + ": logits must be [batch, tgt_len, vocab]");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must lie in [0, 1)");
  }
  if (future_cell_dropout < 0.0 || future_cell_dropout >= 1.0) {
    throw ConfigError("future_cell_dropout must lie in [0, 1)");
  }
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (validate_every < 1) throw ConfigError("validate_every must be >= 1");
  if (early_stop_tf_acc > 1.0) throw ConfigError("early_stop_tf_acc must be <= 1");
}

Tensor ce_loss(const Tensor& logits, const Batch& batch, double eps) {
  check_logit_shape(logits, batch, "ce_loss");
  return smoothed_nll(log_softmax(logits, -1), batch.tgt_out_ids, invert_pad(batch.tgt_pad), eps,
                      Vocabulary::kPad);
}

Tensor future_loss(const Tensor& fut_logits, const Batch& batch, double eps, bool f0_included) {
  check_logit_shape(fut_logits, batch, "future_loss");
  std::vector<int> labels;
  if (f0_included) {
    labels = batch.tgt_out_ids;
  } else {
    const std::int64_t L = batch.tgt_len;
    labels.assign(batch.tgt_out_ids.size(), Vocabulary::kPad);
    for (std::int64_t b = 0; b < batch.size; ++b) {
      for (std::int64_t p = 0; p + 1 < L; ++p) {
        labels[static_cast<std::size_t>(b * L + p)] =
            batch.tgt_out_ids[static_cast<std::size_t>(b * L + p + 1)];
      }
    }
  }
  std::vector<std::uint8_t> mask(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] == Vocabulary::kPad ? 0 : 1;
  return smoothed_nll(log_softmax(fut_logits, -1), labels, mask, eps, Vocabulary::kPad);
}

ForwardResult batch_loss(const ModelParams& params, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const Batch& batch, Rng& rng, bool training) {
  const std::int64_t B = batch.size;
  const std::int64_t L = batch.tgt_len;
  const std::int64_t d = mcfg.d_model;

  Tensor enc = encode(params, batch.src_ids, batch.src_pad, B, batch.src_len, training, rng);
  Tensor h = decode(params, batch.tgt_in_ids, batch.causal, enc, batch.src_pad, B, L, training, rng);

  const bool model2 = mcfg.variant == Variant::ModelTwo;
  const bool want_future_loss = mcfg.has_future() && tcfg.lambda > 0.0;

  Tensor f_all3;  // [B, L, d], F at position p computed from (tgt_out[p], H[p])
  Tensor f_prev;  // [B, L, d], F0 followed by F at positions 0..L-2
  if (model2 || want_future_loss) {
    Tensor h_flat = reshape(h, {B * L, d});
    Tensor h_cell = tcfg.future_stop_grad ? h_flat.detach() : h_flat;
    f_all3 = reshape(
        future_cell(params, batch.tgt_out_ids, h_cell, tcfg.future_cell_dropout, rng, training),
        {B, L, d});
    if (model2 || tcfg.include_f0_loss) {
      Tensor enc_cell = tcfg.future_stop_grad ? enc.detach() : enc;
      Tensor f0 = init_future_state(params, enc_cell, batch.src_pad).f;
      f_prev = concat(reshape(f0, {B, 1, d}), slice(f_all3, 1, 0, L - 1), 1);
    }
  }

  Tensor h_out = h;
  if (model2) {
    auto [fused, g] = fuse_context(params, reshape(h, {B * L, d}), reshape(f_prev, {B * L, d}));
    h_out = reshape(fused, {B, L, d});
  }
  Tensor logits = output_logits(params, h_out);
  Tensor ce = ce_loss(logits, batch, tcfg.label_smoothing);

  ForwardResult out;
  out.logits = logits;
  out.values.ce = scalar(ce);
  std::int64_t tokens = 0;
  for (auto p : batch.tgt_pad) tokens += p ? 0 : 1;
  out.values.token_count = tokens;

  if (want_future_loss) {
    Tensor f_for_loss = tcfg.include_f0_loss ? f_prev : f_all3;
    Tensor flog = future_logits(params, reshape(f_for_loss, {B * L, d}));
    Tensor fut = future_loss(reshape(flog, {B, L, mcfg.tgt_vocab}), batch,
                             tcfg.smooth_future ? tcfg.label_smoothing : 0.0, tcfg.include_f0_loss);
    out.values.future = scalar(fut);
    out.joint = add(ce, scale(fut, tcfg.lambda));
  } else {
    out.joint = ce;
  }
  out.values.joint = scalar(out.joint);
  return out;
}

LossBreakdown train_step(ModelParams& params, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const Batch& batch, AdamOptimizer& opt, std::int64_t step, Rng& rng) {
  params.zero_grads();
  ForwardResult fwd = batch_loss(params, mcfg, tcfg, batch, rng, /*training=*/true);
  if (!std::isfinite(fwd.values.joint)) {
    throw ContractError("training step " + std::to_string(step) + " produced a non-finite loss");
  }
  fwd.joint.backward();
  opt.step(params, lr_schedule(step, mcfg.d_model, tcfg.warmup_steps));
  return fwd.values;
}

Trainer::Trainer(ModelConfig mcfg, TrainConfig tcfg, Vocabulary vocab,
                 std::vector<SentencePair> train_pairs, std::vector<SentencePair> dev_pairs,
                 TrainPaths paths)
    : mcfg_(std::move(mcfg)),
      tcfg_(std::move(tcfg)),
      vocab_(std::move(vocab)),
      train_pairs_(std::move(train_pairs)),
      dev_pairs_(std::move(dev_pairs)),
      paths_(std::move(paths)),
      opt_(tcfg_.adam_beta1, tcfg_.adam_beta2, tcfg_.adam_eps),
      dropout_rng_(0) {
  mcfg_.validate();
  tcfg_.validate();
  if (mcfg_.src_vocab != vocab_.size() || mcfg_.tgt_vocab != vocab_.size()) {
    throw ConfigError("model vocab sizes must equal the shared vocabulary size");
  }
  if (train_pairs_.empty()) throw InputError("training corpus is empty");
  if (dev_pairs_.empty()) throw InputError("dev corpus is empty");
  params_ = ModelParams::init(mcfg_, seed_for(tcfg_.seed, "params"));
  dropout_rng_ = Rng(seed_for(tcfg_.seed, "dropout"));
  dev_batches_ = make_batches(dev_pairs_, vocab_, tcfg_.batch_size, seed_for(tcfg_.seed, "dev"));
}

Trainer::DevEval Trainer::evaluate_dev() {
  NoGradGuard guard;
  DevEval out;
  double ce_sum = 0.0, future_sum = 0.0, joint_sum = 0.0;
  std::int64_t tokens = 0, correct = 0;
  for (const Batch& batch : dev_batches_) {
    ForwardResult fwd = batch_loss(params_, mcfg_, tcfg_, batch, dropout_rng_, /*training=*/false);
    const double n = static_cast<double>(fwd.values.token_count);
    ce_sum += fwd.values.ce * n;
    future_sum += fwd.values.future * n;
    joint_sum += fwd.values.joint * n;
    tokens += fwd.values.token_count;
    const auto& lg = fwd.logits.data();
    const std::int64_t L = batch.tgt_len;
    const std::int64_t V = mcfg_.tgt_vocab;
    for (std::int64_t r = 0; r < batch.size * L; ++r) {
      if (batch.tgt_pad[static_cast<std::size_t>(r)]) continue;
      const double* row = lg.data() + r * V;
      std::int64_t best = 0;
      for (std::int64_t v = 1; v < V; ++v) {
        if (row[v] > row[best]) best = v;
      }
      if (static_cast<int>(best) == batch.tgt_out_ids[static_cast<std::size_t>(r)]) ++correct;
    }
  }
  out.loss.token_count = tokens;
  out.loss.ce = ce_sum / static_cast<double>(tokens);
  out.loss.future = future_sum / static_cast<double>(tokens);
  out.loss.joint = joint_sum / static_cast<double>(tokens);
  out.tf_acc = static_cast<double>(correct) / static_cast<double>(tokens);
  return out;
}

void Trainer::save_checkpoints(std::int64_t step, bool improved) {
  if (paths_.best_checkpoint.empty() && paths_.last_checkpoint.empty()) return;
  Checkpoint ckpt;
  ckpt.config = mcfg_;
  ckpt.vocab = vocab_;
  ckpt.params = params_;
  ckpt.step = step;
  ckpt.rng_state = dropout_rng_.save_state();
  ckpt.has_optimizer = true;
  ckpt.adam_beta1 = tcfg_.adam_beta1;
  ckpt.adam_beta2 = tcfg_.adam_beta2;
  ckpt.adam_eps = tcfg_.adam_eps;
  ckpt.adam_steps = opt_.steps_taken();
  ckpt.adam_slots = opt_.slots();
  if (!paths_.last_checkpoint.empty()) save_checkpoint(paths_.last_checkpoint, ckpt);
  if (improved && !paths_.best_checkpoint.empty()) save_checkpoint(paths_.best_checkpoint, ckpt);
}

TrainResult Trainer::run() {
  std::ofstream metrics;
  if (!paths_.metrics.empty()) {
    metrics.open(paths_.metrics, std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics log for writing: " + paths_.metrics);
    metrics << "# step\tlr\ttrain_ce\ttrain_future\ttrain_joint\tdev_ce\tdev_future\tdev_joint\t"
               "dev_tf_acc\tbest\n";
  }

  TrainResult result;
  double best = 0.0;
  LossBreakdown window;  // running sums of train losses since the last row
  std::int64_t window_steps = 0;

  const auto write_row = [&](std::int64_t step, const DevEval& dev, bool improved) {
    if (!metrics.is_open()) return;
    const double lr = step == 0 ? 0.0 : lr_schedule(step, mcfg_.d_model, tcfg_.warmup_steps);
    const double denom = window_steps > 0 ? static_cast<double>(window_steps) : 1.0;
    const double nan = std::nan("");
    metrics << step << '\t' << fmt_double(lr) << '\t'
            << fmt_double(window_steps ? window.ce / denom : nan) << '\t'
            << fmt_double(window_steps ? window.future / denom : nan) << '\t'
            << fmt_double(window_steps ? window.joint / denom : nan) << '\t'
            << fmt_double(dev.loss.ce) << '\t' << fmt_double(dev.loss.future) << '\t'
            << fmt_double(dev.loss.joint) << '\t' << fmt_double(dev.tf_acc) << '\t'
            << (improved ? 1 : 0) << '\n';
    metrics.flush();
    window = LossBreakdown{};
    window_steps = 0;
  };

  DevEval dev = evaluate_dev();
  result.step0_dev_future = dev.loss.future;
  best = dev.loss.joint;
  result.best_dev_joint = best;
  result.best_step = 0;
  write_row(0, dev, true);
  save_checkpoints(0, true);

  std::int64_t step = 0;
  for (std::uint64_t epoch = 0; step < tcfg_.max_steps; ++epoch) {
    const auto batches = make_batches(train_pairs_, vocab_, tcfg_.batch_size,
                                      mix_seed(seed_for(tcfg_.seed, "order"), epoch));
    for (const Batch& batch : batches) {
      ++step;
      const LossBreakdown values =
          train_step(params_, mcfg_, tcfg_, batch, opt_, step, dropout_rng_);
      window.ce += values.ce;
      window.future += values.future;
      window.joint += values.joint;
      ++window_steps;

      const bool last = step == tcfg_.max_steps;
      if (step % tcfg_.validate_every == 0 || last) {
        dev = evaluate_dev();
        const bool improved = dev.loss.joint < best;
        if (improved) {
          best = dev.loss.joint;
          result.best_dev_joint = best;
          result.best_step = step;
        }
        write_row(step, dev, improved);
        save_checkpoints(step, improved);
        if (tcfg_.early_stop_tf_acc >= 0.0 && dev.tf_acc >= tcfg_.early_stop_tf_acc) {
          result.stopped_early = true;
          result.steps_run = step;
          result.final_dev_joint = dev.loss.joint;
          result.final_dev_tf_acc = dev.tf_acc;
          return result;
        }
      }
      if (last) break;
    }
  }

  result.steps_run = step;
  result.final_dev_joint = dev.loss.joint;
  result.final_dev_tf_acc = dev.tf_acc;
  return result;
}

}  // namespace nmt
