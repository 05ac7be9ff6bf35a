#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmt/rng.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

// Hard cap on source length and on target length including BOS/EOS.
inline constexpr std::int64_t kMaxSeqLen = 64;

// Padded token-id matrices for one training batch, suffix-padded. tgt_in is
// BOS-prefixed, tgt_out is the same sequence shifted left with EOS appended,
// so position i of tgt_out is the label for position i of tgt_in.
struct Batch {
  std::int64_t size = 0;     // B
  std::int64_t src_len = 0;  // J_max
  std::int64_t tgt_len = 0;  // I_max + 1, covering BOS..EOS
  std::vector<int> src_ids;      // [B, src_len]
  std::vector<int> tgt_in_ids;   // [B, tgt_len]
  std::vector<int> tgt_out_ids;  // [B, tgt_len]
  std::vector<std::uint8_t> src_pad;  // [B, src_len], 1 where padded
  std::vector<std::uint8_t> tgt_pad;  // [B, tgt_len], 1 where padded
  std::vector<std::uint8_t> causal;   // [tgt_len, tgt_len], 1 where j > i (blocked)
};

enum class SynthTask { Copy, Reverse, Map };

SynthTask synth_task_from_name(const std::string& name);

// Deterministic synthetic parallel corpus over `symbol_count` content tokens
// ("a".."z", then "w26", "w27", ...). The map task first draws a fixed
// bijection over the symbols, then draws sentences, so a longer corpus with
// the same seed extends a shorter one under the same mapping.
std::vector<SentencePair> make_synthetic(SynthTask task, std::int64_t size, int len_lo,
                                         int len_hi, int symbol_count, std::uint64_t seed);

// Shuffles pairs with the seed, then packs consecutive runs of batch_size.
std::vector<Batch> make_batches(const std::vector<SentencePair>& pairs, const Vocabulary& vocab,
                                std::int64_t batch_size, std::uint64_t seed);

// Single pre-encoded pair, unshuffled; used by decoding and validation.
Batch make_single_batch(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids);

std::vector<std::string> split_ws(const std::string& line);

// One pair per line, source TAB target, whitespace-tokenized UTF-8.
std::vector<SentencePair> read_corpus_tsv(const std::string& path);
void write_corpus_tsv(const std::string& path, const std::vector<SentencePair>& pairs);

}  // namespace nmt
