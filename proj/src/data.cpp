#include "nmt/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nmt {

SynthTask synth_task_from_name(const std::string& name) {
  if (name == "copy") return SynthTask::Copy;
  if (name == "reverse") return SynthTask::Reverse;
  if (name == "map") return SynthTask::Map;
  throw ConfigError("unknown synthetic task \"" + name + "\" (copy, reverse, map)");
}

namespace {

std::string symbol_name(int i) {
  if (i < 26) return std::string(1, static_cast<char>('a' + i));
  return "w" + std::to_string(i);
}

}  // namespace

std::vector<SentencePair> make_synthetic(SynthTask task, std::int64_t size, int len_lo,
                                         int len_hi, int symbol_count, std::uint64_t seed) {
  if (size < 1) throw ContractError("make_synthetic: corpus size must be >= 1");
  if (len_lo < 1 || len_hi > static_cast<int>(kMaxSeqLen) || len_lo > len_hi) {
    throw ContractError("make_synthetic: length range must lie within [1, " +
                        std::to_string(kMaxSeqLen) + "]");
  }
  if (symbol_count < 1) throw ContractError("make_synthetic: need at least one symbol");

  std::vector<std::string> symbols(static_cast<std::size_t>(symbol_count));
  for (int i = 0; i < symbol_count; ++i) symbols[static_cast<std::size_t>(i)] = symbol_name(i);

  Rng rng(seed);
  std::vector<int> mapping(static_cast<std::size_t>(symbol_count));
  std::iota(mapping.begin(), mapping.end(), 0);
  if (task == SynthTask::Map) rng.shuffle(mapping);

  std::vector<SentencePair> pairs;
  pairs.reserve(static_cast<std::size_t>(size));
  for (std::int64_t s = 0; s < size; ++s) {
    const auto len = static_cast<std::size_t>(rng.next_int(len_lo, len_hi));
    std::vector<std::size_t> draws(len);
    for (auto& d : draws) d = static_cast<std::size_t>(rng.next_int(0, symbol_count - 1));
    SentencePair pair;
    pair.src.reserve(len);
    pair.tgt.reserve(len);
    for (std::size_t d : draws) pair.src.push_back(symbols[d]);
    switch (task) {
      case SynthTask::Copy:
        pair.tgt = pair.src;
        break;
      case SynthTask::Reverse:
        pair.tgt.assign(pair.src.rbegin(), pair.src.rend());
        break;
      case SynthTask::Map:
        for (std::size_t d : draws) {
          pair.tgt.push_back(symbols[static_cast<std::size_t>(mapping[d])]);
        }
        break;
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

namespace {

Batch build_batch(const std::vector<const SentencePair*>& group, const Vocabulary& vocab) {
  Batch batch;
  batch.size = static_cast<std::int64_t>(group.size());
  for (const auto* pair : group) {
    const auto src_len = static_cast<std::int64_t>(pair->src.size());
    const auto tgt_len = static_cast<std::int64_t>(pair->tgt.size()) + 1;
    if (src_len > kMaxSeqLen || tgt_len > kMaxSeqLen) {
      throw InputError("sentence pair exceeds the maximum supported length of " +
                       std::to_string(kMaxSeqLen) + " tokens");
    }
    if (pair->src.empty() || pair->tgt.empty()) {
      throw InputError("sentence pair with an empty side cannot be batched");
    }
    batch.src_len = std::max(batch.src_len, src_len);
    batch.tgt_len = std::max(batch.tgt_len, tgt_len);
  }
  const std::int64_t b = batch.size, j_max = batch.src_len, l_max = batch.tgt_len;
  batch.src_ids.assign(static_cast<std::size_t>(b * j_max), Vocabulary::kPad);
  batch.tgt_in_ids.assign(static_cast<std::size_t>(b * l_max), Vocabulary::kPad);
  batch.tgt_out_ids.assign(static_cast<std::size_t>(b * l_max), Vocabulary::kPad);
  batch.src_pad.assign(static_cast<std::size_t>(b * j_max), 1);
  batch.tgt_pad.assign(static_cast<std::size_t>(b * l_max), 1);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const auto& pair = *group[static_cast<std::size_t>(bi)];
    const auto src = vocab.encode(pair.src);
    const auto tgt = vocab.encode(pair.tgt);
    for (std::size_t j = 0; j < src.size(); ++j) {
      batch.src_ids[static_cast<std::size_t>(bi * j_max) + j] = src[j];
      batch.src_pad[static_cast<std::size_t>(bi * j_max) + j] = 0;
    }
    const std::size_t row = static_cast<std::size_t>(bi * l_max);
    batch.tgt_in_ids[row] = Vocabulary::kBos;
    batch.tgt_pad[row] = 0;
    for (std::size_t i = 0; i < tgt.size(); ++i) {
      batch.tgt_in_ids[row + i + 1] = tgt[i];
      batch.tgt_out_ids[row + i] = tgt[i];
      batch.tgt_pad[row + i + 1] = 0;
    }
    batch.tgt_out_ids[row + tgt.size()] = Vocabulary::kEos;
  }
  batch.causal.assign(static_cast<std::size_t>(l_max * l_max), 0);
  for (std::int64_t i = 0; i < l_max; ++i) {
    for (std::int64_t j = i + 1; j < l_max; ++j) {
      batch.causal[static_cast<std::size_t>(i * l_max + j)] = 1;
    }
  }
  return batch;
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<SentencePair>& pairs, const Vocabulary& vocab,
                                std::int64_t batch_size, std::uint64_t seed) {
  if (batch_size < 1) throw ContractError("make_batches: batch_size must be >= 1");
  if (pairs.empty()) throw InputError("make_batches: empty pair list");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const SentencePair*> group;
    group.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) group.push_back(&pairs[order[i]]);
    batches.push_back(build_batch(group, vocab));
  }
  return batches;
}

Batch make_single_batch(const std::vector<int>& src_ids, const std::vector<int>& tgt_ids) {
  if (src_ids.empty() || tgt_ids.empty()) {
    throw InputError("make_single_batch: both sides must be non-empty");
  }
  if (static_cast<std::int64_t>(src_ids.size()) > kMaxSeqLen ||
      static_cast<std::int64_t>(tgt_ids.size()) + 1 > kMaxSeqLen) {
    throw InputError("make_single_batch: sequence exceeds the maximum supported length");
  }
  Batch batch;
  batch.size = 1;
  batch.src_len = static_cast<std::int64_t>(src_ids.size());
  batch.tgt_len = static_cast<std::int64_t>(tgt_ids.size()) + 1;
  batch.src_ids = src_ids;
  batch.src_pad.assign(src_ids.size(), 0);
  batch.tgt_in_ids.reserve(static_cast<std::size_t>(batch.tgt_len));
  batch.tgt_in_ids.push_back(Vocabulary::kBos);
  batch.tgt_in_ids.insert(batch.tgt_in_ids.end(), tgt_ids.begin(), tgt_ids.end());
  batch.tgt_out_ids = tgt_ids;
  batch.tgt_out_ids.push_back(Vocabulary::kEos);
  batch.tgt_pad.assign(static_cast<std::size_t>(batch.tgt_len), 0);
  batch.causal.assign(static_cast<std::size_t>(batch.tgt_len * batch.tgt_len), 0);
  for (std::int64_t i = 0; i < batch.tgt_len; ++i) {
    for (std::int64_t j = i + 1; j < batch.tgt_len; ++j) {
      batch.causal[static_cast<std::size_t>(i * batch.tgt_len + j)] = 1;
    }
  }
  return batch;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

std::vector<SentencePair> read_corpus_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file \"" + path + "\"");
  std::vector<SentencePair> pairs;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InputError("corpus line " + std::to_string(line_no) + " has no TAB separator");
    }
    SentencePair pair;
    pair.src = split_ws(line.substr(0, tab));
    pair.tgt = split_ws(line.substr(tab + 1));
    if (pair.src.empty() || pair.tgt.empty()) {
      throw InputError("corpus line " + std::to_string(line_no) + " has an empty side");
    }
    pairs.push_back(std::move(pair));
  }
  if (pairs.empty()) throw InputError("corpus file \"" + path + "\" contains no pairs");
  return pairs;
}

void write_corpus_tsv(const std::string& path, const std::vector<SentencePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open \"" + path + "\" for writing");
  for (const auto& pair : pairs) {
    for (std::size_t i = 0; i < pair.src.size(); ++i) {
      if (i) out << ' ';
      out << pair.src[i];
    }
    out << '\t';
    for (std::size_t i = 0; i < pair.tgt.size(); ++i) {
      if (i) out << ' ';
      out << pair.tgt[i];
    }
    out << '\n';
  }
  if (!out.good()) throw IoError("failed writing corpus to \"" + path + "\"");
}

}  // namespace nmt
