#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nmt/error.hpp"

namespace nmt {

struct SentencePair {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
};

// Token/id bijection with four reserved entries. EOS doubles as the source
// end token whose embedding seeds the initial future context.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kBosToken = "<s>";
  static constexpr const char* kEosToken = "</s>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary();

  // Returns the token's id, inserting it after the reserved block if new.
  int add_token(const std::string& token);

  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;  // IndexError when out of range
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  // One token per line in id order, for embedding into checkpoints.
  std::vector<std::string> to_lines() const;
  static Vocabulary from_lines(const std::vector<std::string>& lines);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Frequency-filtered vocabulary over both sides of a corpus. Tokens are
// ranked by (count desc, token asc) so ids are reproducible across platforms.
Vocabulary build_vocab(const std::vector<SentencePair>& corpus, int min_count);

// Greedy byte-pair encoder over whitespace tokens. Non-final subwords carry
// a trailing "@@" so translations can be rejoined with join_bpe.
class BpeModel {
 public:
  static BpeModel learn(const std::vector<SentencePair>& corpus, int merge_count);

  std::vector<std::string> segment_word(const std::string& word) const;
  std::vector<std::string> segment(const std::vector<std::string>& words) const;
  std::vector<SentencePair> apply(const std::vector<SentencePair>& corpus) const;

  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

 private:
  std::vector<std::pair<std::string, std::string>> merges_;
};

std::vector<std::string> join_bpe(const std::vector<std::string>& subwords);

}  // namespace nmt
