#include "nmt/vocab.hpp"

#include <algorithm>
#include <map>

namespace nmt {

Vocabulary::Vocabulary() {
  id_to_token_ = {kPadToken, kBosToken, kEosToken, kUnkToken};
  for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i) {
    token_to_id_[id_to_token_[static_cast<std::size_t>(i)]] = i;
  }
}

int Vocabulary::add_token(const std::string& token) {
  if (token.empty() || token.find_first_of(" \t\n\r") != std::string::npos) {
    throw InputError("vocabulary token must be non-empty and whitespace-free: \"" + token + "\"");
  }
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = size();
  token_to_id_[token] = id;
  id_to_token_.push_back(token);
  return id;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(token_of(id));
  return tokens;
}

std::vector<std::string> Vocabulary::to_lines() const { return id_to_token_; }

Vocabulary Vocabulary::from_lines(const std::vector<std::string>& lines) {
  Vocabulary v;
  if (lines.size() < 4 || lines[0] != kPadToken || lines[1] != kBosToken ||
      lines[2] != kEosToken || lines[3] != kUnkToken) {
    throw InputError("vocabulary listing must start with the four reserved tokens");
  }
  for (std::size_t i = 4; i < lines.size(); ++i) {
    const int id = v.add_token(lines[i]);
    if (id != static_cast<int>(i)) {
      throw InputError("duplicate vocabulary token \"" + lines[i] + "\"");
    }
  }
  return v;
}

Vocabulary build_vocab(const std::vector<SentencePair>& corpus, int min_count) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  if (min_count < 1) throw ContractError("build_vocab: min_count must be >= 1");
  std::map<std::string, std::int64_t> counts;
  for (const auto& pair : corpus) {
    for (const auto& t : pair.src) ++counts[t];
    for (const auto& t : pair.tgt) ++counts[t];
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [token, count] : ranked) {
    if (count >= min_count) v.add_token(token);
  }
  return v;
}

// ---- mini-BPE ---------------------------------------------------------------

namespace {

constexpr const char* kContinue = "@@";

// Splits a UTF-8 string into code points (invalid bytes pass through singly).
std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = 1;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

void merge_in_place(std::vector<std::string>& symbols, const std::string& left,
                    const std::string& right) {
  std::vector<std::string> merged;
  merged.reserve(symbols.size());
  std::size_t i = 0;
  while (i < symbols.size()) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      merged.push_back(left + right);
      i += 2;
    } else {
      merged.push_back(symbols[i]);
      ++i;
    }
  }
  symbols = std::move(merged);
}

}  // namespace

BpeModel BpeModel::learn(const std::vector<SentencePair>& corpus, int merge_count) {
  if (merge_count < 0) throw ContractError("learn_bpe: negative merge count");
  std::map<std::string, std::int64_t> word_freq;
  for (const auto& pair : corpus) {
    for (const auto& w : pair.src) ++word_freq[w];
    for (const auto& w : pair.tgt) ++word_freq[w];
  }
  std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
  words.reserve(word_freq.size());
  for (const auto& [w, freq] : word_freq) words.emplace_back(utf8_chars(w), freq);

  BpeModel model;
  for (int step = 0; step < merge_count; ++step) {
    std::map<std::pair<std::string, std::string>, std::int64_t> pair_counts;
    for (const auto& [symbols, freq] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += freq;
      }
    }
    if (pair_counts.empty()) break;
    // std::map iteration order makes the lexicographically smallest pair win ties
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    model.merges_.push_back(best->first);
    for (auto& [symbols, freq] : words) {
      (void)freq;
      merge_in_place(symbols, best->first.first, best->first.second);
    }
  }
  return model;
}

std::vector<std::string> BpeModel::segment_word(const std::string& word) const {
  std::vector<std::string> symbols = utf8_chars(word);
  for (const auto& [left, right] : merges_) merge_in_place(symbols, left, right);
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i] += kContinue;
  return symbols;
}

std::vector<std::string> BpeModel::segment(const std::vector<std::string>& words) const {
  std::vector<std::string> out;
  for (const auto& w : words) {
    auto parts = segment_word(w);
    out.insert(out.end(), parts.begin(), parts.end());
  }
  return out;
}

std::vector<SentencePair> BpeModel::apply(const std::vector<SentencePair>& corpus) const {
  std::vector<SentencePair> out;
  out.reserve(corpus.size());
  for (const auto& pair : corpus) {
    out.push_back({segment(pair.src), segment(pair.tgt)});
  }
  return out;
}

std::vector<std::string> join_bpe(const std::vector<std::string>& subwords) {
  std::vector<std::string> words;
  std::string current;
  for (const auto& s : subwords) {
    if (s.size() >= 2 && s.compare(s.size() - 2, 2, kContinue) == 0) {
      current += s.substr(0, s.size() - 2);
    } else {
      current += s;
      words.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(current);  // dangling continuation
  return words;
}

}  // namespace nmt
