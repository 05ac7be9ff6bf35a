#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "nmt/data.hpp"
#include "nmt/vocab.hpp"

using namespace nmt;

TEST_CASE("vocabulary reserved ids and round trip") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.id_of("<pad>") == Vocabulary::kPad);
  CHECK(v.id_of("<s>") == Vocabulary::kBos);
  CHECK(v.id_of("</s>") == Vocabulary::kEos);
  CHECK(v.id_of("<unk>") == Vocabulary::kUnk);
  CHECK(v.id_of("missing") == Vocabulary::kUnk);

  const int a = v.add_token("alpha");
  CHECK(a == 4);
  CHECK(v.add_token("alpha") == 4);
  CHECK(v.token_of(4) == "alpha");
  CHECK_THROWS_AS(v.token_of(99), IndexError);
  CHECK_THROWS_AS(v.add_token("has space"), InputError);

  auto lines = v.to_lines();
  Vocabulary v2 = Vocabulary::from_lines(lines);
  CHECK(v2.size() == v.size());
  CHECK(v2.id_of("alpha") == 4);
  CHECK_THROWS_AS(Vocabulary::from_lines({"<pad>", "<s>"}), InputError);
}

TEST_CASE("build_vocab counts and filters") {
  std::vector<SentencePair> corpus = {
      {{"a", "b"}, {"a"}},
      {{"a"}, {"c"}},
  };
  Vocabulary v1 = build_vocab(corpus, 1);
  CHECK(v1.size() == 7);  // 4 reserved + a, b, c
  CHECK(v1.id_of("a") == 4);  // highest count first

  Vocabulary v2 = build_vocab(corpus, 2);
  CHECK(v2.size() == 5);
  CHECK(v2.id_of("b") == Vocabulary::kUnk);
  CHECK(v2.id_of("a") == 4);

  CHECK_THROWS_AS(build_vocab({}, 1), InputError);

  SUBCASE("encode/decode round trip over a generated corpus") {
    auto pairs = make_synthetic(SynthTask::Copy, 50, 1, 10, 12, 7);
    Vocabulary v = build_vocab(pairs, 1);
    for (const auto& pair : pairs) {
      CHECK(v.decode(v.encode(pair.src)) == pair.src);
      CHECK(v.decode(v.encode(pair.tgt)) == pair.tgt);
    }
  }
}

TEST_CASE("synthetic corpora") {
  SUBCASE("copy and reverse") {
    auto copy = make_synthetic(SynthTask::Copy, 20, 2, 6, 8, 3);
    for (const auto& pair : copy) CHECK(pair.tgt == pair.src);
    auto rev = make_synthetic(SynthTask::Reverse, 20, 2, 6, 8, 3);
    for (const auto& pair : rev) {
      std::vector<std::string> r(pair.src.rbegin(), pair.src.rend());
      CHECK(pair.tgt == r);
    }
  }

  SUBCASE("map applies one fixed bijection") {
    auto pairs = make_synthetic(SynthTask::Map, 200, 1, 8, 10, 11);
    std::map<std::string, std::string> seen;
    std::map<std::string, std::string> inverse;
    for (const auto& pair : pairs) {
      REQUIRE(pair.tgt.size() == pair.src.size());
      for (std::size_t i = 0; i < pair.src.size(); ++i) {
        auto [it, fresh] = seen.emplace(pair.src[i], pair.tgt[i]);
        if (!fresh) CHECK(it->second == pair.tgt[i]);
        auto [jt, fresh2] = inverse.emplace(pair.tgt[i], pair.src[i]);
        if (!fresh2) CHECK(jt->second == pair.src[i]);
      }
    }
  }

  SUBCASE("same seed extends the same stream") {
    auto small = make_synthetic(SynthTask::Map, 10, 2, 6, 9, 42);
    auto large = make_synthetic(SynthTask::Map, 25, 2, 6, 9, 42);
    for (std::size_t i = 0; i < small.size(); ++i) {
      CHECK(large[i].src == small[i].src);
      CHECK(large[i].tgt == small[i].tgt);
    }
  }

  SUBCASE("length and argument validation") {
    CHECK_THROWS_AS(make_synthetic(SynthTask::Copy, 5, 0, 4, 8, 1), ContractError);
    CHECK_THROWS_AS(make_synthetic(SynthTask::Copy, 5, 1, 65, 8, 1), ContractError);
    auto pairs = make_synthetic(SynthTask::Copy, 100, 3, 12, 20, 1);
    for (const auto& pair : pairs) {
      CHECK(pair.src.size() >= 3);
      CHECK(pair.src.size() <= 12);
    }
  }

  CHECK(synth_task_from_name("reverse") == SynthTask::Reverse);
  CHECK_THROWS_AS(synth_task_from_name("sort"), ConfigError);
}

TEST_CASE("batching pads, masks and shifts") {
  std::vector<SentencePair> pairs = {
      {{"a", "b", "c"}, {"c", "b", "a"}},
      {{"d"}, {"d", "d", "d", "d"}},
      {{"a", "a"}, {"b"}},
  };
  Vocabulary v = build_vocab(pairs, 1);
  auto batches = make_batches(pairs, v, 2, 5);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size == 2);
  CHECK(batches[1].size == 1);

  for (const auto& batch : batches) {
    for (std::int64_t b = 0; b < batch.size; ++b) {
      const auto row = static_cast<std::size_t>(b * batch.tgt_len);
      CHECK(batch.tgt_in_ids[row] == Vocabulary::kBos);
      for (std::int64_t i = 0; i + 1 < batch.tgt_len; ++i) {
        if (!batch.tgt_pad[row + static_cast<std::size_t>(i) + 1]) {
          // teacher-forcing shift: the label at i is the input at i+1
          CHECK(batch.tgt_out_ids[row + static_cast<std::size_t>(i)] ==
                batch.tgt_in_ids[row + static_cast<std::size_t>(i) + 1]);
        }
      }
      // the label row ends with EOS at the last unpadded position
      std::int64_t last = 0;
      for (std::int64_t i = 0; i < batch.tgt_len; ++i) {
        if (!batch.tgt_pad[row + static_cast<std::size_t>(i)]) last = i;
      }
      CHECK(batch.tgt_out_ids[row + static_cast<std::size_t>(last)] == Vocabulary::kEos);
    }
    for (std::int64_t i = 0; i < batch.tgt_len; ++i) {
      for (std::int64_t j = 0; j < batch.tgt_len; ++j) {
        CHECK(batch.causal[static_cast<std::size_t>(i * batch.tgt_len + j)] == (j > i ? 1 : 0));
      }
    }
  }

  SUBCASE("un-padding reproduces the original sequences") {
    auto corpus = make_synthetic(SynthTask::Reverse, 37, 1, 9, 6, 99);
    Vocabulary vc = build_vocab(corpus, 1);
    auto all = make_batches(corpus, vc, 8, 3);
    std::multiset<std::string> expected, got;
    for (const auto& pair : corpus) {
      std::string key;
      for (const auto& t : pair.src) key += t + " ";
      key += "|";
      for (const auto& t : pair.tgt) key += " " + t;
      expected.insert(key);
    }
    for (const auto& batch : all) {
      for (std::int64_t b = 0; b < batch.size; ++b) {
        std::string key;
        for (std::int64_t j = 0; j < batch.src_len; ++j) {
          const auto idx = static_cast<std::size_t>(b * batch.src_len + j);
          if (!batch.src_pad[idx]) key += vc.token_of(batch.src_ids[idx]) + " ";
        }
        key += "|";
        for (std::int64_t i = 0; i < batch.tgt_len; ++i) {
          const auto idx = static_cast<std::size_t>(b * batch.tgt_len + i);
          if (!batch.tgt_pad[idx] && batch.tgt_out_ids[idx] != Vocabulary::kEos) {
            key += " " + vc.token_of(batch.tgt_out_ids[idx]);
          }
        }
        got.insert(key);
      }
    }
    CHECK(expected == got);
  }

  SUBCASE("determinism and shuffling") {
    auto corpus = make_synthetic(SynthTask::Copy, 64, 1, 6, 6, 1);
    Vocabulary vc = build_vocab(corpus, 1);
    auto b1 = make_batches(corpus, vc, 8, 11);
    auto b2 = make_batches(corpus, vc, 8, 11);
    REQUIRE(b1.size() == b2.size());
    for (std::size_t i = 0; i < b1.size(); ++i) {
      CHECK(b1[i].src_ids == b2[i].src_ids);
      CHECK(b1[i].tgt_in_ids == b2[i].tgt_in_ids);
      CHECK(b1[i].tgt_out_ids == b2[i].tgt_out_ids);
    }
    auto b3 = make_batches(corpus, vc, 8, 12);
    bool any_diff = false;
    for (std::size_t i = 0; i < b1.size() && !any_diff; ++i) {
      any_diff = b1[i].src_ids != b3[i].src_ids;
    }
    CHECK(any_diff);
  }

  SUBCASE("oversized pair is rejected") {
    std::vector<SentencePair> big = {{std::vector<std::string>(65, "a"), {"a"}}};
    Vocabulary vb = build_vocab(big, 1);
    CHECK_THROWS_AS(make_batches(big, vb, 1, 0), InputError);
    CHECK_THROWS_AS(make_batches(pairs, v, 0, 0), ContractError);
  }
}

TEST_CASE("single-sentence batch") {
  Batch b = make_single_batch({5, 6, 7}, {8, 9});
  CHECK(b.size == 1);
  CHECK(b.src_len == 3);
  CHECK(b.tgt_len == 3);
  CHECK(b.tgt_in_ids == std::vector<int>{Vocabulary::kBos, 8, 9});
  CHECK(b.tgt_out_ids == std::vector<int>{8, 9, Vocabulary::kEos});
  CHECK_THROWS_AS(make_single_batch({}, {1}), InputError);
}

TEST_CASE("corpus TSV io") {
  const std::string path = "test_corpus_tmp.tsv";
  std::vector<SentencePair> pairs = {
      {{"a", "b"}, {"b", "a"}},
      {{"hello"}, {"world", "now"}},
  };
  write_corpus_tsv(path, pairs);
  auto loaded = read_corpus_tsv(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].src == pairs[0].src);
  CHECK(loaded[1].tgt == pairs[1].tgt);

  {
    std::ofstream bad(path);
    bad << "no tab here\n";
  }
  CHECK_THROWS_AS(read_corpus_tsv(path), InputError);
  {
    std::ofstream bad(path);
    bad << "left\t\n";
  }
  CHECK_THROWS_AS(read_corpus_tsv(path), InputError);
  CHECK_THROWS_AS(read_corpus_tsv("definitely_missing_file.tsv"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("mini byte-pair encoding") {
  std::vector<SentencePair> corpus = {
      {{"lowlow", "lower"}, {"lowest"}},
      {{"low"}, {"lower"}},
  };
  BpeModel model = BpeModel::learn(corpus, 8);
  CHECK(!model.merges().empty());

  SUBCASE("segmentation round-trips through join") {
    for (const auto& pair : corpus) {
      CHECK(join_bpe(model.segment(pair.src)) == pair.src);
      CHECK(join_bpe(model.segment(pair.tgt)) == pair.tgt);
    }
    // unseen word still round-trips, possibly as characters
    CHECK(join_bpe(model.segment_word("wool")) == std::vector<std::string>{"wool"});
  }

  SUBCASE("frequent pairs merge first") {
    // "lo" then "low" dominate this corpus
    CHECK(model.merges()[0] == std::pair<std::string, std::string>("l", "o"));
    CHECK(model.merges()[1] == std::pair<std::string, std::string>("lo", "w"));
    auto segs = model.segment_word("low");
    CHECK(segs == std::vector<std::string>{"low"});
  }

  SUBCASE("zero merges yields characters") {
    BpeModel none = BpeModel::learn(corpus, 0);
    auto segs = none.segment_word("ab");
    CHECK(segs == std::vector<std::string>{"a@@", "b"});
  }
}
