#pragma once

#include "nmt/data.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace nmt {

// Corpus-level BLEU over whitespace tokens, matching the common
// multi-bleu scoring convention: clipped n-gram counts pooled across the
// corpus for n = 1..4, geometric mean of the four precisions, and a
// brevity penalty of exp(1 - ref_len/hyp_len) when the hypothesis side
// is shorter.  Matching is case-sensitive and there is no smoothing: any
// precision of zero (including "no n-grams of that order exist") makes
// the score zero.
struct BleuReport {
    double bleu = 0.0;                    // 0..100
    std::array<double, 4> precisions{};   // p1..p4; 0 when no n-grams exist
    double brevity_penalty = 1.0;
    std::int64_t hyp_length = 0;          // pooled hypothesis tokens
    std::int64_t ref_length = 0;          // pooled reference tokens
};

// Scores `hyps[i]` against the single reference `refs[i]`.  Both are
// token sequences; empty sequences are allowed and contribute only to
// the length totals.  Throws InputError when the two corpora differ in
// size or are empty.
BleuReport bleu4(const std::vector<std::vector<std::string>>& hyps,
                 const std::vector<std::vector<std::string>>& refs);

// One row of the by-source-length breakdown.  A bucket covers source
// lengths in (lo, hi], with hi == -1 marking the open-ended tail.  Empty
// buckets keep count == 0 and has_bleu == false; `report` is meaningful
// only when has_bleu is set.
struct LengthBucket {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    std::int64_t count = 0;
    bool has_bleu = false;
    BleuReport report;
};

struct LengthBucketReport {
    std::array<LengthBucket, 6> buckets{};
};

// Splits the corpus into buckets by source-sentence token count with
// edges at 10, 20, 30, 40 and 50, scoring each hypothesis against the
// paired target.  Throws InputError when `hypotheses` does not line up
// with `pairs`.
LengthBucketReport bucket_report(
    const std::vector<SentencePair>& pairs,
    const std::vector<std::vector<std::string>>& hypotheses);

}  // namespace nmt
