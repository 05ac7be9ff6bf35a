#include "nmt/bleu.hpp"

#include "nmt/error.hpp"

#include <cmath>
#include <map>
#include <string>

namespace nmt {
namespace {

// Tokens come from whitespace splitting, so a newline can never appear
// inside one and works as an unambiguous joiner for n-gram keys.
std::map<std::string, std::int64_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::string, std::int64_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t j = 1; j < n; ++j) {
            key += '\n';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

BleuReport bleu4(const std::vector<std::vector<std::string>>& hyps,
                 const std::vector<std::vector<std::string>>& refs) {
    if (hyps.size() != refs.size()) {
        throw InputError("bleu4: " + std::to_string(hyps.size()) +
                         " hypotheses but " + std::to_string(refs.size()) +
                         " references");
    }
    if (hyps.empty()) throw InputError("bleu4: empty corpus");

    BleuReport rep;
    std::array<std::int64_t, 4> matched{};
    std::array<std::int64_t, 4> total{};
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        rep.hyp_length += static_cast<std::int64_t>(hyps[i].size());
        rep.ref_length += static_cast<std::int64_t>(refs[i].size());
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto hyp_counts = ngram_counts(hyps[i], n);
            if (hyp_counts.empty()) continue;
            const auto ref_counts = ngram_counts(refs[i], n);
            for (const auto& [key, count] : hyp_counts) {
                total[n - 1] += count;
                const auto it = ref_counts.find(key);
                if (it != ref_counts.end())
                    matched[n - 1] += std::min(count, it->second);
            }
        }
    }

    bool all_positive = true;
    for (int n = 0; n < 4; ++n) {
        rep.precisions[n] =
            total[n] > 0 ? static_cast<double>(matched[n]) /
                               static_cast<double>(total[n])
                         : 0.0;
        all_positive = all_positive && rep.precisions[n] > 0.0;
    }

    if (rep.hyp_length < rep.ref_length) {
        rep.brevity_penalty =
            rep.hyp_length == 0
                ? 0.0
                : std::exp(1.0 - static_cast<double>(rep.ref_length) /
                                     static_cast<double>(rep.hyp_length));
    }

    if (all_positive) {
        double log_sum = 0.0;
        for (int n = 0; n < 4; ++n) log_sum += std::log(rep.precisions[n]);
        rep.bleu = 100.0 * rep.brevity_penalty * std::exp(log_sum / 4.0);
    }
    return rep;
}

LengthBucketReport bucket_report(
    const std::vector<SentencePair>& pairs,
    const std::vector<std::vector<std::string>>& hypotheses) {
    if (pairs.size() != hypotheses.size()) {
        throw InputError("bucket_report: " + std::to_string(pairs.size()) +
                         " pairs but " + std::to_string(hypotheses.size()) +
                         " hypotheses");
    }

    LengthBucketReport rep;
    for (std::size_t b = 0; b < rep.buckets.size(); ++b) {
        rep.buckets[b].lo = static_cast<std::int64_t>(b) * 10;
        rep.buckets[b].hi =
            b + 1 < rep.buckets.size() ? static_cast<std::int64_t>(b + 1) * 10
                                       : -1;
    }

    std::array<std::vector<std::vector<std::string>>, 6> bucket_hyps;
    std::array<std::vector<std::vector<std::string>>, 6> bucket_refs;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto len = static_cast<std::int64_t>(pairs[i].src.size());
        std::size_t b = len <= 0 ? 0 : static_cast<std::size_t>((len - 1) / 10);
        b = std::min(b, rep.buckets.size() - 1);
        bucket_hyps[b].push_back(hypotheses[i]);
        bucket_refs[b].push_back(pairs[i].tgt);
    }

    for (std::size_t b = 0; b < rep.buckets.size(); ++b) {
        rep.buckets[b].count = static_cast<std::int64_t>(bucket_hyps[b].size());
        if (rep.buckets[b].count > 0) {
            rep.buckets[b].report = bleu4(bucket_hyps[b], bucket_refs[b]);
            rep.buckets[b].has_bleu = true;
        }
    }
    return rep;
}

}  // namespace nmt
