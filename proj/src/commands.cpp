#include "nmt/commands.hpp"

#include "nmt/checkpoint.hpp"
#include "nmt/error.hpp"
#include "nmt/rng.hpp"
#include "nmt/textfmt.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace nmt {
namespace {

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::vector<std::string> read_lines(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw IoError(std::string("cannot open ") + what + " file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(std::string("cannot write ") + what + " file: " + path);
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) text += ' ';
        text += tokens[i];
    }
    return text;
}

// Emitted ids -> surface text: drop the terminating EOS if present.
std::string render_greedy(const Vocabulary& vocab, std::vector<int> ids) {
    if (!ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
    return join_tokens(vocab.decode(ids));
}

// Beam tokens are BOS-prefixed and EOS-terminated when finished.
std::string render_beam(const Vocabulary& vocab, const BeamHypothesis& hyp) {
    std::vector<int> ids(hyp.tokens.begin() + 1, hyp.tokens.end());
    if (hyp.finished && !ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
    return join_tokens(vocab.decode(ids));
}

std::string one_line(const std::string& text) {
    std::string out = text;
    for (char& c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

std::string bucket_range(const LengthBucket& b) {
    if (b.hi < 0) return "(" + std::to_string(b.lo) + ",inf)";
    return "(" + std::to_string(b.lo) + "," + std::to_string(b.hi) + "]";
}

std::vector<std::vector<std::string>> tokenize_lines(const std::vector<std::string>& lines) {
    std::vector<std::vector<std::string>> out;
    out.reserve(lines.size());
    for (const auto& line : lines) out.push_back(split_ws(line));
    return out;
}

}  // namespace

RunData build_run_data(const RunConfig& cfg) {
    RunData data;
    if (!cfg.train_tsv.empty()) {
        data.train = read_corpus_tsv(cfg.train_tsv);
        data.dev = read_corpus_tsv(cfg.dev_tsv);
    } else {
        const SynthTask task = synth_task_from_name(cfg.task);
        auto pairs = make_synthetic(task, cfg.train_pairs + cfg.dev_pairs,
                                    static_cast<int>(cfg.len_lo), static_cast<int>(cfg.len_hi),
                                    static_cast<int>(cfg.symbols),
                                    seed_for(cfg.train.seed, "data"));
        data.dev.assign(pairs.begin() + cfg.train_pairs, pairs.end());
        pairs.resize(cfg.train_pairs);
        data.train = std::move(pairs);
    }
    data.vocab = build_vocab(data.train, 1);
    return data;
}

TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& out) {
    cfg.validate();
    RunData data = build_run_data(cfg);

    ModelConfig mcfg = cfg.model;
    mcfg.variant = cfg.parsed_variant();
    mcfg.src_vocab = data.vocab.size();
    mcfg.tgt_vocab = data.vocab.size();
    mcfg.validate();

    ensure_dir(cfg.out_dir);
    TrainOutcome outcome;
    outcome.metrics_path = cfg.out_dir + "/metrics.tsv";
    outcome.best_checkpoint = cfg.out_dir + "/best.ckpt";
    outcome.last_checkpoint = cfg.out_dir + "/last.ckpt";

    Trainer trainer(mcfg, cfg.train, data.vocab, data.train, data.dev,
                    {outcome.metrics_path, outcome.best_checkpoint, outcome.last_checkpoint});
    outcome.result = trainer.run();

    out << "variant\t" << cfg.variant << "\n";
    out << "train_sentences\t" << data.train.size() << "\n";
    out << "dev_sentences\t" << data.dev.size() << "\n";
    out << "vocab_size\t" << data.vocab.size() << "\n";
    out << "steps\t" << outcome.result.steps_run << "\n";
    out << "stopped_early\t" << (outcome.result.stopped_early ? 1 : 0) << "\n";
    out << "best_step\t" << outcome.result.best_step << "\n";
    out << "best_dev_joint\t" << fmt_double(outcome.result.best_dev_joint) << "\n";
    out << "final_dev_joint\t" << fmt_double(outcome.result.final_dev_joint) << "\n";
    out << "final_dev_tf_acc\t" << fmt_double(outcome.result.final_dev_tf_acc) << "\n";
    out << "metrics\t" << outcome.metrics_path << "\n";
    out << "checkpoint_best\t" << outcome.best_checkpoint << "\n";
    out << "checkpoint_last\t" << outcome.last_checkpoint << "\n";
    return outcome;
}

void cmd_translate(const TranslateArgs& args, std::ostream& out, std::ostream& warn) {
    args.decode.validate();
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const std::vector<std::string> lines = read_lines(args.input, "input");

    std::ofstream file_out;
    if (!args.output.empty()) file_out = open_out(args.output, "output");
    std::ostream& sink = args.output.empty() ? out : file_out;

    std::ofstream trace_out;
    if (!args.trace_path.empty()) trace_out = open_out(args.trace_path, "trace");

    std::set<std::string> warned;
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::vector<std::string> tokens = split_ws(lines[n]);
        if (tokens.empty()) {
            sink << "\n";
            continue;
        }
        for (const auto& t : tokens) {
            if (!ckpt.vocab.contains(t) && warned.insert(t).second)
                warn << "warning: token '" << t
                     << "' is not in the checkpoint vocabulary; using " << Vocabulary::kUnkToken << "\n";
        }
        const std::vector<int> ids = ckpt.vocab.encode(tokens);
        if (static_cast<std::int64_t>(ids.size()) > ckpt.config.max_len)
            throw InputError("input line " + std::to_string(n + 1) + " has " +
                             std::to_string(ids.size()) + " tokens but the model caps sequences at " +
                             std::to_string(ckpt.config.max_len));

        if (args.greedy) {
            const GreedyResult res = greedy_decode(ckpt.params, ids, args.decode);
            sink << render_greedy(ckpt.vocab, res.tokens) << "\n";
            continue;
        }

        BeamTrace trace;
        const std::vector<BeamHypothesis> ranked = beam_search(
            ckpt.params, ids, args.decode, args.trace_path.empty() ? nullptr : &trace);
        sink << render_beam(ckpt.vocab, ranked.front()) << "\n";

        if (!args.trace_path.empty()) {
            trace_out << "sentence " << n + 1 << "\n";
            for (const auto& rec : trace.steps) {
                for (std::size_t rank = 0; rank < rec.entries.size(); ++rank) {
                    const TraceEntry& e = rec.entries[rank];
                    std::vector<int> ids_out(e.tokens.begin() + 1, e.tokens.end());
                    trace_out << rec.step << "\t" << rank + 1 << "\t" << fmt_double(e.score)
                              << "\t" << fmt_double(e.penalized) << "\t" << (e.finished ? 1 : 0)
                              << "\t" << join_tokens(ckpt.vocab.decode(ids_out)) << "\n";
                }
            }
            trace_out << "\n";
        }
    }
}

BleuReport cmd_evaluate(const EvaluateArgs& args, std::ostream& out) {
    const auto hyp_lines = read_lines(args.hyp_path, "hypothesis");
    const auto ref_lines = read_lines(args.ref_path, "reference");
    if (hyp_lines.size() != ref_lines.size())
        throw InputError("hypothesis file has " + std::to_string(hyp_lines.size()) +
                         " lines but reference file has " + std::to_string(ref_lines.size()) +
                         " lines");
    const auto hyps = tokenize_lines(hyp_lines);
    const auto refs = tokenize_lines(ref_lines);
    const BleuReport rep = bleu4(hyps, refs);

    out << "BLEU = " << fmt_fixed(rep.bleu, 2);
    out << ", " << fmt_fixed(100.0 * rep.precisions[0], 1);
    for (int n = 1; n < 4; ++n) out << "/" << fmt_fixed(100.0 * rep.precisions[n], 1);
    out << " (BP=" << fmt_fixed(rep.brevity_penalty, 3) << ", hyp_len=" << rep.hyp_length
        << ", ref_len=" << rep.ref_length << ")\n";

    bool have_buckets = false;
    LengthBucketReport buckets;
    if (!args.src_path.empty()) {
        const auto src_lines = read_lines(args.src_path, "source");
        if (src_lines.size() != ref_lines.size())
            throw InputError("source file has " + std::to_string(src_lines.size()) +
                             " lines but reference file has " + std::to_string(ref_lines.size()) +
                             " lines");
        std::vector<SentencePair> pairs(src_lines.size());
        for (std::size_t i = 0; i < src_lines.size(); ++i) {
            pairs[i].src = split_ws(src_lines[i]);
            pairs[i].tgt = refs[i];
        }
        buckets = bucket_report(pairs, hyps);
        have_buckets = true;

        out << "source_len\tsentences\tbleu\n";
        for (const auto& b : buckets.buckets) {
            out << bucket_range(b) << "\t" << b.count << "\t";
            if (b.has_bleu)
                out << fmt_fixed(b.report.bleu, 2) << "\n";
            else
                out << "-\n";
        }
    }

    if (!args.report_path.empty()) {
        std::ofstream rep_out = open_out(args.report_path, "report");
        rep_out << "bleu\t" << fmt_double(rep.bleu) << "\n";
        for (int n = 0; n < 4; ++n)
            rep_out << "precision" << n + 1 << "\t" << fmt_double(rep.precisions[n]) << "\n";
        rep_out << "brevity_penalty\t" << fmt_double(rep.brevity_penalty) << "\n";
        rep_out << "hyp_length\t" << rep.hyp_length << "\n";
        rep_out << "ref_length\t" << rep.ref_length << "\n";
        if (have_buckets) {
            for (std::size_t i = 0; i < buckets.buckets.size(); ++i) {
                const LengthBucket& b = buckets.buckets[i];
                rep_out << "bucket" << i + 1 << "_range\t" << bucket_range(b) << "\n";
                rep_out << "bucket" << i + 1 << "_count\t" << b.count << "\n";
                rep_out << "bucket" << i + 1 << "_bleu\t"
                        << (b.has_bleu ? fmt_double(b.report.bleu) : std::string("null")) << "\n";
            }
        }
    }
    return rep;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::vector<double> lambdas,
                                std::ostream& out, std::ostream& progress) {
    if (lambdas.empty()) throw ConfigError("sweep needs at least one lambda value");
    for (double l : lambdas)
        if (!(l >= 0.0)) throw ConfigError("lambda values must be >= 0, got " + fmt_double(l));
    if (cfg.parsed_variant() == Variant::Baseline)
        throw ConfigError("sweep varies lambda; variant 'baseline' has no future-cost loss");
    std::sort(lambdas.begin(), lambdas.end());

    std::vector<SweepRow> rows;
    for (double lambda : lambdas) {
        RunConfig sub = cfg;
        sub.train.lambda = lambda;
        sub.lambda_set = true;
        sub.out_dir = cfg.out_dir + "/lambda-" + fmt_double(lambda);

        SweepRow row;
        row.lambda = lambda;
        try {
            progress << "lambda " << fmt_double(lambda) << ": training in " << sub.out_dir << "\n";
            const TrainOutcome trained = cmd_train(sub, progress);
            const Checkpoint best = load_checkpoint(trained.best_checkpoint);
            const RunData data = build_run_data(sub);

            std::vector<std::vector<std::string>> hyps, refs;
            hyps.reserve(data.dev.size());
            refs.reserve(data.dev.size());
            for (const auto& pair : data.dev) {
                const GreedyResult res =
                    greedy_decode(best.params, best.vocab.encode(pair.src), sub.decode);
                std::vector<int> ids = res.tokens;
                if (!ids.empty() && ids.back() == Vocabulary::kEos) ids.pop_back();
                hyps.push_back(best.vocab.decode(ids));
                refs.push_back(pair.tgt);
            }
            row.dev_bleu = bleu4(hyps, refs).bleu;
            row.best_dev_joint = trained.result.best_dev_joint;
            row.best_step = trained.result.best_step;
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = one_line(e.what());
        }
        rows.push_back(row);
    }

    std::ostringstream table;
    table << "lambda\tdev_bleu\tbest_dev_joint\tbest_step\tstatus\n";
    for (const auto& row : rows) {
        table << fmt_double(row.lambda) << "\t";
        if (row.ok) {
            table << fmt_fixed(row.dev_bleu, 2) << "\t" << fmt_double(row.best_dev_joint) << "\t"
                  << row.best_step << "\tok\n";
        } else {
            table << "-\t-\t-\tfailed: " << row.error << "\n";
        }
    }
    out << table.str();
    ensure_dir(cfg.out_dir);
    open_out(cfg.out_dir + "/sweep.tsv", "sweep table") << table.str();
    return rows;
}

}  // namespace nmt
