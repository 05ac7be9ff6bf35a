#pragma once

#include "nmt/bleu.hpp"
#include "nmt/decode.hpp"
#include "nmt/runconfig.hpp"
#include "nmt/train.hpp"
#include "nmt/vocab.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace nmt {

// The training and held-out corpora for a run, either both read from TSV
// files or drawn as one synthetic corpus and split so the dev tail shares
// the task's token mapping.  The vocabulary comes from the training side
// only; dev tokens outside it become UNK.
struct RunData {
    std::vector<SentencePair> train;
    std::vector<SentencePair> dev;
    Vocabulary vocab;
};

RunData build_run_data(const RunConfig& cfg);

struct TrainOutcome {
    TrainResult result;
    std::string metrics_path;
    std::string best_checkpoint;
    std::string last_checkpoint;
};

// Trains cfg.variant and writes metrics.tsv, best.ckpt and last.ckpt under
// cfg.out_dir.  `out` receives a short key TAB value summary.
TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& out);

struct TranslateArgs {
    std::string checkpoint;
    std::string input;
    std::string output;      // empty: write translations to `out`
    std::string trace_path;  // empty: no beam trace
    bool greedy = false;
    DecodeConfig decode;
};

// One translated line per input line, in order.  Tokens missing from the
// checkpoint vocabulary become UNK with a one-time warning on `warn`; an
// empty input line passes through untranslated.
void cmd_translate(const TranslateArgs& args, std::ostream& out, std::ostream& warn);

struct EvaluateArgs {
    std::string hyp_path;
    std::string ref_path;
    std::string src_path;     // optional: adds the by-source-length table
    std::string report_path;  // optional: machine-readable key TAB value file
};

// Prints the corpus score (and the length-bucket table when sources are
// given) to `out` and returns the corpus report.
BleuReport cmd_evaluate(const EvaluateArgs& args, std::ostream& out);

struct SweepRow {
    double lambda = 0.0;
    bool ok = false;
    double dev_bleu = 0.0;
    double best_dev_joint = 0.0;
    std::int64_t best_step = 0;
    std::string error;  // set when ok is false
};

// Trains one model per lambda with the shared seed, greedy-decodes the dev
// set from each best checkpoint, and emits a lambda-ascending TSV table to
// `out` and to <out_dir>/sweep.tsv.  A failed cell is recorded in its row
// and the sweep continues.  `progress` receives one line per cell.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::vector<double> lambdas,
                                std::ostream& out, std::ostream& progress);

}  // namespace nmt
