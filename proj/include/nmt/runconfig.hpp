#pragma once

#include "nmt/decode.hpp"
#include "nmt/model.hpp"
#include "nmt/train.hpp"
#include "nmt/vocab.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nmt {

// Everything a training or sweep run needs, assembled from defaults, an
// optional preset, an optional `key = value` config file, and command-line
// overrides, applied in that order.  Vocabulary sizes stay unset here; they
// are filled in from the corpus when a command builds its data.
struct RunConfig {
    std::string variant = "model1";
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;

    // Synthetic data source, used when train_tsv is empty.  One corpus of
    // train_pairs + dev_pairs sentences is drawn and split, so the dev set
    // shares the map task's bijection with the training set.
    std::string task = "copy";
    std::int64_t train_pairs = 2000;
    std::int64_t dev_pairs = 200;
    std::int64_t len_lo = 3;
    std::int64_t len_hi = 12;
    std::int64_t symbols = 20;

    // File corpora; when train_tsv is set, dev_tsv must be too.
    std::string train_tsv;
    std::string dev_tsv;

    // Artifact directory: metrics.tsv, best.ckpt, last.ckpt, sweep.tsv.
    std::string out_dir = "run";

    // Set when `lambda` came from a config file or flag rather than the
    // default; an explicit lambda is rejected for the baseline variant.
    bool lambda_set = false;

    Variant parsed_variant() const;
    void validate() const;  // ConfigError on violation
};

// One settable key, for binding config-file keys and CLI flags alike.
struct RunKey {
    const char* key;
    const char* help;
};

const std::vector<RunKey>& run_config_keys();

// Applies one key=value pair.  Unknown keys and unparsable values raise
// ConfigError naming the key.
void apply_run_key(RunConfig& cfg, const std::string& key, const std::string& value);

// `desk` is the built-in default scale; `paper` raises the model to the
// 512/2048 geometry with 8 heads, 6 layers and 8000 warmup steps.
void apply_preset(RunConfig& cfg, const std::string& name);

// Reads a flat config file: one `key = value` per line, `#` starts a
// comment, blank lines ignored.  IoError when unreadable, ConfigError on a
// malformed line (with its line number) or unknown key.
void load_run_config_file(RunConfig& cfg, const std::string& path);

}  // namespace nmt
