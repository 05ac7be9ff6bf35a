#include "nmt/runconfig.hpp"

#include "nmt/data.hpp"
#include "nmt/error.hpp"
#include "nmt/textfmt.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace nmt {
namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw ConfigError("config key '" + key + "' expects a boolean (0/1/true/false), got '" +
                      value + "'");
}

std::int64_t parse_count(const std::string& key, const std::string& value) {
    try {
        return parse_int(value);
    } catch (const InputError&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
    }
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        return parse_double(value);
    } catch (const InputError&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
    }
}

struct KeyHandler {
    const char* key;
    const char* help;
    std::function<void(RunConfig&, const std::string&)> apply;
};

const std::vector<KeyHandler>& handlers() {
    auto num = [](const char* k, auto setter) {
        return [k, setter](RunConfig& c, const std::string& v) { setter(c, parse_real(k, v)); };
    };
    auto count = [](const char* k, auto setter) {
        return [k, setter](RunConfig& c, const std::string& v) { setter(c, parse_count(k, v)); };
    };
    auto flag = [](const char* k, auto setter) {
        return [k, setter](RunConfig& c, const std::string& v) { setter(c, parse_flag(k, v)); };
    };
    static const std::vector<KeyHandler> table = {
        {"variant", "model variant: baseline, model1 or model2",
         [](RunConfig& c, const std::string& v) { c.variant = v; }},
        {"d_model", "model width",
         count("d_model", [](RunConfig& c, std::int64_t v) { c.model.d_model = v; })},
        {"d_ffn", "feed-forward inner width",
         count("d_ffn", [](RunConfig& c, std::int64_t v) { c.model.d_ffn = v; })},
        {"n_heads", "attention heads",
         count("n_heads", [](RunConfig& c, std::int64_t v) { c.model.n_heads = static_cast<int>(v); })},
        {"n_layers", "encoder and decoder depth",
         count("n_layers", [](RunConfig& c, std::int64_t v) { c.model.n_layers = static_cast<int>(v); })},
        {"dropout", "residual/attention dropout rate",
         num("dropout", [](RunConfig& c, double v) { c.model.dropout = v; })},
        {"max_len", "hard sequence-length cap",
         count("max_len", [](RunConfig& c, std::int64_t v) { c.model.max_len = v; })},
        {"use_positions", "add sinusoidal positions to embeddings",
         flag("use_positions", [](RunConfig& c, bool v) { c.model.use_positions = v; })},
        {"tie_output", "reuse target embedding as output projection",
         flag("tie_output", [](RunConfig& c, bool v) { c.model.tie_output = v; })},
        {"future_cell_bias", "bias vectors inside the future-cost cell",
         flag("future_cell_bias", [](RunConfig& c, bool v) { c.model.future_cell_bias = v; })},
        {"separate_future_embedding", "own target embedding for the future cell",
         flag("separate_future_embedding",
              [](RunConfig& c, bool v) { c.model.separate_future_embedding = v; })},
        {"lambda", "weight of the future-cost loss term",
         [](RunConfig& c, const std::string& v) {
             c.train.lambda = parse_real("lambda", v);
             c.lambda_set = true;
         }},
        {"label_smoothing", "label smoothing epsilon",
         num("label_smoothing", [](RunConfig& c, double v) { c.train.label_smoothing = v; })},
        {"smooth_future", "apply label smoothing to the future loss",
         flag("smooth_future", [](RunConfig& c, bool v) { c.train.smooth_future = v; })},
        {"include_f0_loss", "score the sentence-level F0 against the first word",
         flag("include_f0_loss", [](RunConfig& c, bool v) { c.train.include_f0_loss = v; })},
        {"future_stop_grad", "detach decoder states entering the future cell",
         flag("future_stop_grad", [](RunConfig& c, bool v) { c.train.future_stop_grad = v; })},
        {"future_cell_dropout", "dropout inside the future cell",
         num("future_cell_dropout", [](RunConfig& c, double v) { c.train.future_cell_dropout = v; })},
        {"adam_beta1", "Adam first-moment decay",
         num("adam_beta1", [](RunConfig& c, double v) { c.train.adam_beta1 = v; })},
        {"adam_beta2", "Adam second-moment decay",
         num("adam_beta2", [](RunConfig& c, double v) { c.train.adam_beta2 = v; })},
        {"adam_eps", "Adam denominator epsilon",
         num("adam_eps", [](RunConfig& c, double v) { c.train.adam_eps = v; })},
        {"warmup_steps", "learning-rate warmup steps",
         count("warmup_steps", [](RunConfig& c, std::int64_t v) { c.train.warmup_steps = v; })},
        {"max_steps", "training steps",
         count("max_steps", [](RunConfig& c, std::int64_t v) { c.train.max_steps = v; })},
        {"batch_size", "sentence pairs per step",
         count("batch_size", [](RunConfig& c, std::int64_t v) { c.train.batch_size = v; })},
        {"validate_every", "steps between dev validations",
         count("validate_every", [](RunConfig& c, std::int64_t v) { c.train.validate_every = v; })},
        {"seed", "master seed for init, data, batching and dropout",
         [](RunConfig& c, const std::string& v) {
             c.train.seed = static_cast<std::uint64_t>(parse_count("seed", v));
         }},
        {"early_stop_tf_acc", "stop once dev teacher-forced accuracy reaches this (<0 off)",
         num("early_stop_tf_acc", [](RunConfig& c, double v) { c.train.early_stop_tf_acc = v; })},
        {"beam_size", "beam width for decoding",
         count("beam_size", [](RunConfig& c, std::int64_t v) { c.decode.beam_size = v; })},
        {"max_decode_len", "decode length cap",
         count("max_decode_len", [](RunConfig& c, std::int64_t v) { c.decode.max_decode_len = v; })},
        {"length_penalty", "length normalization exponent alpha",
         num("length_penalty", [](RunConfig& c, double v) { c.decode.length_penalty = v; })},
        {"task", "synthetic task: copy, reverse or map",
         [](RunConfig& c, const std::string& v) { c.task = v; }},
        {"train_pairs", "synthetic training sentences",
         count("train_pairs", [](RunConfig& c, std::int64_t v) { c.train_pairs = v; })},
        {"dev_pairs", "synthetic held-out sentences",
         count("dev_pairs", [](RunConfig& c, std::int64_t v) { c.dev_pairs = v; })},
        {"len_lo", "shortest synthetic sentence",
         count("len_lo", [](RunConfig& c, std::int64_t v) { c.len_lo = v; })},
        {"len_hi", "longest synthetic sentence",
         count("len_hi", [](RunConfig& c, std::int64_t v) { c.len_hi = v; })},
        {"symbols", "synthetic vocabulary size",
         count("symbols", [](RunConfig& c, std::int64_t v) { c.symbols = v; })},
        {"train_tsv", "training corpus file (source TAB target per line)",
         [](RunConfig& c, const std::string& v) { c.train_tsv = v; }},
        {"dev_tsv", "held-out corpus file",
         [](RunConfig& c, const std::string& v) { c.dev_tsv = v; }},
        {"out_dir", "artifact directory",
         [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
    };
    return table;
}

}  // namespace

Variant RunConfig::parsed_variant() const { return variant_from_name(variant); }

void RunConfig::validate() const {
    const Variant v = parsed_variant();
    if (v == Variant::Baseline && lambda_set)
        throw ConfigError("variant 'baseline' has no future-cost loss; lambda cannot be set");
    train.validate();
    decode.validate();
    if (train_tsv.empty()) {
        synth_task_from_name(task);
        if (train_pairs < 1) throw ConfigError("train_pairs must be >= 1");
        if (dev_pairs < 1) throw ConfigError("dev_pairs must be >= 1");
        if (len_lo < 1 || len_hi < len_lo)
            throw ConfigError("sentence length range requires 1 <= len_lo <= len_hi");
        if (symbols < 1) throw ConfigError("symbols must be >= 1");
        if (len_hi + 1 > model.max_len)
            throw ConfigError("len_hi " + std::to_string(len_hi) +
                              " does not fit max_len " + std::to_string(model.max_len) +
                              " with BOS/EOS");
    } else if (dev_tsv.empty()) {
        throw ConfigError("dev_tsv is required when train_tsv is given");
    }
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

const std::vector<RunKey>& run_config_keys() {
    static const std::vector<RunKey> keys = [] {
        std::vector<RunKey> out;
        for (const auto& h : handlers()) out.push_back({h.key, h.help});
        return out;
    }();
    return keys;
}

void apply_run_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& h : handlers()) {
        if (key == h.key) {
            h.apply(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name == "desk") return;  // the built-in defaults
    if (name == "paper") {
        cfg.model.d_model = 512;
        cfg.model.d_ffn = 2048;
        cfg.model.n_heads = 8;
        cfg.model.n_layers = 6;
        cfg.train.label_smoothing = 0.1;
        cfg.train.warmup_steps = 8000;
        return;
    }
    throw ConfigError("unknown preset '" + name + "' (desk, paper)");
}

void load_run_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not 'key = value': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        try {
            apply_run_key(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
        }
    }
}

}  // namespace nmt
