// deskmt: train, translate, evaluate and lambda-sweep desk-scale translation
// models from one binary.  All failures exit nonzero with a single
// `error[<class>]: <message>` line on stderr; the class maps to the exit
// code (usage/config 2, input 3, io 4, anything internal 5).

#include "CLI11.hpp"

#include "nmt/commands.hpp"
#include "nmt/error.hpp"
#include "nmt/runconfig.hpp"
#include "nmt/textfmt.hpp"

#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

std::string flag_name(const std::string& key) {
    std::string flag = "--" + key;
    for (char& c : flag)
        if (c == '_') c = '-';
    return flag;
}

// Binds every run-config key as a string-valued flag on `sub`.  Values are
// kept as text and pushed through the same parser as config-file lines, so
// flags and file keys cannot drift apart.
void bind_run_flags(CLI::App* sub, std::map<std::string, std::string>& values) {
    for (const auto& key : nmt::run_config_keys())
        sub->add_option(flag_name(key.key), values[key.key], key.help);
}

nmt::RunConfig collect_run_config(CLI::App* sub, const std::string& preset,
                                  const std::string& config_path,
                                  const std::map<std::string, std::string>& values) {
    nmt::RunConfig cfg;
    if (!preset.empty()) nmt::apply_preset(cfg, preset);
    if (!config_path.empty()) nmt::load_run_config_file(cfg, config_path);
    for (const auto& key : nmt::run_config_keys()) {
        if (sub->count(flag_name(key.key)))
            nmt::apply_run_key(cfg, key.key, values.at(key.key));
    }
    return cfg;
}

std::vector<double> parse_lambda_list(const std::string& text) {
    std::vector<double> lambdas;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        std::size_t end = text.find(',', begin);
        if (end == std::string::npos) end = text.size();
        std::string item = text.substr(begin, end - begin);
        const std::size_t first = item.find_first_not_of(" \t");
        if (first == std::string::npos)
            throw nmt::ConfigError("empty entry in lambda list '" + text + "'");
        const std::size_t last = item.find_last_not_of(" \t");
        item = item.substr(first, last - first + 1);
        try {
            lambdas.push_back(nmt::parse_double(item));
        } catch (const nmt::InputError&) {
            throw nmt::ConfigError("lambda list entry '" + item + "' is not a number");
        }
        begin = end + 1;
    }
    return lambdas;
}

int exit_code_for(const std::string& tag) {
    if (tag == "config" || tag == "usage") return 2;
    if (tag == "input") return 3;
    if (tag == "io") return 4;
    return 5;
}

int fail(const std::string& tag, const std::string& message) {
    std::cerr << "error[" << tag << "]: " << message << std::endl;
    return exit_code_for(tag);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale neural translation with a learned future-cost signal"};
    app.require_subcommand(1);

    std::string preset, config_path;
    std::map<std::string, std::string> train_values, sweep_values;

    CLI::App* train = app.add_subcommand("train", "train a model and write checkpoints");
    train->add_option("--preset", preset, "configuration preset: desk or paper");
    train->add_option("--config", config_path, "key = value configuration file");
    bind_run_flags(train, train_values);

    CLI::App* translate = app.add_subcommand("translate", "decode a text file with a checkpoint");
    nmt::TranslateArgs targs;
    std::string beam_size_text, max_decode_text, penalty_text;
    translate->add_option("--checkpoint", targs.checkpoint, "model checkpoint")->required();
    translate->add_option("--input", targs.input, "source text, one sentence per line")->required();
    translate->add_option("--output", targs.output, "output file (default: stdout)");
    translate->add_option("--trace", targs.trace_path, "write the per-step beam leaderboard here");
    translate->add_flag("--greedy", targs.greedy, "argmax decoding instead of beam search");
    translate->add_option("--beam", beam_size_text, "beam width (default 5)");
    translate->add_option("--max-decode-len", max_decode_text, "decode length cap");
    translate->add_option("--length-penalty", penalty_text, "length normalization alpha");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score hypotheses against references");
    nmt::EvaluateArgs eargs;
    evaluate->add_option("--hyp", eargs.hyp_path, "hypothesis file")->required();
    evaluate->add_option("--ref", eargs.ref_path, "reference file")->required();
    evaluate->add_option("--src", eargs.src_path, "source file, adds the by-length table");
    evaluate->add_option("--report", eargs.report_path, "machine-readable key TAB value report");

    CLI::App* sweep = app.add_subcommand("sweep", "train one model per lambda and tabulate dev BLEU");
    std::string lambda_list;
    sweep->add_option("--preset", preset, "configuration preset: desk or paper");
    sweep->add_option("--config", config_path, "key = value configuration file");
    sweep->add_option("--lambdas", lambda_list, "comma-separated lambda values")->required();
    bind_run_flags(sweep, sweep_values);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error[usage]: " << e.what() << std::endl;
        return 2;
    }

    try {
        if (train->parsed()) {
            const nmt::RunConfig cfg = collect_run_config(train, preset, config_path, train_values);
            nmt::cmd_train(cfg, std::cout);
        } else if (translate->parsed()) {
            if (translate->count("--beam"))
                targs.decode.beam_size = nmt::parse_int(beam_size_text);
            if (translate->count("--max-decode-len"))
                targs.decode.max_decode_len = nmt::parse_int(max_decode_text);
            if (translate->count("--length-penalty"))
                targs.decode.length_penalty = nmt::parse_double(penalty_text);
            nmt::cmd_translate(targs, std::cout, std::cerr);
        } else if (evaluate->parsed()) {
            nmt::cmd_evaluate(eargs, std::cout);
        } else if (sweep->parsed()) {
            const nmt::RunConfig cfg = collect_run_config(sweep, preset, config_path, sweep_values);
            nmt::cmd_sweep(cfg, parse_lambda_list(lambda_list), std::cout, std::cerr);
        }
    } catch (const nmt::Error& e) {
        return fail(e.tag(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
